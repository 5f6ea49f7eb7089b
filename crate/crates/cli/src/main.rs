use clap::Parser;

fn main() -> anyhow::Result<()> {
    adnode_cli::run(adnode_cli::Cli::parse())
}
