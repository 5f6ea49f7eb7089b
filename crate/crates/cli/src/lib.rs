//! The `adnode` pipeline: collect data, train both phases, run closed-loop
//! control or online learning, and analyse prediction error.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use adnode::analysis::{
    discrete_bound, error_curve, estimate_lipschitz, ErrorCurve, LatentSource, LearnedPredictor, LipschitzEstimate,
    SimulatorPredictor,
};
use adnode::control::{run_episode, summarize, ControlError, ControlMode, EpisodeLog, EpisodeSummary};
use adnode::data::{collect, Dataset, DATASET_VERSION};
use adnode::envs::Env;
use adnode::models::{Checkpoint, CHECKPOINT_VERSION};
use adnode::training::{run_online, train_phase1, train_phase2, write_curve_csv, CurveRow};
use adnode::Rng;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng as _, SeedableRng};
use serde::Serialize;
use serde_json::json;

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "adnode", version, about = "Adaptive neural-ODE dynamics with MPPI control")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration, merged over the platform defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run directory for every artefact.
    #[arg(long, global = true, default_value = "runs/latest")]
    pub out: PathBuf,
    /// Leave wall-clock times out of the summaries so reruns are
    /// byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Roll out the simulator with random actions and save `dataset.bin`.
    Collect,
    /// Train the state net and environment encoder.
    TrainPhase1 {
        /// Defaults to `<out>/dataset.bin`.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train the adaptive module against the frozen Phase 1 model.
    TrainPhase2 {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to `<out>/phase1.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Closed-loop MPPI episodes.
    Control {
        /// Defaults to `<out>/phase2.ckpt`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Control mode; repeat to compare several (defaults to the
        /// configured one).
        #[arg(long = "mode", value_parser = parse_mode)]
        modes: Vec<ControlMode>,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Online learning of the adaptive module while controlling.
    Online {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Open-loop prediction-error curves and error-bound report.
    Analyze {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test dataset; collected from the configuration when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Evaluate the ground-truth simulator instead of a model.
        #[arg(long)]
        oracle: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Collect => "collect",
            Command::TrainPhase1 { .. } => "train-phase1",
            Command::TrainPhase2 { .. } => "train-phase2",
            Command::Control { .. } => "control",
            Command::Online { .. } => "online",
            Command::Analyze { .. } => "analyze",
        }
    }
}

fn parse_mode(s: &str) -> Result<ControlMode, String> {
    ControlMode::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown mode {s:?}; expected one of {}", mode_names()))
}

fn mode_names() -> String {
    ControlMode::ALL.map(ControlMode::name).join(", ")
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.resolved.toml"), cfg.to_toml()?)?;
    write_json(
        &out.join("run.json"),
        &json!({
            "command": cli.command.name(),
            "seed": cfg.seed,
            "platform": cfg.platform,
            "adnode_version": env!("CARGO_PKG_VERSION"),
            "checkpoint_version": CHECKPOINT_VERSION,
            "dataset_version": DATASET_VERSION,
            "deterministic": cli.deterministic,
        }),
    )?;
    let ctx = Ctx { cfg, out: out.clone(), timed: !cli.deterministic };
    match cli.command {
        Command::Collect => ctx.collect(),
        Command::TrainPhase1 { data } => ctx.phase1(data),
        Command::TrainPhase2 { data, checkpoint } => ctx.phase2(data, checkpoint),
        Command::Control { checkpoint, modes, runs } => ctx.control(checkpoint, modes, runs),
        Command::Online { checkpoint } => ctx.online(checkpoint),
        Command::Analyze { checkpoint, data, oracle } => ctx.analyze(checkpoint, data, oracle),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

struct Ctx {
    cfg: RunConfig,
    out: PathBuf,
    timed: bool,
}

#[derive(Serialize)]
struct EpisodeRecord {
    start: Vec<f64>,
    #[serde(flatten)]
    summary: EpisodeSummary,
    adapt_calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    failure: Option<String>,
}

#[derive(Serialize)]
struct ModeReport {
    mode: ControlMode,
    success_rate: f64,
    mean_rmse: f64,
    mean_final_distance: f64,
    failures: usize,
    episodes: Vec<EpisodeRecord>,
}

impl Ctx {
    fn path(&self, given: Option<PathBuf>, default: &str) -> PathBuf {
        given.unwrap_or_else(|| self.out.join(default))
    }

    fn rng(&self) -> Rng {
        Rng::seed_from_u64(self.cfg.seed)
    }

    fn load_data(&self, path: Option<PathBuf>) -> Result<Dataset> {
        let path = self.path(path, "dataset.bin");
        let ds = Dataset::load(&path).with_context(|| format!("loading dataset {}", path.display()))?;
        if ds.platform != self.cfg.platform {
            bail!("dataset is for {}, configuration is for {}", ds.platform, self.cfg.platform);
        }
        Ok(ds)
    }

    fn load_checkpoint(&self, path: Option<PathBuf>, default: &str) -> Result<Checkpoint> {
        let path = self.path(path, default);
        Checkpoint::load_for(&path, self.cfg.platform).with_context(|| format!("loading checkpoint {}", path.display()))
    }

    fn env(&self) -> Result<Env> {
        Ok(Env::new(self.cfg.simulator.clone(), self.cfg.schedule.clone())?)
    }

    fn collect(&self) -> Result<()> {
        let ds = collect(&self.cfg.collect, &self.cfg.simulator, &mut self.rng())?;
        ds.save(&self.out.join("dataset.bin"))?;
        write_json(
            &self.out.join("collect_summary.json"),
            &json!({ "trajectories": ds.trajectories.len(), "transitions": ds.num_transitions() }),
        )
    }

    fn write_curve(&self, rows: &[CurveRow], stem: &str) -> Result<()> {
        write_curve_csv(rows, &self.out.join(format!("{stem}_curve.csv")))?;
        let last = rows.last();
        write_json(
            &self.out.join(format!("{stem}_summary.json")),
            &json!({
                "epochs": rows.len(),
                "final_train_loss": last.map(|r| r.train_loss),
                "final_val_loss": last.map(|r| r.val_loss),
                "final_metric": last.and_then(|r| r.metric),
            }),
        )
    }

    fn phase1(&self, data: Option<PathBuf>) -> Result<()> {
        let ds = self.load_data(data)?;
        let out = train_phase1(&ds, &self.cfg.phase1, self.cfg.simulator.dt(), self.cfg.seed)?;
        out.checkpoint.save(&self.out.join("phase1.ckpt"))?;
        self.write_curve(&out.curve, "phase1")
    }

    fn phase2(&self, data: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<()> {
        let ds = self.load_data(data)?;
        let p1 = self.load_checkpoint(checkpoint, "phase1.ckpt")?;
        let out = train_phase2(&ds, &p1, &self.cfg.phase2, self.cfg.seed)?;
        out.checkpoint.save(&self.out.join("phase2.ckpt"))?;
        self.write_curve(&out.curve, "phase2")
    }

    fn control(&self, checkpoint: Option<PathBuf>, modes: Vec<ControlMode>, runs: Option<usize>) -> Result<()> {
        let ck = self.load_checkpoint(checkpoint, "phase2.ckpt")?;
        let modes = if modes.is_empty() { vec![self.cfg.episode.mode] } else { modes };
        let mut rng = self.rng();
        let starts = self.cfg.start_states(runs.unwrap_or(self.cfg.control.runs), &mut rng);
        let seeds: Vec<u64> = starts.iter().map(|_| rng.random()).collect();
        let dir = self.out.join("episodes");
        fs::create_dir_all(&dir)?;
        let mut reports = Vec::new();
        for mode in modes {
            let mut ep_cfg = self.cfg.episode.clone();
            ep_cfg.mode = mode;
            let mut episodes = Vec::new();
            for (i, (x0, seed)) in starts.iter().zip(&seeds).enumerate() {
                let mut env = self.env()?;
                let (log, failure) = match run_episode(&mut env, x0.clone(), &ck, &ep_cfg, *seed) {
                    Ok(log) => (log, None),
                    Err(ControlError::Simulator { log, source, step }) => {
                        (*log, Some(format!("simulator failed at step {step}: {source}")))
                    }
                    Err(e) => return Err(e).with_context(|| format!("{} episode {i}", mode.name())),
                };
                self.write_episode(&log, &dir.join(format!("{}_{i:03}.csv", mode.name())))?;
                episodes.push(EpisodeRecord {
                    start: x0.clone(),
                    summary: summarize(&log, &ep_cfg, self.timed),
                    adapt_calls: log.adapt_calls,
                    failure,
                });
            }
            reports.push(mode_report(mode, episodes));
        }
        write_json(&self.out.join("control_summary.json"), &reports)
    }

    fn write_episode(&self, log: &EpisodeLog, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(path)?);
        log.write_csv(&mut f)?;
        Ok(())
    }

    fn online(&self, checkpoint: Option<PathBuf>) -> Result<()> {
        let ck = self.load_checkpoint(checkpoint, "phase2.ckpt")?;
        let mut rng = self.rng();
        let starts = self.cfg.start_states(self.cfg.control.runs.max(1), &mut rng);
        let mut env = self.env()?;
        let report = run_online(&mut env, &starts, &ck, &self.cfg.episode, &self.cfg.online, rng.random())?;
        report.checkpoint.save(&self.out.join("online.ckpt"))?;
        let dir = self.out.join("episodes");
        fs::create_dir_all(&dir)?;
        let mut episodes = Vec::new();
        for (i, ep) in report.episodes.iter().enumerate() {
            self.write_episode(&ep.log, &dir.join(format!("online_{i:03}.csv")))?;
            let mut summary = ep.summary.clone();
            if !self.timed {
                summary.runtime_s = None;
            }
            episodes.push(json!({
                "summary": summary,
                "explored_steps": ep.explored_steps,
                "discarded": ep.discarded,
            }));
        }
        write_json(
            &self.out.join("online_summary.json"),
            &json!({
                "updates": report.updates,
                "final_update_loss": report.update_losses.last(),
                "episodes": episodes,
            }),
        )
    }

    fn analyze(&self, checkpoint: Option<PathBuf>, data: Option<PathBuf>, oracle: bool) -> Result<()> {
        let test = match data {
            Some(p) => self.load_data(Some(p))?,
            None => {
                let c = self.cfg.analyze.test_collect.as_ref().unwrap_or(&self.cfg.collect);
                collect(c, &self.cfg.simulator, &mut Rng::seed_from_u64(self.cfg.analyze.test_seed))?
            }
        };
        let a = &self.cfg.analyze;
        if oracle {
            let curve = error_curve(&SimulatorPredictor(self.cfg.simulator.clone()), &test, a.max_horizon, a.min_start)?;
            return self.write_error_curve(&curve, "oracle");
        }
        let ck = self.load_checkpoint(checkpoint, "phase2.ckpt")?;
        let privileged = LearnedPredictor { checkpoint: &ck, source: LatentSource::Privileged };
        let curve = error_curve(&privileged, &test, a.max_horizon, a.min_start)?;
        self.write_error_curve(&curve, "privileged")?;
        let mut report = serde_json::Map::new();
        report.insert("privileged".into(), serde_json::to_value(&curve)?);
        if ck.adaptive.is_some() {
            let adaptive = LearnedPredictor { checkpoint: &ck, source: LatentSource::Adaptive };
            let curve = error_curve(&adaptive, &test, a.max_horizon, a.min_start)?;
            self.write_error_curve(&curve, "adaptive")?;
            report.insert("adaptive".into(), serde_json::to_value(&curve)?);
        }
        let bound = self.bound_report(&ck, &test)?;
        report.insert("bound".into(), serde_json::to_value(&bound)?);
        write_json(&self.out.join("analysis.json"), &report)
    }

    fn write_error_curve(&self, curve: &ErrorCurve, name: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(fs::File::create(self.out.join(format!("error_curve_{name}.csv")))?);
        curve.write_csv(&mut f)?;
        Ok(())
    }

    /// Discrete error-propagation bound with a sampled Lipschitz constant of
    /// the one-step model map (actions and latent held at their test-set
    /// means) and the largest one-step error with privileged latents,
    /// against the largest full-state error measured at each horizon.
    fn bound_report(&self, ck: &Checkpoint, test: &Dataset) -> Result<BoundReport> {
        let (dt, solver) = (ck.meta.dt, ck.meta.solver);
        let p = self.cfg.platform;
        let mean = |f: &dyn Fn(&adnode::data::Transition) -> &[f64], w: usize| -> Vec<f64> {
            let mut m = vec![0.0; w];
            let n = test.num_transitions().max(1) as f64;
            for t in test.transitions() {
                m.iter_mut().zip(f(t)).for_each(|(a, b)| *a += b / n);
            }
            m
        };
        let u_bar = mean(&|t| &t.u, p.action_dim());
        let z_bar = ck.encoder.encode(&mean(&|t| &t.e, p.env_dim()))?;
        let states: Vec<&[f64]> = test.transitions().map(|t| t.x.as_slice()).collect();
        if states.is_empty() {
            bail!("empty test set");
        }
        let step = |x: &[f64]| ck.state_net.predict_next(x, &u_bar, &z_bar, dt, solver).unwrap_or_else(|_| vec![f64::NAN]);
        let mut sample = |r: &mut Rng| states[r.random_range(0..states.len())].to_vec();
        let lipschitz = estimate_lipschitz(
            &step,
            &mut sample,
            self.cfg.analyze.lipschitz_pairs,
            "test-set states, mean action and latent",
            &mut self.rng(),
        )?;

        let h_max = self.cfg.analyze.max_horizon;
        let mut eps = 0.0f64;
        let mut measured = vec![0.0f64; h_max];
        let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        for traj in &test.trajectories {
            for t in &traj.transitions {
                let pred = ck.state_net.predict_next(&t.x, &t.u, &ck.encoder.encode(&t.e)?, dt, solver)?;
                eps = eps.max(norm(&pred, &t.x_next));
            }
            if traj.len() < h_max {
                continue;
            }
            for k0 in 0..=traj.len() - h_max {
                let mut x = traj.state(k0).to_vec();
                for (i, t) in traj.transitions[k0..k0 + h_max].iter().enumerate() {
                    x = ck.state_net.predict_next(&x, &t.u, &ck.encoder.encode(&t.e)?, dt, solver)?;
                    measured[i] = measured[i].max(norm(&x, traj.state(k0 + i + 1)));
                }
            }
        }
        let bound = (1..=h_max).map(|h| discrete_bound(eps, lipschitz.l, h)).collect::<Result<Vec<_>, _>>()?;
        Ok(BoundReport { eps, lipschitz, bound, measured_max_error: measured })
    }
}

#[derive(Serialize)]
struct BoundReport {
    eps: f64,
    lipschitz: LipschitzEstimate,
    bound: Vec<f64>,
    measured_max_error: Vec<f64>,
}

fn mode_report(mode: ControlMode, episodes: Vec<EpisodeRecord>) -> ModeReport {
    let n = episodes.len().max(1) as f64;
    let ok: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.failure.is_none()).collect();
    let m = ok.len().max(1) as f64;
    ModeReport {
        mode,
        success_rate: episodes.iter().filter(|e| e.failure.is_none() && e.summary.success).count() as f64 / n,
        mean_rmse: ok.iter().map(|e| e.summary.rmse).sum::<f64>() / m,
        mean_final_distance: ok.iter().map(|e| e.summary.final_distance).sum::<f64>() / m,
        failures: episodes.len() - ok.len(),
        episodes,
    }
}
