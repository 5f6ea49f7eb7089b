//! Run configuration: platform defaults deep-merged with a user TOML file.

use std::path::Path;

use adnode::control::EpisodeConfig;
use adnode::data::CollectConfig;
use adnode::envs::{EnvSchedule, Simulator, NON_SLIPPERY, SLIPPERY};
use adnode::training::{OnlineConfig, Phase1Config, Phase2Config};
use adnode::{Platform, Rng};
use anyhow::{bail, Context, Result};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSettings {
    pub runs: usize,
    /// Explicit initial states; when empty they are sampled per platform.
    pub starts: Vec<Vec<f64>>,
    /// Ground robot: lateral offset of the start from the goal.
    pub start_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeSettings {
    /// Test data collection; defaults to the training collection.
    pub test_collect: Option<CollectConfig>,
    pub test_seed: u64,
    pub max_horizon: usize,
    pub min_start: usize,
    pub lipschitz_pairs: usize,
}

/// Everything a pipeline stage needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub platform: Platform,
    pub seed: u64,
    pub simulator: Simulator,
    pub collect: CollectConfig,
    pub phase1: Phase1Config,
    pub phase2: Phase2Config,
    pub episode: EpisodeConfig,
    /// Environment used for closed-loop control and online learning.
    pub schedule: EnvSchedule,
    pub control: ControlSettings,
    pub online: OnlineConfig,
    pub analyze: AnalyzeSettings,
}

impl RunConfig {
    pub fn for_platform(p: Platform) -> Self {
        let schedule = match p {
            Platform::Msd => EnvSchedule::constant(vec![3.0]),
            Platform::DiffDrive => EnvSchedule::RadialContinuous {
                center: [0.0, 0.0],
                inner_radius: 0.0,
                outer_radius: 1.0,
                inner: SLIPPERY.to_vec(),
                outer: NON_SLIPPERY.to_vec(),
            },
            Platform::Quad => EnvSchedule::constant(vec![2.0, 0.0, 0.0]),
        };
        Self {
            platform: p,
            seed: 0,
            simulator: Simulator::default_for(p),
            collect: CollectConfig::default_for(p),
            phase1: Phase1Config::for_platform(p),
            phase2: Phase2Config::for_platform(p),
            episode: EpisodeConfig::for_platform(p),
            schedule,
            control: ControlSettings { runs: 5, starts: Vec::new(), start_distance: 1.0 },
            online: OnlineConfig::default(),
            analyze: AnalyzeSettings {
                test_collect: None,
                test_seed: 1_000_003,
                max_horizon: 20,
                min_start: 0,
                lipschitz_pairs: 2000,
            },
        }
    }

    /// Defaults for the platform named in `user` (ground robot if absent),
    /// with `user` merged on top.
    pub fn resolve(user: Table) -> Result<Self> {
        let platform: Platform = match user.get("platform") {
            Some(v) => v.clone().try_into().context("unknown platform")?,
            None => Platform::DiffDrive,
        };
        let mut base = Value::try_from(Self::for_platform(platform))?;
        merge(&mut base, Value::Table(user));
        let cfg: Self = base.try_into().context("invalid run configuration")?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let user = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing {}", p.display()))?
            }
            None => Table::new(),
        };
        Self::resolve(user)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    fn check(&self) -> Result<()> {
        let p = self.platform;
        let collect_platform = match &self.collect {
            CollectConfig::Msd(_) => Platform::Msd,
            CollectConfig::DiffDrive(_) => Platform::DiffDrive,
            CollectConfig::Quad(_) => Platform::Quad,
        };
        if self.simulator.platform() != p || collect_platform != p {
            bail!("simulator and collection sections must match platform {p}");
        }
        if let Some(bad) = self.control.starts.iter().find(|s| s.len() != p.state_dim()) {
            bail!("start state {bad:?} should have {} entries", p.state_dim());
        }
        Ok(())
    }

    /// Initial states for `runs` episodes: the configured list cycled, or
    /// the platform's start protocol.
    pub fn start_states(&self, runs: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        if !self.control.starts.is_empty() {
            return (0..runs).map(|i| self.control.starts[i % self.control.starts.len()].clone()).collect();
        }
        (0..runs).map(|i| sample_start(self.platform, i, self.control.start_distance, rng)).collect()
    }
}

/// Spring-mass: rest at a random position left of the target. Ground
/// robot: alternately left and right of the goal with a random lateral
/// offset and one of eight headings. Quadrotor: the vertices of a 0.4 m
/// cube around the goal, hovering level.
pub fn sample_start(p: Platform, i: usize, distance: f64, rng: &mut Rng) -> Vec<f64> {
    use std::f64::consts::FRAC_PI_4;
    match p {
        Platform::Msd => vec![rng.random_range(-1.0..0.5), 0.0],
        Platform::DiffDrive => {
            let side = if i % 2 == 0 { -1.0 } else { 1.0 };
            let heading = rng.random_range(0..8) as f64 * FRAC_PI_4;
            vec![side * distance, rng.random_range(-0.5..0.5), heading, 0.0, 0.0, 0.0]
        }
        Platform::Quad => {
            let v = i % 8;
            let c = |bit: usize| if v >> bit & 1 == 1 { 0.2 } else { -0.2 };
            vec![c(0), c(1), c(2), 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]
        }
    }
}

/// Tag keys of the internally tagged enums in the configuration.
const TAGS: [&str; 3] = ["platform", "kind", "arch"];

/// Recursively overlays `over` onto `base`. Tables merge key by key unless
/// they carry a different enum tag, in which case `over` replaces `base`.
pub fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if !retagged(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn retagged(base: &Value, over: &Value) -> bool {
    let (Value::Table(b), Value::Table(o)) = (base, over) else {
        return false;
    };
    TAGS.iter().any(|t| matches!((b.get(*t), o.get(*t)), (Some(x), Some(y)) if x != y && x.is_str()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn defaults_round_trip_through_toml() {
        for p in [Platform::Msd, Platform::DiffDrive, Platform::Quad] {
            let cfg = RunConfig::for_platform(p);
            let text = cfg.to_toml().unwrap();
            let back = RunConfig::resolve(text.parse().unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn user_values_override_nested_defaults() {
        let user: Table = r#"
            platform = "msd"
            seed = 9
            [phase1]
            epochs_per_stage = 2
            [collect]
            n_trajectories = 7
        "#
        .parse()
        .unwrap();
        let cfg = RunConfig::resolve(user).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.phase1.epochs_per_stage, 2);
        assert_eq!(cfg.phase1.batch_size, Phase1Config::for_platform(Platform::Msd).batch_size);
        match cfg.collect {
            CollectConfig::Msd(c) => assert_eq!(c.n_trajectories, 7),
            other => panic!("wrong collection {other:?}"),
        }
    }

    #[test]
    fn a_new_enum_tag_replaces_the_default_variant() {
        let user: Table = r#"
            platform = "msd"
            [schedule]
            kind = "mass_switch"
            initial = 5.0
            switch_step = 10
            final = 1.0
        "#
        .parse()
        .unwrap();
        let cfg = RunConfig::resolve(user).unwrap();
        assert_eq!(cfg.schedule, EnvSchedule::MassSwitch { initial: 5.0, switch_step: 10, r#final: 1.0 });
    }

    #[test]
    fn mismatched_sections_are_rejected() {
        let user: Table = "platform = \"msd\"\n[simulator]\nplatform = \"quad\"\n".parse().unwrap();
        assert!(RunConfig::resolve(user).is_err());
    }

    #[test]
    fn quad_starts_cover_the_cube() {
        let cfg = RunConfig::for_platform(Platform::Quad);
        let starts = cfg.start_states(8, &mut Rng::seed_from_u64(0));
        let mut corners: Vec<_> = starts.iter().map(|s| [s[0] > 0.0, s[1] > 0.0, s[2] > 0.0]).collect();
        corners.sort();
        corners.dedup();
        assert_eq!(corners.len(), 8);
    }
}
