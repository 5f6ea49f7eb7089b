use rand::seq::IndexedRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Trajectory, Transition};
use crate::envs::{Env, EnvSchedule, Simulator, NON_SLIPPERY, SLIPPERY};
use crate::platform::Platform;
use crate::Rng;

/// Grid sweep for the ground robot: every grid pose on every surface, one
/// random action held for the whole trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffDriveCollect {
    pub grid: usize,
    pub headings: usize,
    /// Grid spans `[-half_width, half_width]^2`.
    pub half_width: f64,
    pub surfaces: Vec<[f64; 3]>,
    pub steps: usize,
    pub forward_range: [f64; 2],
    pub turn_range: [f64; 2],
}

impl Default for DiffDriveCollect {
    fn default() -> Self {
        Self {
            grid: 11,
            headings: 8,
            half_width: 1.0,
            surfaces: vec![SLIPPERY, NON_SLIPPERY],
            steps: 50,
            forward_range: [0.0, 0.5],
            turn_range: [-1.5, 1.5],
        }
    }
}

/// Random initial states and i.i.d. random actions under a constant wind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadCollect {
    pub n_trajectories: usize,
    pub steps: usize,
    pub wind_range: [f64; 2],
    /// Thrust bounds as multiples of `m g`.
    pub thrust_range: [f64; 2],
    pub rate_bound: f64,
    pub position_bound: f64,
    pub velocity_bound: f64,
    /// Maximum initial tilt angle (rad).
    pub tilt_bound: f64,
}

impl Default for QuadCollect {
    fn default() -> Self {
        Self {
            n_trajectories: 2000,
            steps: 50,
            wind_range: [-1.0, 1.0],
            thrust_range: [0.5, 1.5],
            rate_bound: 1.0,
            position_bound: 1.0,
            velocity_bound: 1.0,
            tilt_bound: 0.3,
        }
    }
}

/// Random masses, random initial states, piecewise-constant random forces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsdCollect {
    pub n_trajectories: usize,
    pub steps: usize,
    /// Either a list of masses drawn from uniformly or, when empty,
    /// `mass_range`.
    pub masses: Vec<f64>,
    pub mass_range: [f64; 2],
    pub force_bound: f64,
    /// Control steps each random force is held for.
    pub hold: usize,
    pub position_bound: f64,
    pub velocity_bound: f64,
}

impl Default for MsdCollect {
    fn default() -> Self {
        Self {
            n_trajectories: 400,
            steps: 50,
            masses: Vec::new(),
            mass_range: [1.0, 5.0],
            force_bound: 5.0,
            hold: 5,
            position_bound: 2.0,
            velocity_bound: 1.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "platform", rename_all = "snake_case")]
pub enum CollectConfig {
    Msd(MsdCollect),
    DiffDrive(DiffDriveCollect),
    Quad(QuadCollect),
}

impl CollectConfig {
    pub fn default_for(platform: Platform) -> Self {
        match platform {
            Platform::Msd => CollectConfig::Msd(MsdCollect::default()),
            Platform::DiffDrive => CollectConfig::DiffDrive(DiffDriveCollect::default()),
            Platform::Quad => CollectConfig::Quad(QuadCollect::default()),
        }
    }
}

pub fn collect(cfg: &CollectConfig, sim: &Simulator, rng: &mut Rng) -> Result<Dataset, DataError> {
    match cfg {
        CollectConfig::Msd(c) => collect_msd(c, sim, rng),
        CollectConfig::DiffDrive(c) => collect_diffdrive(c, sim, rng),
        CollectConfig::Quad(c) => collect_quad(c, sim, rng),
    }
}

/// One episode description; rolled out independently with its own seed.
struct Job {
    x0: Vec<f64>,
    schedule: EnvSchedule,
    schedule_id: String,
    seed: u64,
}

fn uniform(rng: &mut Rng, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

/// Runs `jobs` in parallel. Each episode draws actions from its own
/// generator seeded by the job, so the result is independent of thread
/// scheduling.
fn run_jobs<M, P>(sim: &Simulator, jobs: Vec<Job>, steps: usize, make_policy: M) -> Result<Dataset, DataError>
where
    M: Fn() -> P + Sync,
    P: FnMut(&mut Rng, usize, &[f64]) -> Vec<f64>,
{
    let platform = sim.platform();
    let trajectories: Result<Vec<Trajectory>, DataError> = jobs
        .into_par_iter()
        .map(|job| {
            let mut env = Env::new(sim.clone(), job.schedule)?;
            env.reset(job.x0)?;
            let mut rng = Rng::seed_from_u64(job.seed);
            let mut traj = Trajectory::new(platform, job.schedule_id, job.seed);
            let mut policy = make_policy();
            for k in 0..steps {
                let x = env.state().to_vec();
                let u = policy(&mut rng, k, &x);
                let out = env.step(&u, &mut rng)?;
                traj.transitions.push(Transition {
                    x,
                    u,
                    e: out.e,
                    x_next: out.x_next,
                    step_index: k,
                });
            }
            Ok(traj)
        })
        .collect();
    Ok(Dataset {
        platform,
        trajectories: trajectories?,
    })
}

fn check_platform(sim: &Simulator, p: Platform) -> Result<(), DataError> {
    if sim.platform() != p {
        return Err(DataError::Contract(format!(
            "collection for {p} given a {} simulator",
            sim.platform()
        )));
    }
    Ok(())
}

pub fn collect_diffdrive(cfg: &DiffDriveCollect, sim: &Simulator, rng: &mut Rng) -> Result<Dataset, DataError> {
    check_platform(sim, Platform::DiffDrive)?;
    if cfg.surfaces.is_empty() {
        return Err(DataError::Contract("no training surfaces".into()));
    }
    let coords: Vec<f64> = if cfg.grid <= 1 {
        vec![0.0]
    } else {
        (0..cfg.grid)
            .map(|i| -cfg.half_width + 2.0 * cfg.half_width * i as f64 / (cfg.grid - 1) as f64)
            .collect()
    };
    let headings = cfg.headings.max(1);
    let mut jobs = Vec::new();
    for (si, surface) in cfg.surfaces.iter().enumerate() {
        for &x in &coords {
            for &y in &coords {
                for h in 0..headings {
                    let theta = -std::f64::consts::PI + std::f64::consts::TAU * h as f64 / headings as f64;
                    jobs.push(Job {
                        x0: vec![x, y, theta, 0.0, 0.0, 0.0],
                        schedule: EnvSchedule::constant(surface.to_vec()),
                        schedule_id: format!("surface{si}"),
                        seed: rng.next_u64(),
                    });
                }
            }
        }
    }
    let (fr, tr) = (cfg.forward_range, cfg.turn_range);
    run_jobs(sim, jobs, cfg.steps, || {
        let mut held: Option<Vec<f64>> = None;
        move |rng: &mut Rng, _k: usize, _x: &[f64]| {
            held.get_or_insert_with(|| vec![uniform(rng, fr), uniform(rng, tr)])
                .clone()
        }
    })
}

pub fn collect_quad(cfg: &QuadCollect, sim: &Simulator, rng: &mut Rng) -> Result<Dataset, DataError> {
    check_platform(sim, Platform::Quad)?;
    let hover = match sim {
        Simulator::Quad(q) => q.hover_thrust(),
        _ => unreachable!(),
    };
    let mut jobs = Vec::with_capacity(cfg.n_trajectories);
    for _ in 0..cfg.n_trajectories {
        let pb = cfg.position_bound;
        let vb = cfg.velocity_bound;
        let mut x0: Vec<f64> = (0..3).map(|_| uniform(rng, [-pb, pb])).collect();
        x0.extend((0..3).map(|_| uniform(rng, [-vb, vb])));
        let axis = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0f64];
        let angle = uniform(rng, [0.0, cfg.tilt_bound]);
        let q = if axis[0].hypot(axis[1]) > 1e-9 {
            crate::numerics::quat::from_axis_angle(axis, angle)
        } else {
            crate::numerics::quat::IDENTITY
        };
        let yaw = crate::numerics::quat::from_axis_angle([0.0, 0.0, 1.0], uniform(rng, [-0.5, 0.5]));
        x0.extend(crate::numerics::quat::mul(&yaw, &q));
        let wind = uniform(rng, cfg.wind_range);
        jobs.push(Job {
            x0,
            schedule: EnvSchedule::constant(vec![wind, 0.0, 0.0]),
            schedule_id: format!("wind{wind:.3}"),
            seed: rng.next_u64(),
        });
    }
    let (tr, rb) = (cfg.thrust_range, cfg.rate_bound);
    run_jobs(sim, jobs, cfg.steps, || {
        move |rng: &mut Rng, _k: usize, _x: &[f64]| vec![
            hover * uniform(rng, tr),
            uniform(rng, [-rb, rb]),
            uniform(rng, [-rb, rb]),
            uniform(rng, [-rb, rb]),
        ]
    })
}

pub fn collect_msd(cfg: &MsdCollect, sim: &Simulator, rng: &mut Rng) -> Result<Dataset, DataError> {
    check_platform(sim, Platform::Msd)?;
    if cfg.masses.iter().any(|m| *m <= 0.0) || cfg.mass_range[0] <= 0.0 {
        return Err(DataError::Contract("masses must be positive".into()));
    }
    let mut jobs = Vec::with_capacity(cfg.n_trajectories);
    for _ in 0..cfg.n_trajectories {
        // Drawn rather than cycled so that every-k-th validation splits
        // still see all masses.
        let mass = match cfg.masses.choose(rng) {
            Some(m) => *m,
            None => uniform(rng, cfg.mass_range),
        };
        let x0 = vec![
            uniform(rng, [-cfg.position_bound, cfg.position_bound]),
            uniform(rng, [-cfg.velocity_bound, cfg.velocity_bound]),
        ];
        jobs.push(Job {
            x0,
            schedule: EnvSchedule::constant(vec![mass]),
            schedule_id: format!("mass{mass:.4}"),
            seed: rng.next_u64(),
        });
    }
    let fb = cfg.force_bound;
    let hold = cfg.hold.max(1);
    run_jobs(sim, jobs, cfg.steps, || {
        let mut force = 0.0;
        move |rng: &mut Rng, k: usize, _x: &[f64]| {
            if k % hold == 0 {
                force = uniform(rng, [-fb, fb]);
            }
            vec![force]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_grid_point_single_surface() {
        let cfg = DiffDriveCollect {
            grid: 1,
            headings: 1,
            surfaces: vec![SLIPPERY],
            ..Default::default()
        };
        let sim = Simulator::default_for(Platform::DiffDrive);
        let ds = collect_diffdrive(&cfg, &sim, &mut Rng::seed_from_u64(1)).unwrap();
        assert_eq!(ds.trajectories.len(), 1);
        assert_eq!(ds.num_transitions(), 50);
        let u0 = &ds.trajectories[0].transitions[0].u;
        assert!(ds.transitions().all(|t| &t.u == u0));
        ds.validate().unwrap();
    }

    #[test]
    fn collection_is_reproducible() {
        let cfg = MsdCollect { n_trajectories: 6, ..Default::default() };
        let sim = Simulator::default_for(Platform::Msd);
        let a = collect_msd(&cfg, &sim, &mut Rng::seed_from_u64(3)).unwrap();
        let b = collect_msd(&cfg, &sim, &mut Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        a.validate().unwrap();
    }

    #[test]
    fn quad_wind_within_range() {
        let cfg = QuadCollect { n_trajectories: 20, ..Default::default() };
        let sim = Simulator::default_for(Platform::Quad);
        let ds = collect_quad(&cfg, &sim, &mut Rng::seed_from_u64(2)).unwrap();
        assert!(ds.transitions().all(|t| t.e[0].abs() <= 1.0 && t.e[1] == 0.0));
        let empty = collect_quad(&QuadCollect { n_trajectories: 0, ..cfg }, &sim, &mut Rng::seed_from_u64(2)).unwrap();
        assert_eq!(empty.num_transitions(), 0);
    }

    #[test]
    fn wrong_simulator_rejected() {
        let sim = Simulator::default_for(Platform::Quad);
        assert!(collect_msd(&MsdCollect::default(), &sim, &mut Rng::seed_from_u64(0)).is_err());
    }
}
