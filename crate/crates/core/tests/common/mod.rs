//! Shared fixtures for the integration tests: desk-scale training pipelines
//! with pinned epoch counts.
#![allow(dead_code)]

use std::time::Instant;

use adnode::data::{collect, CollectConfig, Dataset, MsdCollect};
use adnode::envs::Simulator;
use adnode::models::{Checkpoint, DynamicsKind};
use adnode::training::{train_phase1, train_phase2, ExpSchedule, Phase1Config, Phase2Config};
use adnode::{Platform, Rng};
use rand::SeedableRng;

pub fn log(msg: impl AsRef<str>) {
    if std::env::var_os("ADNODE_VERBOSE").is_some() {
        eprintln!("    {}", msg.as_ref());
    }
}

pub fn msd_dataset(cfg: MsdCollect, seed: u64) -> Dataset {
    let sim = Simulator::default_for(Platform::Msd);
    collect(&CollectConfig::Msd(cfg), &sim, &mut Rng::seed_from_u64(seed)).unwrap()
}

/// Phase 1 settings for the spring-mass acceptance runs: full curriculum,
/// pinned epochs, no early stop.
pub fn msd_phase1(kind: DynamicsKind, horizons: usize, epochs: usize) -> Phase1Config {
    let mut cfg = Phase1Config::for_platform(Platform::Msd);
    cfg.model.kind = kind;
    cfg.horizons = (1..=horizons).collect();
    cfg.epochs_per_stage = epochs;
    cfg.patience = 0;
    cfg.lr = ExpSchedule { start: 1e-3, end: 1e-4 };
    cfg
}

pub fn msd_phase2(epochs: usize) -> Phase2Config {
    Phase2Config { epochs, ..Phase2Config::for_platform(Platform::Msd) }
}

/// Reuses a checkpoint saved under `$ADNODE_CACHE/<name>.ckpt` when that
/// variable is set (development only; acceptance runs train from scratch).
pub fn cached(name: &str, train: impl FnOnce() -> Checkpoint) -> Checkpoint {
    let Some(dir) = std::env::var_os("ADNODE_CACHE") else {
        return train();
    };
    let path = std::path::Path::new(&dir).join(format!("{name}.ckpt"));
    if let Ok(ck) = Checkpoint::load(&path) {
        return ck;
    }
    let ck = train();
    std::fs::create_dir_all(&dir).unwrap();
    ck.save(&path).unwrap();
    ck
}

pub struct Trained {
    pub phase1: Checkpoint,
    pub phase2: Checkpoint,
    pub train: Dataset,
}

/// Collect, Phase 1, Phase 2 on the spring-mass system.
pub fn msd_pipeline(kind: DynamicsKind, collect_cfg: MsdCollect, p1: &Phase1Config, p2: &Phase2Config, seed: u64) -> Trained {
    let t = Instant::now();
    let train = msd_dataset(collect_cfg, seed);
    let dt = Simulator::default_for(Platform::Msd).dt();
    let out1 = train_phase1(&train, p1, dt, seed).unwrap();
    log(format!(
        "msd {kind:?} phase 1: {:.1}s, final val {:?}",
        t.elapsed().as_secs_f64(),
        out1.curve.last().map(|r| r.val_loss)
    ));
    let out2 = train_phase2(&train, &out1.checkpoint, p2, seed).unwrap();
    log(format!(
        "msd {kind:?} phase 2: {:.1}s, R2 {:?}",
        t.elapsed().as_secs_f64(),
        out2.curve.last().and_then(|r| r.metric)
    ));
    Trained { phase1: out1.checkpoint, phase2: out2.checkpoint, train }
}

pub fn dataset(cfg: CollectConfig, seed: u64) -> Dataset {
    let p = match &cfg {
        CollectConfig::Msd(_) => Platform::Msd,
        CollectConfig::DiffDrive(_) => Platform::DiffDrive,
        CollectConfig::Quad(_) => Platform::Quad,
    };
    collect(&cfg, &Simulator::default_for(p), &mut Rng::seed_from_u64(seed)).unwrap()
}

/// Phase 1 then Phase 2 on `train`; returns the Phase 2 checkpoint (which
/// also carries the Phase 1 networks).
pub fn two_phase(train: &Dataset, p1: &Phase1Config, p2: &Phase2Config, seed: u64) -> Checkpoint {
    let t = Instant::now();
    let dt = Simulator::default_for(train.platform).dt();
    let out1 = train_phase1(train, p1, dt, seed).unwrap();
    log(format!(
        "{} {:?} phase 1: {:.1}s, final val {:?}",
        train.platform,
        p1.model.kind,
        t.elapsed().as_secs_f64(),
        out1.curve.last().map(|r| r.val_loss)
    ));
    let out2 = train_phase2(train, &out1.checkpoint, p2, seed).unwrap();
    log(format!(
        "{} {:?} phase 2: {:.1}s, R2 {:?}",
        train.platform,
        p1.model.kind,
        t.elapsed().as_secs_f64(),
        out2.curve.last().and_then(|r| r.metric)
    ));
    out2.checkpoint
}
