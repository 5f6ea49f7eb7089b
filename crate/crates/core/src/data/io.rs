//! Dataset file: a magic/version line, a JSON schema line, then one
//! little-endian f64 row per transition:
//! `[step_index, x (n), u (m), e (p), x_next (n)]`.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Trajectory, Transition};
use crate::platform::Platform;

const MAGIC: &str = "adnode-dataset";
pub const DATASET_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    len: usize,
    schedule_id: String,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Schema {
    platform: Platform,
    state_dim: usize,
    action_dim: usize,
    env_dim: usize,
    trajectories: Vec<TrajectoryHeader>,
}

impl Dataset {
    pub fn to_bytes(&self) -> Result<Vec<u8>, DataError> {
        self.validate()?;
        let p = self.platform;
        let schema = Schema {
            platform: p,
            state_dim: p.state_dim(),
            action_dim: p.action_dim(),
            env_dim: p.env_dim(),
            trajectories: self
                .trajectories
                .iter()
                .map(|t| TrajectoryHeader {
                    len: t.len(),
                    schedule_id: t.schedule_id.clone(),
                    seed: t.seed,
                })
                .collect(),
        };
        let mut out = Vec::new();
        writeln!(out, "{MAGIC} {DATASET_VERSION}")?;
        writeln!(
            out,
            "{}",
            serde_json::to_string(&schema).map_err(|e| DataError::Format(e.to_string()))?
        )?;
        for t in self.transitions() {
            let row = std::iter::once(t.step_index as f64)
                .chain(t.x.iter().copied())
                .chain(t.u.iter().copied())
                .chain(t.e.iter().copied())
                .chain(t.x_next.iter().copied());
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::read(BufReader::new(fs::File::open(path)?))
    }

    pub fn read(mut r: impl BufRead) -> Result<Self, DataError> {
        let bad = |m: String| DataError::Format(m);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut it = line.split_whitespace();
        if it.next() != Some(MAGIC) {
            return Err(bad("not a dataset file".into()));
        }
        match it.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(DATASET_VERSION) => {}
            Some(v) => return Err(bad(format!("unsupported dataset version {v}"))),
            None => return Err(bad("missing version".into())),
        }
        line.clear();
        r.read_line(&mut line)?;
        let schema: Schema = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let p = schema.platform;
        if (schema.state_dim, schema.action_dim, schema.env_dim) != (p.state_dim(), p.action_dim(), p.env_dim()) {
            return Err(bad(format!("column widths do not match platform {p}")));
        }
        let (n, m, e) = (p.state_dim(), p.action_dim(), p.env_dim());
        let width = 1 + 2 * n + m + e;
        let mut buf = vec![0u8; width * 8];
        let mut ds = Dataset::new(p);
        for th in schema.trajectories {
            let mut traj = Trajectory::new(p, th.schedule_id, th.seed);
            for _ in 0..th.len {
                r.read_exact(&mut buf).map_err(|_| bad("truncated data block".into()))?;
                let row: Vec<f64> = buf
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                traj.transitions.push(Transition {
                    step_index: row[0] as usize,
                    x: row[1..1 + n].to_vec(),
                    u: row[1 + n..1 + n + m].to_vec(),
                    e: row[1 + n + m..1 + n + m + e].to_vec(),
                    x_next: row[1 + n + m + e..].to_vec(),
                });
            }
            ds.trajectories.push(traj);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after data".into()));
        }
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{collect_quad, QuadCollect};
    use crate::envs::Simulator;
    use crate::Rng;
    use rand::SeedableRng;

    fn sample() -> Dataset {
        let cfg = QuadCollect { n_trajectories: 3, steps: 7, ..Default::default() };
        collect_quad(&cfg, &Simulator::default_for(Platform::Quad), &mut Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let ds = sample();
        let back = Dataset::read(&ds.to_bytes().unwrap()[..]).unwrap();
        assert_eq!(back, ds);
        let bits = |d: &Dataset| d.transitions().flat_map(|t| t.x_next.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
    }

    #[test]
    fn version_is_checked() {
        let bytes = sample().to_bytes().unwrap();
        let mut bumped = b"adnode-dataset 2".to_vec();
        bumped.extend_from_slice(&bytes[b"adnode-dataset 1".len()..]);
        assert!(matches!(Dataset::read(&bumped[..]), Err(DataError::Format(_))));
    }

    #[test]
    fn truncation_is_detected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Dataset::read(&bytes[..bytes.len() - 8]).is_err());
    }
}
