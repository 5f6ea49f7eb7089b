use std::collections::hash_map::DefaultHasher;
use std::fs;
use std::hash::Hasher;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::encoder::{AdaptiveModule, AdaptiveSpec, EnvEncoder};
use super::mlp::{Mlp, MlpSpec};
use super::normalize::Normalizer;
use super::state_net::{DynamicsKind, StateNet};
use super::ModelError;
use crate::numerics::{SolverKind, Tensor};
use crate::platform::Platform;

const MAGIC: &str = "adnode-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Fingerprint of a parameter set (bit-exact).
pub fn param_hash<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> u64 {
    let mut h = DefaultHasher::new();
    for p in params {
        for &d in p.shape() {
            h.write_usize(d);
        }
        for v in p.values() {
            h.write_u64(v.to_bits());
        }
    }
    h.finish()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: u32,
    pub epoch: usize,
    pub seed: u64,
    /// Control period the model was trained for.
    pub dt: f64,
    /// Integrator used for rollouts of the state net.
    pub solver: SolverKind,
}

impl Default for CheckpointMeta {
    fn default() -> Self {
        Self {
            phase: 1,
            epoch: 0,
            seed: 0,
            dt: 0.05,
            solver: SolverKind::ForwardEuler,
        }
    }
}

/// Everything needed to rebuild a trained model without retraining.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub state_net: StateNet,
    pub encoder: EnvEncoder,
    pub adaptive: Option<AdaptiveModule>,
}

#[derive(Serialize, Deserialize)]
struct AdaptiveHeader {
    history_len: usize,
    spec: AdaptiveSpec,
    state_norm: Normalizer,
    action_norm: Normalizer,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    platform: Platform,
    meta: CheckpointMeta,
    kind: DynamicsKind,
    latent_dim: usize,
    state_spec: MlpSpec,
    state_norm: Normalizer,
    action_norm: Normalizer,
    output_norm: Normalizer,
    encoder_spec: MlpSpec,
    env_norm: Normalizer,
    adaptive: Option<AdaptiveHeader>,
    /// Shapes of the data blocks, in file order: state net, encoder,
    /// then adaptive module.
    blocks: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn platform(&self) -> Platform {
        self.state_net.platform
    }

    pub fn all_params(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.state_net.params().to_vec();
        p.extend(self.encoder.params().iter().cloned());
        if let Some(am) = &self.adaptive {
            p.extend(am.params());
        }
        p
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let params = self.all_params();
        let header = Header {
            version: CHECKPOINT_VERSION,
            platform: self.platform(),
            meta: self.meta.clone(),
            kind: self.state_net.kind,
            latent_dim: self.state_net.latent_dim,
            state_spec: self.state_net.mlp().spec().clone(),
            state_norm: self.state_net.state_norm.clone(),
            action_norm: self.state_net.action_norm.clone(),
            output_norm: self.state_net.output_norm.clone(),
            encoder_spec: self.encoder.mlp().spec().clone(),
            env_norm: self.encoder.env_norm.clone(),
            adaptive: self.adaptive.as_ref().map(|am| AdaptiveHeader {
                history_len: am.history_len,
                spec: am.spec(),
                state_norm: am.state_norm.clone(),
                action_norm: am.action_norm.clone(),
            }),
            blocks: params.iter().map(|p| p.shape().to_vec()).collect(),
        };
        let json = serde_json::to_string(&header).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut out = Vec::new();
        writeln!(out, "{MAGIC} {CHECKPOINT_VERSION}")?;
        writeln!(out, "{json}")?;
        for p in &params {
            for v in p.values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let f = fs::File::open(path)?;
        Self::read(BufReader::new(f))
    }

    /// Loads and checks the platform matches `expected`.
    pub fn load_for(path: &Path, expected: Platform) -> Result<Self, ModelError> {
        let ck = Self::load(path)?;
        if ck.platform() != expected {
            return Err(ModelError::PlatformMismatch {
                expected,
                found: ck.platform(),
            });
        }
        Ok(ck)
    }

    pub fn read(mut r: impl BufRead) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Checkpoint(m.to_string());
        let mut line = String::new();
        r.read_line(&mut line)?;
        let mut it = line.split_whitespace();
        if it.next() != Some(MAGIC) {
            return Err(bad("not a checkpoint file"));
        }
        let version: u32 = it
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        line.clear();
        r.read_line(&mut line)?;
        let h: Header = serde_json::from_str(&line).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        let mut blocks = Vec::with_capacity(h.blocks.len());
        for shape in &h.blocks {
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 8];
            r.read_exact(&mut buf).map_err(|_| bad("truncated parameter data"))?;
            let values = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            blocks.push(Tensor::new(shape.clone(), values)?);
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(bad("trailing bytes after parameter data"));
        }

        let n_state = 2 * (h.state_spec.hidden.len() + 1);
        let n_enc = 2 * (h.encoder_spec.hidden.len() + 1);
        if blocks.len() < n_state + n_enc {
            return Err(bad("too few parameter blocks"));
        }
        let mut rest = blocks.split_off(n_state);
        let state_blocks = blocks;
        let am_blocks = rest.split_off(n_enc);
        let enc_blocks = rest;

        let mut state_net = StateNet::with_mlp(
            h.platform,
            h.kind,
            h.latent_dim,
            Mlp::from_params(h.state_spec, state_blocks)?,
        );
        state_net.state_norm = h.state_norm;
        state_net.action_norm = h.action_norm;
        state_net.output_norm = h.output_norm;
        let mut encoder = EnvEncoder::with_mlp(h.platform, Mlp::from_params(h.encoder_spec, enc_blocks)?);
        encoder.env_norm = h.env_norm;
        let adaptive = match h.adaptive {
            Some(a) => {
                let mut am = AdaptiveModule::from_params(h.platform, a.history_len, h.latent_dim, a.spec, am_blocks)?;
                am.state_norm = a.state_norm;
                am.action_norm = a.action_norm;
                Some(am)
            }
            None if am_blocks.is_empty() => None,
            None => return Err(bad("unexpected parameter blocks")),
        };
        Ok(Self {
            meta: h.meta,
            state_net,
            encoder,
            adaptive,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rng;
    use rand::SeedableRng;

    fn sample(with_am: bool) -> Checkpoint {
        let mut rng = Rng::seed_from_u64(8);
        let p = Platform::Quad;
        let mut state_net = StateNet::new(p, DynamicsKind::Node, 8, vec![16, 16], &mut rng).unwrap();
        state_net.output_norm.std = vec![0.5; 10];
        let encoder = EnvEncoder::new(p, 8, vec![16], &mut rng).unwrap();
        let adaptive = with_am.then(|| {
            let spec = AdaptiveModule::cnn_spec(p, 10, 8, vec![4, 4, 4], vec![5, 3, 3], 0.1, vec![8]);
            AdaptiveModule::new(p, 10, 8, spec, &mut rng).unwrap()
        });
        Checkpoint {
            meta: CheckpointMeta {
                phase: 2,
                epoch: 7,
                seed: 8,
                dt: 0.02,
                solver: SolverKind::ForwardEuler,
            },
            state_net,
            encoder,
            adaptive,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for with_am in [false, true] {
            let ck = sample(with_am);
            let back = Checkpoint::read(&ck.to_bytes().unwrap()[..]).unwrap();
            assert_eq!(back, ck);
            assert_eq!(param_hash(&back.all_params()), param_hash(&ck.all_params()));
        }
    }

    #[test]
    fn wrong_platform_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        sample(false).save(&path).unwrap();
        let err = Checkpoint::load_for(&path, Platform::DiffDrive).unwrap_err();
        assert!(matches!(err, ModelError::PlatformMismatch { .. }));
        assert!(Checkpoint::load_for(&path, Platform::Quad).is_ok());
    }

    #[test]
    fn version_and_truncation_are_checked() {
        let bytes = sample(false).to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("checkpoint 1", "checkpoint 9", 1);
        assert!(Checkpoint::read(text.as_bytes()).is_err());
        assert!(Checkpoint::read(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn hash_changes_with_any_bit() {
        let mut t = Tensor::vector(vec![1.0, 2.0]);
        let a = param_hash([&t]);
        t.values_mut()[1] = f64::from_bits(2.0f64.to_bits() + 1);
        assert_ne!(a, param_hash([&t]));
    }
}
