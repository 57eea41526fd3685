//! Checkpoint directory: `manifest.json` plus raw little-endian `f32` blobs.
//!
//! Every tensor entry in the manifest names its blob file and its `offset`
//! and `len`, both counted in `f32` elements.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::net::Network;
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::io::{read_f32_blob, read_json, write_f32_blob, write_json};

pub const MANIFEST: &str = "manifest.json";
pub const WEIGHTS_BLOB: &str = "weights.f32";
pub const ADAM_M_BLOB: &str = "adam_m.f32";
pub const ADAM_V_BLOB: &str = "adam_v.f32";
const FORMAT: &str = "echoct-checkpoint/1";

/// Affine normalisation applied around the network: inputs per channel
/// (real, imaginary), target as one channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: [f64; 2],
    pub input_std: [f64; 2],
    pub target_mean: f64,
    pub target_std: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        Self {
            input_mean: [0.0; 2],
            input_std: [1.0; 2],
            target_mean: 0.0,
            target_std: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let stds = [self.input_std[0], self.input_std[1], self.target_std];
        let means = [self.input_mean[0], self.input_mean[1], self.target_mean];
        if stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Parameter("normalisation stats must be finite with positive std".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub network: Network,
    pub adam: Option<AdamState>,
    pub norm: NormStats,
    pub step: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub file: String,
    pub offset: usize,
    pub len: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct AdamHyper {
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    dtype: String,
    topology: NetworkSpec,
    channel_plan: Vec<usize>,
    param_count: usize,
    norm: NormStats,
    step: u64,
    seed: u64,
    adam: Option<AdamHyper>,
    tensors: Vec<TensorEntry>,
}

fn tensor_entries(net: &Network, file: &str, prefix: &str) -> Vec<TensorEntry> {
    let mut out = Vec::new();
    for (i, l) in net.spec().layers.iter().enumerate() {
        let (off, wl, bl) = net.layer_range(i);
        out.push(TensorEntry {
            name: format!("{prefix}layer{i}.weight"),
            file: file.into(),
            offset: off,
            len: wl,
            shape: vec![l.out_channels, l.in_channels, 3, 3],
        });
        out.push(TensorEntry {
            name: format!("{prefix}layer{i}.bias"),
            file: file.into(),
            offset: off + wl,
            len: bl,
            shape: vec![bl],
        });
    }
    out
}

impl ModelCheckpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tensors = tensor_entries(&self.network, WEIGHTS_BLOB, "");
        write_f32_blob(&dir.join(WEIGHTS_BLOB), self.network.params())?;
        let adam = match &self.adam {
            Some(a) => {
                write_f32_blob(&dir.join(ADAM_M_BLOB), &a.m)?;
                write_f32_blob(&dir.join(ADAM_V_BLOB), &a.v)?;
                tensors.extend(tensor_entries(&self.network, ADAM_M_BLOB, "adam_m."));
                tensors.extend(tensor_entries(&self.network, ADAM_V_BLOB, "adam_v."));
                Some(AdamHyper {
                    step: a.step,
                    lr: a.lr,
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                })
            }
            None => None,
        };
        let spec = self.network.spec();
        let manifest = Manifest {
            format: FORMAT.into(),
            dtype: "f32-le".into(),
            topology: spec.clone(),
            channel_plan: spec.layers.iter().map(|l| l.out_channels).collect(),
            param_count: spec.param_len(),
            norm: self.norm,
            step: self.step,
            seed: self.seed,
            adam,
            tensors,
        };
        write_json(&dir.join(MANIFEST), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let manifest: Manifest = read_json(&mpath)?;
        if manifest.format != FORMAT {
            return Err(Error::file_format(&mpath, format!("unknown format {:?}", manifest.format)));
        }
        manifest.norm.validate()?;
        let n = manifest.topology.param_len();
        let blob = |name: &str| -> Result<Vec<f64>> {
            let path = dir.join(name);
            let v = read_f32_blob(&path)?;
            if v.len() != n {
                return Err(Error::file_format(&path, format!("expected {n} values, found {}", v.len())));
            }
            Ok(v)
        };
        let network = Network::from_params(manifest.topology.clone(), blob(WEIGHTS_BLOB)?)?;
        let adam = match manifest.adam {
            Some(h) => {
                let a = AdamState {
                    step: h.step,
                    m: blob(ADAM_M_BLOB)?,
                    v: blob(ADAM_V_BLOB)?,
                    lr: h.lr,
                    beta1: h.beta1,
                    beta2: h.beta2,
                    eps: h.eps,
                };
                a.validate()?;
                Some(a)
            }
            None => None,
        };
        Ok(Self {
            network,
            adam,
            norm: manifest.norm,
            step: manifest.step,
            seed: manifest.seed,
        })
    }

    /// The checkpoint as it reads back from disk (weights rounded to `f32`).
    pub fn rounded(&self) -> Result<Self> {
        let round = |v: &[f64]| v.iter().map(|&x| x as f32 as f64).collect::<Vec<_>>();
        Ok(Self {
            network: Network::from_params(self.network.spec().clone(), round(self.network.params()))?,
            adam: self.adam.as_ref().map(|a| AdamState {
                m: round(&a.m),
                v: round(&a.v),
                ..a.clone()
            }),
            ..self.clone()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModelCheckpoint {
        let net = Network::init(NetworkSpec::standard(2), 7).unwrap();
        let mut adam = AdamState::new(net.params().len(), 1e-3);
        adam.step = 12;
        adam.m.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-3);
        adam.v.iter_mut().enumerate().for_each(|(i, v)| *v = i as f64 * 1e-6);
        ModelCheckpoint {
            network: net,
            adam: Some(adam),
            norm: NormStats {
                input_mean: [0.1, -0.2],
                input_std: [1.5, 1.25],
                target_mean: 0.3,
                target_std: 0.7,
            },
            step: 12,
            seed: 99,
        }
    }

    #[test]
    fn round_trip_equals_f32_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let back = ModelCheckpoint::load(dir.path()).unwrap();
        assert_eq!(back, ck.rounded().unwrap());
    }

    #[test]
    fn manifest_offsets_cover_the_blob() {
        let dir = tempfile::tempdir().unwrap();
        let ck = sample();
        ck.save(dir.path()).unwrap();
        let m: Manifest = read_json(&dir.path().join(MANIFEST)).unwrap();
        let mut covered: Vec<(usize, usize)> = m
            .tensors
            .iter()
            .filter(|t| t.file == WEIGHTS_BLOB)
            .map(|t| (t.offset, t.len))
            .collect();
        covered.sort();
        let mut end = 0;
        for (off, len) in covered {
            assert_eq!(off, end);
            end += len;
        }
        assert_eq!(end, m.param_count);
        let bytes = std::fs::metadata(dir.path().join(WEIGHTS_BLOB)).unwrap().len();
        assert_eq!(bytes as usize, 4 * m.param_count);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        let p = dir.path().join(WEIGHTS_BLOB);
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(ModelCheckpoint::load(dir.path()), Err(Error::FileFormat { .. })));
    }
}
