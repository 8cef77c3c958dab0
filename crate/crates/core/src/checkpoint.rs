//! On-disk model format.
//!
//! A checkpoint is a directory:
//!
//! - `manifest.json`: architecture, dimensions, tensor table, epoch and
//!   optimizer hyperparameters.
//! - `params.bin`: online network, every tensor row-major as little-endian
//!   f32, concatenated in manifest order.
//! - `target.bin`: target network, same layout (optional).
//! - `opt.bin`: Adam first moments followed by second moments, each in the
//!   params layout (optional).
//! - `preprocess.json`: normalization statistics and label/feature names
//!   (optional).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::NormStats;
use crate::error::{Error, Result};
use crate::qnet::{Adam, AdamConfig, Arch, QNet};

pub const FORMAT: &str = "seqsel-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
    /// Number of f32 values.
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub arch: Arch,
    pub n_features: usize,
    pub n_classes: usize,
    pub epoch: u64,
    /// Feature budget per episode used in training; `None` means `n`.
    #[serde(default)]
    pub max_steps: Option<usize>,
    pub tensors: Vec<TensorEntry>,
    pub has_target: bool,
    pub optimizer: Option<OptimizerState>,
}

/// What is needed to turn a raw CSV into network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub label_column: String,
    pub feature_names: Option<Vec<String>>,
    pub label_names: Option<Vec<String>>,
    pub norm: Option<NormStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub online: QNet<f32>,
    pub target: Option<QNet<f32>>,
    pub optimizer: Option<Adam<f32>>,
    pub epoch: u64,
    pub max_steps: Option<usize>,
    pub preprocess: Option<Preprocess>,
}

impl Checkpoint {
    pub fn new(online: QNet<f32>) -> Self {
        Self {
            online,
            target: None,
            optimizer: None,
            epoch: 0,
            max_steps: None,
            preprocess: None,
        }
    }

    pub fn manifest(&self) -> Manifest {
        let mut offset = 0;
        let tensors = self
            .online
            .tensor_specs()
            .into_iter()
            .map(|spec| {
                let len = spec.len();
                let entry = TensorEntry {
                    name: spec.name,
                    shape: spec.shape,
                    offset,
                    len,
                };
                offset += len * 4;
                entry
            })
            .collect();
        Manifest {
            format: FORMAT.into(),
            version: VERSION,
            arch: self.online.arch(),
            n_features: self.online.n_features(),
            n_classes: self.online.n_classes(),
            epoch: self.epoch,
            max_steps: self.max_steps,
            tensors,
            has_target: self.target.is_some(),
            optimizer: self.optimizer.as_ref().map(|o| OptimizerState {
                beta1: o.config.beta1,
                beta2: o.config.beta2,
                eps: o.config.eps,
                weight_decay: o.config.weight_decay,
                lr: o.lr,
                step: o.t,
            }),
        }
    }

    /// Feature budget to use at evaluation time.
    pub fn eval_max_steps(&self) -> usize {
        self.max_steps.unwrap_or(self.online.n_features()).min(self.online.n_features())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        for other in [self.target.as_ref(), self.optimizer.as_ref().map(|o| &o.m)].into_iter().flatten() {
            if !other.same_layout(&self.online) {
                return Err(Error::ArchMismatch);
            }
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_json(&dir.join("manifest.json"), &self.manifest())?;
        write_bytes(&dir.join("params.bin"), &to_bytes(&[&self.online]))?;
        if let Some(target) = &self.target {
            write_bytes(&dir.join("target.bin"), &to_bytes(&[target]))?;
        }
        if let Some(opt) = &self.optimizer {
            write_bytes(&dir.join("opt.bin"), &to_bytes(&[&opt.m, &opt.v]))?;
        }
        if let Some(pre) = &self.preprocess {
            write_json(&dir.join("preprocess.json"), pre)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        if manifest.n_features == 0 || manifest.n_classes == 0 {
            return Err(Error::Checkpoint("zero dimension in manifest".into()));
        }
        let template = QNet::<f32>::zeros(manifest.n_features, manifest.n_classes, manifest.arch);
        let expected = Checkpoint::new(template.clone()).manifest().tensors;
        if expected != manifest.tensors {
            return Err(Error::Checkpoint("tensor table does not match architecture".into()));
        }

        let online = read_nets(&dir.join("params.bin"), &template, 1)?.remove(0);
        let target = if manifest.has_target {
            Some(read_nets(&dir.join("target.bin"), &template, 1)?.remove(0))
        } else {
            None
        };
        let optimizer = match &manifest.optimizer {
            Some(state) => {
                let mut mv = read_nets(&dir.join("opt.bin"), &template, 2)?;
                let v = mv.pop().expect("two nets");
                let m = mv.pop().expect("two nets");
                Some(Adam {
                    config: AdamConfig {
                        beta1: state.beta1,
                        beta2: state.beta2,
                        eps: state.eps,
                        weight_decay: state.weight_decay,
                    },
                    m,
                    v,
                    t: state.step,
                    lr: state.lr,
                })
            }
            None => None,
        };
        let pre_path = dir.join("preprocess.json");
        let preprocess = if pre_path.exists() {
            let text = std::fs::read_to_string(&pre_path).map_err(|e| Error::io(&pre_path, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        Ok(Self {
            online,
            target,
            optimizer,
            epoch: manifest.epoch,
            max_steps: manifest.max_steps,
            preprocess,
        })
    }
}

fn to_bytes(nets: &[&QNet<f32>]) -> Vec<u8> {
    let total: usize = nets.iter().map(|n| n.num_params()).sum();
    let mut out = Vec::with_capacity(total * 4);
    for net in nets {
        for tensor in net.tensors() {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

fn read_nets(path: &Path, template: &QNet<f32>, count: usize) -> Result<Vec<QNet<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let per_net = template.num_params() * 4;
    if bytes.len() != per_net * count {
        return Err(Error::Checkpoint(format!(
            "{} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            per_net * count
        )));
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let mut nets = Vec::with_capacity(count);
    for _ in 0..count {
        let mut net = template.clone();
        for tensor in net.tensors_mut() {
            for (dst, src) in tensor.iter_mut().zip(values.by_ref()) {
                *dst = src;
            }
        }
        nets.push(net);
    }
    Ok(nets)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qnet::Head;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn trained_like(arch: Arch) -> Checkpoint {
        let online = QNet::<f32>::init(5, 3, arch, 1).unwrap();
        let target = QNet::<f32>::init(5, 3, arch, 2).unwrap();
        let mut opt = Adam::new(&online, AdamConfig::default(), 3e-4);
        opt.m = QNet::init(5, 3, arch, 3).unwrap();
        opt.v = QNet::init(5, 3, arch, 4).unwrap();
        opt.t = 17;
        Checkpoint {
            online,
            target: Some(target),
            optimizer: Some(opt),
            epoch: 1234,
            max_steps: Some(4),
            preprocess: Some(Preprocess {
                label_column: "label".into(),
                feature_names: Some((0..5).map(|i| format!("f{i}")).collect()),
                label_names: Some(vec!["a".into(), "b".into(), "c".into()]),
                norm: Some(NormStats {
                    mean: vec![0.1; 5],
                    std: vec![2.0; 5],
                }),
            }),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        for arch in [Arch::D3qn, Arch::Ddqn] {
            let ck = trained_like(arch);
            let dir = tempfile::tempdir().unwrap();
            ck.save(dir.path()).unwrap();
            let back = Checkpoint::load(dir.path()).unwrap();
            assert_eq!(back, ck);

            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let states = Array2::from_shape_fn((6, 10), |_| rng.random_range(-1.0f32..1.0));
            let a = ck.online.forward(states.view()).unwrap();
            let b = back.online.forward(states.view()).unwrap();
            assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn manifest_layout() {
        let ck = trained_like(Arch::Ddqn);
        let m = ck.manifest();
        assert_eq!(m.tensors.len(), 11);
        let last = m.tensors.last().unwrap();
        assert_eq!(last.name, "output.bias");
        assert_eq!(last.shape, vec![8]);
        assert_eq!(last.offset + last.len * 4, ck.online.num_params() * 4);
        let json = serde_json::to_value(&m).unwrap();
        assert_eq!(json["arch"], "ddqn");
        assert!(matches!(ck.online.head(), Head::Flat { .. }));
        let names: Vec<_> = trained_like(Arch::D3qn).manifest().tensors.into_iter().map(|t| t.name).collect();
        assert!(names.contains(&"value.weight".to_string()));
        assert!(names.contains(&"advantage.bias".to_string()));
    }

    #[test]
    fn minimal_checkpoint() {
        let ck = Checkpoint::new(QNet::init(3, 2, Arch::D3qn, 0).unwrap());
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        assert!(!dir.path().join("opt.bin").exists());
        assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let ck = trained_like(Arch::D3qn);
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        let p = dir.path().join("params.bin");
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));

        ck.save(dir.path()).unwrap();
        let mp = dir.path().join("manifest.json");
        let text = std::fs::read_to_string(&mp).unwrap().replace("\"n_features\": 5", "\"n_features\": 6");
        std::fs::write(&mp, text).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Checkpoint(_))));

        assert!(matches!(Checkpoint::load(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let mut ck = trained_like(Arch::D3qn);
        ck.target = Some(QNet::init(5, 3, Arch::Ddqn, 0).unwrap());
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ck.save(dir.path()), Err(Error::ArchMismatch)));
    }
}
