//! Named parameters, gradient slots, Adam and JSON checkpoints.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the gradient when its global L2 norm exceeds this.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint parse: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("checkpoint parameter {name}: {reason}")]
    Mismatch { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub adam_step: u64,
    pub params: Vec<NamedTensor>,
}

/// Ordered parameter collection. Names are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let (r, c) = value.shape();
        self.params.push(Param {
            name,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    /// Uniform in `(-s, s)` with `s = 1 / sqrt(fan_in)`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut R,
    ) -> ParamId {
        let s = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
        self.add(name, Tensor::new(rows, cols, data))
    }

    pub fn add_full(&mut self, name: impl Into<String>, rows: usize, cols: usize, v: f64) -> ParamId {
        self.add(name, Tensor::full(rows, cols, v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn accumulate_grad(&mut self, id: ParamId, g: &Tensor) {
        self.params[id.0].grad.add_assign(g);
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params.iter().flat_map(|p| p.grad.data()).map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn adam_steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update from the accumulated gradients, which
    /// are then cleared.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        let scale = match cfg.max_grad_norm {
            Some(max) => {
                let norm = self.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            let n = p.value.len();
            let (value, grad, m, v) = (
                p.value.data_mut(),
                p.grad.data_mut(),
                p.m.data_mut(),
                p.v.data_mut(),
            );
            for i in 0..n {
                let g = grad[i] * scale;
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
                grad[i] = 0.0;
            }
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            adam_step: self.step,
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    shape: [p.value.rows(), p.value.cols()],
                    values: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    /// Loads values into a store with the same layout. Moments are reset.
    pub fn restore(&mut self, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
        if ckpt.params.len() != self.params.len() {
            return Err(CheckpointError::Mismatch {
                name: "*".into(),
                reason: format!("{} tensors, expected {}", ckpt.params.len(), self.params.len()),
            });
        }
        for (p, t) in self.params.iter().zip(&ckpt.params) {
            let mismatch = |reason: String| CheckpointError::Mismatch { name: t.name.clone(), reason };
            if p.name != t.name {
                return Err(mismatch(format!("expected {}", p.name)));
            }
            if [p.value.rows(), p.value.cols()] != t.shape {
                return Err(mismatch(format!("shape {:?}, expected {:?}", t.shape, p.value.shape())));
            }
            if t.values.len() != t.shape[0] * t.shape[1] {
                return Err(mismatch(format!("{} values for shape {:?}", t.values.len(), t.shape)));
            }
        }
        for (p, t) in self.params.iter_mut().zip(&ckpt.params) {
            p.value = Tensor::new(t.shape[0], t.shape[1], t.values.clone());
            p.m.data_mut().fill(0.0);
            p.v.data_mut().fill(0.0);
            p.grad.data_mut().fill(0.0);
        }
        self.step = ckpt.adam_step;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.checkpoint()).expect("checkpoint serialises")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json())
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })
    }

    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
        self.restore(&serde_json::from_str(&text)?)
    }
}
