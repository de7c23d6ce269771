use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid policy config: {0}")]
pub struct ConfigError(pub String);

/// Network shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub gs_layers: usize,
    pub gs_dim: usize,
    pub gs_knn: usize,
    pub trf_layers: usize,
    pub d_model: usize,
    pub n_head: usize,
    pub d_head: usize,
    pub d_inner: usize,
    /// Nodes per attention segment.
    pub segment_len: usize,
    /// Decision iterations per graph.
    pub iterations: usize,
    /// Seed of the fixed neighbour sample.
    pub neighbor_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            gs_layers: 4,
            gs_dim: 128,
            gs_knn: 5,
            trf_layers: 4,
            d_model: 128,
            n_head: 3,
            d_head: 15,
            d_inner: 512,
            segment_len: 128,
            iterations: 2,
            neighbor_seed: 0,
        }
    }
}

impl PolicyConfig {
    /// A narrow network for tests and single-core experiments.
    pub fn small() -> Self {
        Self {
            gs_layers: 2,
            gs_dim: 32,
            gs_knn: 5,
            trf_layers: 2,
            d_model: 32,
            n_head: 2,
            d_head: 8,
            d_inner: 64,
            segment_len: 64,
            iterations: 2,
            neighbor_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("gs_layers", self.gs_layers),
            ("gs_dim", self.gs_dim),
            ("gs_knn", self.gs_knn),
            ("trf_layers", self.trf_layers),
            ("d_model", self.d_model),
            ("n_head", self.n_head),
            ("d_head", self.d_head),
            ("d_inner", self.d_inner),
            ("segment_len", self.segment_len),
            ("iterations", self.iterations),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError(format!("{name} must be at least 1")));
        }
        if self.gs_dim != self.d_model {
            return Err(ConfigError(format!(
                "gs_dim ({}) must equal d_model ({})",
                self.gs_dim, self.d_model
            )));
        }
        Ok(())
    }
}
