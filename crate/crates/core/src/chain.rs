use serde::{Deserialize, Serialize};

/// One chain's post-warmup draws of the continuous parameters (constrained
/// scale) plus sampler metadata.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub param_names: Vec<String>,
    /// `draws[t][p]`: iteration `t`, parameter `p`.
    pub draws: Vec<Vec<f64>>,
    /// Post-warmup latent labels; only kept by full-model Gibbs runs on request.
    pub latent_draws: Option<Vec<Vec<usize>>>,
    pub warmup_seconds: f64,
    pub sampling_seconds: f64,
    pub divergences: usize,
    pub tree_depths: Vec<usize>,
    pub accept_stats: Vec<f64>,
    pub warmup_accept_stats: Vec<f64>,
    pub step_size: Option<f64>,
    pub inv_metric: Option<Vec<f64>>,
}

impl ChainDraws {
    pub fn wall_time_seconds(&self) -> f64 {
        self.warmup_seconds + self.sampling_seconds
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Trace of parameter `p`.
    pub fn column(&self, p: usize) -> Vec<f64> {
        self.draws.iter().map(|d| d[p]).collect()
    }

    pub fn mean(&self, p: usize) -> f64 {
        self.draws.iter().map(|d| d[p]).sum::<f64>() / self.draws.len() as f64
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }
}

/// Per-parameter traces across chains: `out[p][c]` is chain `c`'s trace of `p`.
pub fn by_parameter(chains: &[ChainDraws]) -> Vec<Vec<Vec<f64>>> {
    let Some(first) = chains.first() else { return Vec::new() };
    (0..first.param_names.len()).map(|p| chains.iter().map(|c| c.column(p)).collect()).collect()
}
