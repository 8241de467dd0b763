pub mod bounds;
pub mod evaluate;
pub mod fit;
pub mod generate;

use serde::{Deserialize, Serialize};

/// Contents of `truth.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    pub coherence: f64,
    pub sigma: f64,
    pub seed: u64,
    /// One `d`-vector per cluster.
    pub means: Vec<Vec<f64>>,
}

/// Contents of `estimate.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateFile {
    pub n: usize,
    pub rank: usize,
    pub k: usize,
    /// `n` rows of `R` entries.
    pub u_hat: Vec<Vec<f64>>,
    /// One-based cluster ids.
    pub labels: Vec<usize>,
    pub n_samples_used: usize,
    pub chains: usize,
}
