use std::path::{Path, PathBuf};

use stiefel_cluster::{generate_dataset, MixtureSpec};

use super::TruthFile;
use crate::files::{write_json, write_labels, write_points};
use crate::{CliError, Settings};

pub fn mixture_spec(s: &Settings) -> Result<MixtureSpec, CliError> {
    let n = s.get_or("n", 60usize)?;
    let d = s.get_or("d", 5usize)?;
    let k = s.get_or("k", 3usize)?;
    let coherence = s.get_or("coherence", 0.0f64)?;
    let sigma = s.get_or("sigma", 0.05f64)?;
    let seed = s.get_or("seed", 0u64)?;
    let mut spec = MixtureSpec::balanced(n, d, k, coherence, sigma, seed);
    if let Some(sizes) = s.get_list::<usize>("sizes")? {
        spec.cluster_sizes = sizes;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(spec)
}

/// Writes `data.csv`, `labels.csv` and `truth.json`.
pub fn run(s: &Settings, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let spec = mixture_spec(s)?;
    let set = generate_dataset(&spec)?;
    let truth = set.data.ground_truth().expect("generated data carries truth");

    let data_path = out.join("data.csv");
    let labels_path = out.join("labels.csv");
    let truth_path = out.join("truth.json");
    write_points(&data_path, set.data.x())?;
    write_labels(&labels_path, &truth.labels)?;
    let file = TruthFile {
        n: spec.n,
        d: spec.d,
        k: spec.k,
        cluster_sizes: spec.cluster_sizes.clone(),
        coherence: spec.coherence,
        sigma: spec.sigma,
        seed: spec.seed,
        means: set.means.column_iter().map(|c| c.iter().copied().collect()).collect(),
    };
    write_json(&truth_path, &file)?;
    Ok(vec![data_path, labels_path, truth_path])
}
