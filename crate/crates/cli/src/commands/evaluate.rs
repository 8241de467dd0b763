use std::path::{Path, PathBuf};

use serde::Serialize;
use stiefel_cluster::{
    build_ideal, clusterwise_error, partition_agreement, prediction_error, DMatrix, Labeling,
};

use super::{EstimateFile, TruthFile};
use crate::files::{matrix_from_rows, read_json, read_labels, write_json};
use crate::{CliError, Settings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SquaredAndRoot {
    pub squared: f64,
    pub root: f64,
}

/// Contents of `metrics.json`: exactly these five keys.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub prediction_error: f64,
    pub clusterwise_error: SquaredAndRoot,
    pub clusterwise_error_display: SquaredAndRoot,
    pub accuracy: f64,
    pub ari: f64,
}

pub fn metrics(truth: &TruthFile, labels: &Labeling, estimate: &EstimateFile) -> Result<Metrics, CliError> {
    let n = labels.n();
    if estimate.n != n || estimate.labels.len() != n || truth.n != n {
        return Err(CliError::Format(format!(
            "sizes disagree: {n} true labels, estimate for {} points, truth for {}",
            estimate.n, truth.n
        )));
    }
    if truth.means.len() != labels.k() || truth.means.iter().any(|m| m.len() != truth.d) {
        return Err(CliError::Format(format!(
            "truth.json holds {} means for {} clusters",
            truth.means.len(),
            labels.k()
        )));
    }
    let m = DMatrix::from_fn(truth.d, n, |r, i| truth.means[labels.labels()[i]][r]);
    let u_hat = matrix_from_rows(&estimate.u_hat, "u_hat")?;
    let t_hat = &u_hat * u_hat.transpose();
    let t_star = build_ideal(labels).t_star;
    let est_labels = Labeling::from_one_based(&estimate.labels)?;

    let pe = prediction_error(&m, &t_star, &t_hat)?;
    let cw = clusterwise_error(labels, &t_star, &u_hat)?;
    let (accuracy, ari) = partition_agreement(labels, &est_labels);
    Ok(Metrics {
        prediction_error: pe,
        clusterwise_error: SquaredAndRoot {
            squared: cw.squared,
            root: cw.root,
        },
        clusterwise_error_display: SquaredAndRoot {
            squared: cw.display_squared,
            root: cw.display_root,
        },
        accuracy,
        ari,
    })
}

pub fn run(s: &Settings, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let estimate_path = s.path("estimate").unwrap_or_else(|| out.join("estimate.json"));
    let truth_path = s.path("truth").unwrap_or_else(|| out.join("truth.json"));
    let labels_path = s.path("labels").unwrap_or_else(|| out.join("labels.csv"));

    let estimate: EstimateFile = read_json(&estimate_path)?;
    let truth: TruthFile = read_json(&truth_path)?;
    let labels = read_labels(&labels_path)?;

    let metrics = metrics(&truth, &labels, &estimate)?;
    let path = out.join("metrics.json");
    write_json(&path, &metrics)?;
    Ok(vec![path])
}
