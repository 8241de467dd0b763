use std::path::{Path, PathBuf};

use serde::Serialize;
use stiefel_cluster::estimator::mean_of_samples;
use stiefel_cluster::sampler::{default_lambda, run_chains};
use stiefel_cluster::{
    extract_labels, run_chain, Alignment, ChainTrace, DataMatrix, InitStrategy, SamplerConfig,
};

use super::EstimateFile;
use crate::files::{matrix_rows, read_points, write_json, write_trace};
use crate::{CliError, Settings};

#[derive(Debug, Serialize)]
struct ChainDiagnostics {
    seed: u64,
    final_manifold_residual: f64,
    max_manifold_residual: f64,
    diverged: bool,
    diverged_at: Option<usize>,
    iterations_completed: usize,
    stored_samples: usize,
    final_loss: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Diagnostics<'a> {
    diverged: bool,
    final_manifold_residual: f64,
    acceptance_note: &'static str,
    lambda_is_default: bool,
    config: &'a SamplerConfig,
    chains: Vec<ChainDiagnostics>,
}

pub fn sampler_config(s: &Settings, data: &DataMatrix) -> Result<(SamplerConfig, usize), CliError> {
    let k = s.get_or("k", 3usize)?;
    let rank = s.get_or("rank", k)?;
    let mut cfg = SamplerConfig::for_data(data, rank, s.get_or("seed", 0u64)?);
    cfg.params.lambda = s.get_or("lambda", default_lambda(data))?;
    cfg.params.mu_prior = s.get_or("mu_prior", cfg.params.mu_prior)?;
    cfg.h = s.get_or("h", cfg.h)?;
    cfg.n_iters = s.get_or("n_iters", cfg.n_iters)?;
    cfg.burn_in = s.get_or("burn_in", cfg.burn_in)?;
    cfg.thinning = s.get_or("thinning", cfg.thinning)?;
    cfg.reproject_every = s.get_or("reproject_every", cfg.reproject_every)?;
    cfg.init = s.get_or("init", InitStrategy::Uniform)?;
    cfg.validate(data.n()).map_err(|e| CliError::Usage(e.to_string()))?;
    if k == 0 || k > rank {
        return Err(CliError::Usage(format!(
            "need 1 <= k <= rank to extract clusters, got k = {k}, rank = {rank}"
        )));
    }
    Ok((cfg, k))
}

/// Runs the sampler; writes traces, `diagnostics.json` and, unless a chain
/// diverged, `estimate.json`.
pub fn run(s: &Settings, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let data_path = s.path("data").unwrap_or_else(|| out.join("data.csv"));
    let data = DataMatrix::new(read_points(&data_path)?)?;
    let (cfg, k) = sampler_config(s, &data)?;
    let n_chains = s.get_or("chains", 1usize)?;
    if n_chains == 0 {
        return Err(CliError::Usage("chains must be at least 1".into()));
    }

    let traces: Vec<ChainTrace> = if n_chains == 1 {
        vec![run_chain(&data, &cfg)?]
    } else {
        run_chains(&data, &cfg, n_chains)
            .into_iter()
            .collect::<Result<_, _>>()?
    };

    let mut written = Vec::new();
    for (c, trace) in traces.iter().enumerate() {
        let name = if n_chains == 1 {
            "trace.csv".to_string()
        } else {
            format!("trace_chain_{c}.csv")
        };
        let path = out.join(name);
        write_trace(&path, &trace.loss_trace, &trace.log_post_trace)?;
        written.push(path);
    }

    let chains: Vec<ChainDiagnostics> = traces
        .iter()
        .enumerate()
        .map(|(c, t)| ChainDiagnostics {
            seed: cfg.seed.wrapping_add(c as u64),
            final_manifold_residual: t.final_state.o.residual(),
            max_manifold_residual: t.max_manifold_residual(),
            diverged: t.diverged(),
            diverged_at: t.diverged_at,
            iterations_completed: t.loss_trace.len(),
            stored_samples: t.states.len(),
            final_loss: t.loss_trace.last().copied(),
        })
        .collect();
    let diverged_at = traces.iter().find_map(|t| t.diverged_at);
    let diagnostics = Diagnostics {
        diverged: diverged_at.is_some(),
        final_manifold_residual: chains.iter().map(|c| c.final_manifold_residual).fold(0.0, f64::max),
        acceptance_note: traces[0].acceptance_note,
        lambda_is_default: !s.contains("lambda"),
        config: &cfg,
        chains,
    };
    let diag_path = out.join("diagnostics.json");
    write_json(&diag_path, &diagnostics)?;
    written.push(diag_path);

    if let Some(iteration) = diverged_at {
        return Err(CliError::Diverged {
            iteration,
            trace: written[0].clone(),
        });
    }

    let samples: Vec<_> = traces.iter().flat_map(|t| t.stored_u()).collect();
    let estimate = mean_of_samples(&samples, Alignment::Greedy)?;
    let labels = extract_labels(&estimate, k)?;
    let file = EstimateFile {
        n: data.n(),
        rank: cfg.params.rank,
        k,
        u_hat: matrix_rows(&estimate.u_hat),
        labels: labels.one_based(),
        n_samples_used: estimate.n_samples_used,
        chains: n_chains,
    };
    let est_path = out.join("estimate.json");
    write_json(&est_path, &file)?;
    written.push(est_path);
    Ok(written)
}
