//! Alternating Langevin sampler for the Gibbs posterior over `(U, O)`.
//!
//! Each iteration takes
//!
//! ```text
//! O⁺ = exp_O( h ∇̃_O log ρ + √(2h) P_O(Z_O) )
//! U⁺ = U + h ( −λ/2 ∇_U ‖X − XUUᵗ‖² − (U − |O⁺|)/μ² ) + √(2h) Z_U
//! ```
//!
//! where `∇̃_O` is the canonical-metric gradient, `P_O` the tangent
//! projection and `Z_O`, `Z_U` are standard Gaussian matrices. There is no
//! accept/reject step, so the chain is unadjusted and its bias shrinks with
//! `h`.
//!
//! Random numbers come from one ChaCha stream per factor column, so a run is
//! reproducible from its seed and permuting the columns of the state together
//! with the streams permutes the whole trajectory.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    grad_o_log_prior, log_posterior_unnormalized, loss, loss_gradient_u, DataMatrix, LatentState,
    ModelParams,
};
use crate::stiefel::{
    geodesic, project_to_stiefel, riemannian_gradient, sample_uniform, tangent_project,
    StiefelPoint, TangentVector,
};

pub const ACCEPTANCE_NOTE: &str = "unadjusted — no rejection step";

/// How `O⁽⁰⁾` is chosen; `U⁽⁰⁾` always starts equal to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Haar-uniform draw on the Stiefel manifold.
    #[default]
    Uniform,
    /// Top right singular vectors of `X`, each column signed to have a
    /// nonnegative sum.
    Spectral,
}

impl std::str::FromStr for InitStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "spectral" => Ok(Self::Spectral),
            other => Err(Error::InvalidParameter(format!(
                "unknown init strategy {other:?} (expected uniform or spectral)"
            ))),
        }
    }
}

/// Switches used by tests to isolate the drift or the noise of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerHooks {
    pub inject_noise: bool,
    pub drift: bool,
}

impl Default for SamplerHooks {
    fn default() -> Self {
        Self {
            inject_noise: true,
            drift: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub params: ModelParams,
    /// Step size `h`.
    pub h: f64,
    pub n_iters: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub reproject_every: usize,
    pub init: InitStrategy,
    #[serde(default)]
    pub hooks: SamplerHooks,
}

impl SamplerConfig {
    pub const DEFAULT_H: f64 = 1e-4;
    pub const DEFAULT_MU_PRIOR: f64 = 0.1;

    /// Defaults scaled to `x`: `λ = n / ‖X‖_F²`, `μ = 0.1`, `h = 1e-4`.
    pub fn for_data(x: &DataMatrix, rank: usize, seed: u64) -> Self {
        Self {
            params: ModelParams {
                lambda: default_lambda(x),
                mu_prior: Self::DEFAULT_MU_PRIOR,
                rank,
            },
            h: Self::DEFAULT_H,
            n_iters: 20_000,
            burn_in: 10_000,
            thinning: 10,
            seed,
            reproject_every: 1,
            init: InitStrategy::Uniform,
            hooks: SamplerHooks::default(),
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.params.validate(n)?;
        if !(self.h >= 0.0 && self.h.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size h must be finite and >= 0, got {}",
                self.h
            )));
        }
        if self.n_iters == 0 {
            return Err(Error::InvalidParameter("n_iters must be positive".into()));
        }
        if self.burn_in >= self.n_iters {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be < n_iters ({})",
                self.burn_in, self.n_iters
            )));
        }
        if self.thinning == 0 || self.reproject_every == 0 {
            return Err(Error::InvalidParameter(
                "thinning and reproject_every must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// `n / ‖X‖_F²`, or 1 for an all-zero `X`.
pub fn default_lambda(x: &DataMatrix) -> f64 {
    let energy = x.x().norm_squared();
    if energy > 0.0 {
        x.n() as f64 / energy
    } else {
        1.0
    }
}

/// Random streams of one chain: one for initialization and one per column.
#[derive(Debug, Clone)]
pub struct ChainRng {
    init: ChaCha8Rng,
    columns: Vec<ChaCha8Rng>,
}

impl ChainRng {
    pub fn new(seed: u64, rank: usize) -> Self {
        let init = ChaCha8Rng::seed_from_u64(seed);
        let columns = (0..rank)
            .map(|r| {
                let mut g = ChaCha8Rng::seed_from_u64(seed);
                g.set_stream(r as u64 + 1);
                g
            })
            .collect();
        Self { init, columns }
    }

    /// Same streams, reordered: column `j` of the result uses stream
    /// `perm[j]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            init: self.init.clone(),
            columns: perm.iter().map(|&p| self.columns[p].clone()).collect(),
        }
    }

    pub fn init_stream(&mut self) -> &mut ChaCha8Rng {
        &mut self.init
    }

    pub fn rank(&self) -> usize {
        self.columns.len()
    }

    /// `n × R` standard Gaussian matrix, column `r` drawn from stream `r`.
    pub fn gaussian(&mut self, n: usize) -> DMatrix<f64> {
        let mut z = DMatrix::<f64>::zeros(n, self.columns.len());
        for (r, g) in self.columns.iter_mut().enumerate() {
            for i in 0..n {
                z[(i, r)] = g.sample(StandardNormal);
            }
        }
        z
    }
}

/// Sampler output.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    /// Thinned post-burn-in states.
    pub states: Vec<LatentState>,
    /// Iteration index (0-based) of each stored state.
    pub stored_iterations: Vec<usize>,
    pub loss_trace: Vec<f64>,
    pub log_post_trace: Vec<f64>,
    pub acceptance_note: &'static str,
    /// Iteration at which the chain produced non-finite values, if any. The
    /// traces stop just before it.
    pub diverged_at: Option<usize>,
    pub final_state: LatentState,
}

impl ChainTrace {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn stored_u(&self) -> Vec<DMatrix<f64>> {
        self.states.iter().map(|s| s.u.clone()).collect()
    }

    /// Largest `‖OᵗO − I‖_F` over stored states and the final state.
    pub fn max_manifold_residual(&self) -> f64 {
        self.states
            .iter()
            .chain(std::iter::once(&self.final_state))
            .map(|s| s.o.residual())
            .fold(0.0, f64::max)
    }
}

/// `O⁽⁰⁾` per the configured strategy and `U⁽⁰⁾ = O⁽⁰⁾`.
pub fn init_state(x: &DataMatrix, config: &SamplerConfig, rng: &mut ChainRng) -> Result<LatentState> {
    let n = x.n();
    let r = config.params.rank;
    let o = match config.init {
        InitStrategy::Uniform => sample_uniform(n, r, rng.init_stream())?,
        InitStrategy::Spectral => spectral_frame(x, r, rng.init_stream())?,
    };
    LatentState::new(o.matrix().clone(), o)
}

fn spectral_frame(x: &DataMatrix, r: usize, rng: &mut ChaCha8Rng) -> Result<StiefelPoint> {
    let n = x.n();
    let svd = x.x().clone().svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut frame = DMatrix::<f64>::zeros(n, r);
    let available = order.len().min(r);
    for (c, &idx) in order.iter().take(available).enumerate() {
        let mut col = v_t.row(idx).transpose();
        if col.sum() < 0.0 {
            col.neg_mut();
        }
        frame.set_column(c, &col);
    }
    for c in available..r {
        for i in 0..n {
            frame[(i, c)] = rng.sample(StandardNormal);
        }
    }
    project_to_stiefel(&frame)
}

/// Geodesic Langevin step in `O` at iteration 0 (always re-projected).
pub fn o_step(state: &LatentState, config: &SamplerConfig, rng: &mut ChainRng) -> Result<StiefelPoint> {
    o_step_at(state, config, rng, 0, true)
}

fn o_step_at(
    state: &LatentState,
    config: &SamplerConfig,
    rng: &mut ChainRng,
    iteration: usize,
    reproject: bool,
) -> Result<StiefelPoint> {
    let h = config.h;
    if h == 0.0 {
        return Ok(state.o.clone());
    }
    let o = &state.o;
    let (n, _) = o.shape();

    let mut direction = if config.hooks.drift {
        let g = grad_o_log_prior(&state.u, o, config.params.mu_prior)?;
        riemannian_gradient(o, &g)?.scaled(h)
    } else {
        TangentVector::zero(o)
    };
    if config.hooks.inject_noise {
        let z = tangent_project(o, &rng.gaussian(n))?;
        direction = direction.add_scaled(&z, (2.0 * h).sqrt())?;
    }

    let (point, _) = geodesic(o, &direction, 1.0)?;
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::DivergedStep { iteration });
    }
    if reproject {
        project_to_stiefel(&point).map_err(|_| Error::DivergedStep { iteration })
    } else {
        Ok(StiefelPoint::from_trusted(point))
    }
}

/// Euclidean Langevin step in `U`; `state.o` must already hold `O⁺`.
pub fn u_step(
    state: &LatentState,
    x: &DataMatrix,
    config: &SamplerConfig,
    rng: &mut ChainRng,
    iteration: usize,
) -> Result<DMatrix<f64>> {
    let h = config.h;
    let ModelParams {
        lambda, mu_prior, ..
    } = config.params;
    let mut next = state.u.clone();

    if config.hooks.drift && h > 0.0 {
        let mut grad_energy = (&state.u - state.o.matrix().abs()) / (mu_prior * mu_prior);
        if lambda != 0.0 {
            grad_energy += loss_gradient_u(x, &state.u)? * (0.5 * lambda);
        }
        next -= grad_energy * h;
    }
    if config.hooks.inject_noise {
        let z = rng.gaussian(state.u.nrows());
        next += z * (2.0 * h).sqrt();
    }
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::DivergedStep { iteration });
    }
    Ok(next)
}

/// Runs the chain from `init_state` with streams seeded by `config.seed`.
pub fn run_chain(x: &DataMatrix, config: &SamplerConfig) -> Result<ChainTrace> {
    config.validate(x.n())?;
    let mut rng = ChainRng::new(config.seed, config.params.rank);
    let init = init_state(x, config, &mut rng)?;
    run_chain_from(x, config, init, rng)
}

/// Runs the chain from an explicit state and random streams.
pub fn run_chain_from(
    x: &DataMatrix,
    config: &SamplerConfig,
    init: LatentState,
    mut rng: ChainRng,
) -> Result<ChainTrace> {
    config.validate(x.n())?;
    if init.u.nrows() != x.n() || init.u.ncols() != config.params.rank {
        return Err(Error::DimensionMismatch {
            context: "initial state",
            expected: (x.n(), config.params.rank),
            got: init.u.shape(),
        });
    }
    if rng.rank() != config.params.rank {
        return Err(Error::InvalidParameter(format!(
            "random streams cover {} columns, rank is {}",
            rng.rank(),
            config.params.rank
        )));
    }

    let mut state = init;
    let mut trace = ChainTrace {
        states: Vec::new(),
        stored_iterations: Vec::new(),
        loss_trace: Vec::with_capacity(config.n_iters),
        log_post_trace: Vec::with_capacity(config.n_iters),
        acceptance_note: ACCEPTANCE_NOTE,
        diverged_at: None,
        final_state: state.clone(),
    };

    for it in 0..config.n_iters {
        let reproject = (it + 1) % config.reproject_every == 0;
        let stepped = o_step_at(&state, config, &mut rng, it, reproject).and_then(|o| {
            let moved = LatentState {
                u: state.u.clone(),
                o,
            };
            let u = u_step(&moved, x, config, &mut rng, it)?;
            Ok(LatentState { u, o: moved.o })
        });
        match stepped {
            Ok(next) => state = next,
            Err(Error::DivergedStep { iteration }) => {
                trace.diverged_at = Some(iteration);
                break;
            }
            Err(e) => return Err(e),
        }

        let l = loss(x, &state.u)?;
        let lp = log_posterior_unnormalized(x, &state, &config.params)?;
        if !(l.is_finite() && lp.is_finite()) {
            trace.diverged_at = Some(it);
            break;
        }
        trace.loss_trace.push(l);
        trace.log_post_trace.push(lp);

        if it >= config.burn_in && (it - config.burn_in) % config.thinning == 0 {
            trace.states.push(state.clone());
            trace.stored_iterations.push(it);
        }
    }
    trace.final_state = state;
    Ok(trace)
}

/// Runs `n_chains` independent chains concurrently. Chain `c` uses the seed
/// `config.seed + c`.
pub fn run_chains(x: &DataMatrix, config: &SamplerConfig, n_chains: usize) -> Vec<Result<ChainTrace>> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n_chains)
            .map(|c| {
                let mut cfg = config.clone();
                cfg.seed = config.seed.wrapping_add(c as u64);
                scope.spawn(move || run_chain(x, &cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sampler thread panicked"))
            .collect()
    })
}
