//! Closed-form risk bounds for the Gibbs estimator and Monte Carlo checks of
//! the Gaussian tail inequalities behind them.
//!
//! Bounds that are at least one are reported as they are (see
//! [`FailureProbability::vacuous`]), never clamped.

use std::f64::consts::{E, PI};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::op_norm;

/// Default covering constants. They are free universal constants, not
/// values fixed by the theory.
pub const DEFAULT_C_COV: f64 = 0.5;
pub const DEFAULT_RHO: f64 = 0.5;

/// Which size enters the chi-square degrees of freedom and covering
/// exponent of the clustering bound: `n(n − R)` and `nR`, or `n(d − R)` and
/// `dR`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionConvention {
    #[default]
    NBased,
    DBased,
}

impl DimensionConvention {
    pub const ALL: [DimensionConvention; 2] = [DimensionConvention::NBased, DimensionConvention::DBased];

    pub fn name(self) -> &'static str {
        match self {
            DimensionConvention::NBased => "n_based",
            DimensionConvention::DBased => "d_based",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub rank: usize,
    pub epsilon: f64,
    pub c_u: f64,
    pub c_o: f64,
    pub rho: f64,
    pub c_cov: f64,
    pub nu_min: f64,
    pub nu_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub u: f64,
    pub coherence: f64,
    pub n_k_max: usize,
    pub mu_prior: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n == 0 || self.rank == 0 || self.k == 0 {
            return bad("n, K and R must be positive".into());
        }
        if !(self.c_o > 0.0 && self.c_u > self.c_o && self.c_u.is_finite()) {
            return bad(format!("need c_U > c_O > 0, got c_U = {}, c_O = {}", self.c_u, self.c_o));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return bad(format!("rho must lie in (0, 1], got {}", self.rho));
        }
        if !(self.c_cov > 0.0 && self.c_cov.is_finite()) {
            return bad(format!("c_cov must be positive, got {}", self.c_cov));
        }
        if !(self.nu_min >= 0.0 && self.nu_max >= 0.0) {
            return bad("nu_min and nu_max must be nonnegative".into());
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > 0.0) {
            return bad("sigma_min and sigma_max must be positive".into());
        }
        if !(self.u > 0.0) {
            return bad(format!("u must be positive, got {}", self.u));
        }
        if !(self.mu_prior > 0.0 && self.mu_prior.is_finite()) {
            return bad(format!("mu_prior must be positive, got {}", self.mu_prior));
        }
        if self.coherence < 0.0 {
            return bad(format!("coherence must be nonnegative, got {}", self.coherence));
        }
        Ok(())
    }

    fn nr(&self) -> f64 {
        (self.n * self.rank) as f64
    }

    /// `nR − R(R+1)/2`, the dimension of the rank-`R` Stiefel manifold.
    fn stiefel_dim(&self) -> f64 {
        let r = self.rank as f64;
        self.nr() - r * (r + 1.0) / 2.0
    }

    /// Degrees of freedom of the residual chi-square under `conv`.
    pub fn residual_dof(&self, conv: DimensionConvention) -> Result<f64> {
        let width = match conv {
            DimensionConvention::NBased => self.n,
            DimensionConvention::DBased => self.d,
        };
        if width <= self.rank {
            return Err(Error::InvalidParameter(format!(
                "{} convention needs {} > R = {}",
                conv.name(),
                if conv == DimensionConvention::NBased { "n" } else { "d" },
                self.rank
            )));
        }
        Ok((self.n * (width - self.rank)) as f64)
    }

    /// Covering exponent `nR − R(R+1)/2` (or `dR − …`).
    pub fn covering_exponent(&self, conv: DimensionConvention) -> f64 {
        let r = self.rank as f64;
        let outer = match conv {
            DimensionConvention::NBased => self.n,
            DimensionConvention::DBased => self.d,
        } as f64;
        outer * r - r * (r + 1.0) / 2.0
    }
}

/// `(1/μ)√(c_U² − c_O²) − √(nR)`; must be positive for the prior-mass term
/// to be finite.
fn prior_mass_gap(inputs: &BoundInputs) -> Result<f64> {
    let gap = (inputs.c_u.powi(2) - inputs.c_o.powi(2)).sqrt() / inputs.mu_prior - inputs.nr().sqrt();
    if gap > 0.0 {
        Ok(gap)
    } else {
        Err(Error::VacuousBound(format!(
            "(1/mu_prior)·sqrt(c_U² − c_O²) = {:.6} does not exceed sqrt(nR) = {:.6}; the prior-mass term is infinite",
            gap + inputs.nr().sqrt(),
            inputs.nr().sqrt()
        )))
    }
}

/// `1/(exp(gap²/2) − 1)`.
fn prior_mass_term(inputs: &BoundInputs) -> Result<f64> {
    let gap = prior_mass_gap(inputs)?;
    Ok(1.0 / (gap * gap / 2.0).exp_m1())
}

/// `(nR − (R²+R)/2)·log(1/ρ) + log(1/c)`.
fn covering_term(inputs: &BoundInputs) -> f64 {
    inputs.stiefel_dim() * (1.0 / inputs.rho).ln() + (1.0 / inputs.c_cov).ln()
}

/// `c_U(2 + c_U) ≤ ε·ν_min / (‖M‖ + ‖E‖)`.
pub fn check_cu_condition(inputs: &BoundInputs, m_norm: f64, e_norm: f64) -> Result<bool> {
    let denom = m_norm + e_norm;
    if denom == 0.0 {
        return Err(Error::DegenerateDenominator);
    }
    Ok(inputs.c_u * (2.0 + inputs.c_u) <= inputs.epsilon * inputs.nu_min / denom)
}

/// Oracle inequality for the prediction error:
/// `(1+ε)[oracle + √(prior mass) + √(covering) + (2+ε)ν_max]`.
pub fn theorem1_rhs(inputs: &BoundInputs, oracle_term: f64) -> Result<f64> {
    inputs.validate()?;
    let prior = prior_mass_term(inputs)?;
    let cover = covering_term(inputs);
    if cover < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "covering term {cover} is negative; use c_cov <= 1 or rho < 1"
        )));
    }
    let eps = inputs.epsilon;
    Ok((1.0 + eps) * (oracle_term + prior.sqrt() + cover.sqrt() + (2.0 + eps) * inputs.nu_max))
}

/// `(c/ε)^{nR − R(R+1)/2}`.
pub fn covering_number_bound(n: usize, rank: usize, epsilon_net: f64, c_cov: f64) -> f64 {
    log_covering_number_bound(n, rank, epsilon_net, c_cov).exp()
}

pub fn log_covering_number_bound(n: usize, rank: usize, epsilon_net: f64, c_cov: f64) -> f64 {
    let r = rank as f64;
    let exponent = (n as f64) * r - r * (r + 1.0) / 2.0;
    exponent * (c_cov / epsilon_net).ln()
}

fn log_chi2_lower(t: f64, m: f64) -> f64 {
    (2.0 / (PI * m).sqrt()).ln() + (m / 4.0) * (t * E / 2.0).ln()
}

/// `P(χ²_m ≤ t·m) ≤ 2/√(πm)·(te/2)^{m/4}`. Returns `(clipped, raw)`, with
/// the clipped value in `[0, 1]`.
pub fn chi2_lower_tail_bound(t: f64, m: usize) -> (f64, f64) {
    let raw = log_chi2_lower(t, m as f64).exp();
    (raw.clamp(0.0, 1.0), raw)
}

/// `P(√χ²_m ≥ √m + √(2t)) ≤ exp(−t)`.
pub fn chi2_upper_tail_bound(t: f64) -> f64 {
    (-t).exp()
}

/// `(σ√(dn + u), exp(−nu²/8))`: threshold on `‖E‖_F` and the claimed
/// probability of exceeding it.
pub fn frobenius_norm_tail(n: usize, d: usize, u: f64, sigma: f64) -> (f64, f64) {
    let threshold = sigma * ((d * n) as f64 + u).sqrt();
    (threshold, (-(n as f64) * u * u / 8.0).exp())
}

/// `(σ(√n + 2√d), exp(−d))` for the operator norm of a `d × n` Gaussian
/// matrix.
pub fn opnorm_bound(n: usize, d: usize, sigma: f64) -> (f64, f64) {
    let threshold = sigma * ((n as f64).sqrt() + 2.0 * (d as f64).sqrt());
    (threshold, (-(d as f64)).exp())
}

/// `√(n_max·μ(K−1) + 1)`.
pub fn gershgorin_m_bound(n_k_max: usize, coherence: f64, k: usize) -> f64 {
    ((n_k_max as f64) * coherence * (k.saturating_sub(1) as f64) + 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TRange {
    pub t_min: f64,
    pub t_max: f64,
    /// `t_max < 0`: the upper-tail term `exp(−t_max)` exceeds one.
    pub t_max_negative: bool,
}

/// `t_min = (ν_min/σ_min + 4ε√(nd+u))²/m` and
/// `t_max = (ν_max/σ_max − 4ε√(nd+u))² − √m`, with `m` the residual degrees
/// of freedom under `conv`.
pub fn t_min_max(inputs: &BoundInputs, conv: DimensionConvention) -> Result<TRange> {
    let m = inputs.residual_dof(conv)?;
    let slack = 4.0 * inputs.epsilon * (((inputs.n * inputs.d) as f64) + inputs.u).sqrt();
    let t_min = (inputs.nu_min / inputs.sigma_min + slack).powi(2) / m;
    let t_max = (inputs.nu_max / inputs.sigma_max - slack).powi(2) - m.sqrt();
    Ok(TRange {
        t_min,
        t_max,
        t_max_negative: t_max < 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureProbability {
    pub convention: DimensionConvention,
    pub total: f64,
    pub opnorm_term: f64,
    pub frobenius_term: f64,
    /// Union bound over the `ε`-net.
    pub net_term: f64,
    pub log_net_term: f64,
    pub t_range: TRange,
    pub vacuous: bool,
    pub warnings: Vec<String>,
}

/// `exp(−d) + exp(−nu²/8) + N_ε·(2/√(πm)(t_min·e/2)^{m/4} + exp(−t_max))`
/// where `N_ε` is the covering number of the net. The net term is assembled
/// in the log domain.
pub fn theorem2_failure_prob(
    inputs: &BoundInputs,
    epsilon_net: f64,
    conv: DimensionConvention,
) -> Result<FailureProbability> {
    inputs.validate()?;
    if !(epsilon_net > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "epsilon_net must be positive, got {epsilon_net}"
        )));
    }
    let m = inputs.residual_dof(conv)?;
    let t_range = t_min_max(inputs, conv)?;
    let log_cover = inputs.covering_exponent(conv) * (inputs.c_cov / epsilon_net).ln();
    let a = log_chi2_lower(t_range.t_min, m);
    let b = -t_range.t_max;
    let hi = a.max(b);
    let log_tails = if hi == f64::NEG_INFINITY {
        hi
    } else {
        hi + ((a - hi).exp() + (b - hi).exp()).ln()
    };
    let log_net_term = log_cover + log_tails;
    let net_term = log_net_term.exp();
    let opnorm_term = (-(inputs.d as f64)).exp();
    let frobenius_term = (-(inputs.n as f64) * inputs.u * inputs.u / 8.0).exp();
    let total = opnorm_term + frobenius_term + net_term;

    let mut warnings = Vec::new();
    if t_range.t_min >= 2.0 / E {
        warnings.push(format!(
            "t_min = {:.6} is not below 2/e = {:.6}; the lower-tail factor is at least 1",
            t_range.t_min,
            2.0 / E
        ));
    }
    if t_range.t_max_negative {
        warnings.push(format!(
            "t_max = {:.6} is negative; exp(-t_max) exceeds 1",
            t_range.t_max
        ));
    }
    Ok(FailureProbability {
        convention: conv,
        total,
        opnorm_term,
        frobenius_term,
        net_term,
        log_net_term,
        t_range,
        vacuous: !(total < 1.0),
        warnings,
    })
}

/// `(X_resid + c_U(2 + c_U)(‖M‖ + ‖E‖))²`.
pub fn lemma_integral_bound(x_resid: f64, c_u: f64, m_norm: f64, e_norm: f64) -> f64 {
    (x_resid + c_u * (2.0 + c_u) * (m_norm + e_norm)).powi(2)
}

/// `1/(exp(gap²/2) − 1) + (nR − (R²+R)/2)·log(1/ρ) + log(1/c)`.
pub fn lemma_kl_bound(inputs: &BoundInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(prior_mass_term(inputs)? + covering_term(inputs))
}

/// Outcome of a Monte Carlo domination check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub draws: usize,
    pub violations: usize,
    pub frequency: f64,
    pub bound: f64,
    pub passed: bool,
}

impl TailCheck {
    fn new(draws: usize, violations: usize, bound: f64) -> Self {
        let frequency = violations as f64 / draws.max(1) as f64;
        Self {
            draws,
            violations,
            frequency,
            bound,
            passed: frequency <= bound,
        }
    }
}

const MC_SHARDS: u64 = 8;

/// Counts events over `draws` trials split into fixed shards, each on its own
/// ChaCha stream of `seed`, so the count does not depend on thread timing.
fn count_events<F>(draws: usize, seed: u64, event: F) -> usize
where
    F: Fn(&mut ChaCha8Rng) -> bool + Sync,
{
    let shards = MC_SHARDS as usize;
    std::thread::scope(|s| {
        let handles: Vec<_> = (0..shards)
            .map(|shard| {
                let event = &event;
                s.spawn(move || {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(shard as u64);
                    let share = draws / shards + usize::from(shard < draws % shards);
                    (0..share).filter(|_| event(&mut rng)).count()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("shard panicked")).sum()
    })
}

/// Empirical `P(χ²_m ≤ t·m)` against the clipped lower-tail bound.
pub fn verify_chi2_lower(t: f64, m: usize, draws: usize, seed: u64) -> TailCheck {
    let dist = ChiSquared::new(m as f64).expect("m >= 1");
    let cut = t * m as f64;
    let hits = count_events(draws, seed, |rng| rng.sample(dist) <= cut);
    TailCheck::new(draws, hits, chi2_lower_tail_bound(t, m).0)
}

/// Empirical `P(√χ²_m ≥ √m + √(2t))` against `exp(−t)`.
pub fn verify_chi2_upper(t: f64, m: usize, draws: usize, seed: u64) -> TailCheck {
    let dist = ChiSquared::new(m as f64).expect("m >= 1");
    let cut = (m as f64).sqrt() + (2.0 * t).sqrt();
    let hits = count_events(draws, seed, |rng| rng.sample(dist).sqrt() >= cut);
    TailCheck::new(draws, hits, chi2_upper_tail_bound(t))
}

/// Empirical `P(‖E‖_F ≥ σ√(dn+u))` for `d × n` iid Gaussian `E`.
pub fn verify_frobenius(n: usize, d: usize, u: f64, sigma: f64, draws: usize, seed: u64) -> TailCheck {
    let (threshold, bound) = frobenius_norm_tail(n, d, u, sigma);
    let hits = count_events(draws, seed, |rng| {
        let sq: f64 = (0..n * d)
            .map(|_| (sigma * rng.sample::<f64, _>(StandardNormal)).powi(2))
            .sum();
        sq.sqrt() >= threshold
    });
    TailCheck::new(draws, hits, bound)
}

/// Empirical `P(‖E‖ > σ(√n + 2√d))` for `d × n` iid Gaussian `E`.
pub fn verify_opnorm(n: usize, d: usize, sigma: f64, draws: usize, seed: u64) -> TailCheck {
    let (threshold, bound) = opnorm_bound(n, d, sigma);
    let hits = count_events(draws, seed, |rng| {
        let e = DMatrix::from_fn(d, n, |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
        op_norm(&e) > threshold
    });
    TailCheck::new(draws, hits, bound)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn pinned() -> BoundInputs {
        BoundInputs {
            n: 20,
            d: 6,
            k: 3,
            rank: 3,
            epsilon: 0.1,
            c_u: 30.0,
            c_o: 1.0,
            rho: 0.9,
            c_cov: 0.5,
            nu_min: 1.5,
            nu_max: 2.0,
            sigma_min: 0.5,
            sigma_max: 0.5,
            u: 2.0,
            coherence: 0.1,
            n_k_max: 7,
            mu_prior: 1.0,
        }
    }

    #[test]
    fn cu_condition_cases() {
        let mut inp = pinned();
        inp.c_o = 0.0;
        inp.c_u = 0.0;
        assert!(check_cu_condition(&inp, 1.0, 1.0).unwrap());
        // ε·ν_min/(‖M‖+‖E‖) = 0.1·60/2 = 3 and c_U(2 + c_U) = 3.
        inp.c_u = 1.0;
        inp.nu_min = 60.0;
        assert!(check_cu_condition(&inp, 1.5, 0.5).unwrap());
        inp.c_u = 1.0 + 1e-9;
        assert!(!check_cu_condition(&inp, 1.5, 0.5).unwrap());
        assert_eq!(check_cu_condition(&inp, 0.0, 0.0), Err(Error::DegenerateDenominator));
    }

    #[test]
    fn theorem1_pinned_value() {
        let inp = pinned();
        // Independent recomputation, term by term.
        let gap = (900.0f64 - 1.0).sqrt() / 1.0 - 60.0f64.sqrt();
        let prior = 1.0 / ((gap * gap / 2.0).exp() - 1.0);
        let cover = (60.0 - 6.0) * (1.0f64 / 0.9).ln() + 2.0f64.ln();
        let want = 1.1 * (1.0 + prior.sqrt() + cover.sqrt() + 2.1 * 2.0);
        let got = theorem1_rhs(&inp, 1.0).unwrap();
        assert!((got - want).abs() <= 1e-12 * want, "{got} vs {want}");
    }

    #[test]
    fn theorem1_vanishes_in_the_limit() {
        let mut inp = pinned();
        inp.nu_max = 0.0;
        inp.rho = 1.0;
        inp.c_cov = 1.0;
        inp.c_u = 1e6;
        let v = theorem1_rhs(&inp, 0.0).unwrap();
        assert!(v <= 1e-12, "{v}");
    }

    #[test]
    fn theorem1_vacuous_prior_mass() {
        let mut inp = pinned();
        inp.c_u = 5.0;
        assert!(matches!(theorem1_rhs(&inp, 0.0), Err(Error::VacuousBound(_))));
        assert!(matches!(lemma_kl_bound(&inp), Err(Error::VacuousBound(_))));
    }

    #[test]
    fn covering_examples() {
        assert_eq!(covering_number_bound(7, 3, 0.4, 0.4), 1.0);
        let v = covering_number_bound(2, 2, 0.25, 0.5);
        assert!((v - 2.0).abs() <= 1e-14);
        let l = log_covering_number_bound(12, 3, 0.01, 0.7);
        assert!((l - 30.0 * 70.0f64.ln()).abs() <= 1e-12 * l.abs());
    }

    #[test]
    fn chi2_lower_at_base_one() {
        let (clipped, raw) = chi2_lower_tail_bound(2.0 / E, 80);
        let want = 2.0 / (PI * 80.0).sqrt();
        assert!((raw - want).abs() <= 1e-14);
        assert_eq!(clipped, raw);
        let (clipped, raw) = chi2_lower_tail_bound(5.0, 4);
        assert!(raw > 1.0);
        assert_eq!(clipped, 1.0);
    }

    #[test]
    fn chi2_upper_examples() {
        assert_eq!(chi2_upper_tail_bound(0.0), 1.0);
        assert!(chi2_upper_tail_bound(3.0) < chi2_upper_tail_bound(2.0));
    }

    #[test]
    fn frobenius_and_opnorm_examples() {
        let (thr, p) = frobenius_norm_tail(20, 10, 1e-9, 1.0);
        assert!((thr - 200f64.sqrt()).abs() <= 1e-9);
        assert!((p - 1.0).abs() <= 1e-15);
        let (a, _) = frobenius_norm_tail(20, 10, 4.0, 1.0);
        let (b, _) = frobenius_norm_tail(20, 10, 4.0, 3.0);
        assert!((b - 3.0 * a).abs() <= 1e-12);
        assert_eq!(opnorm_bound(10, 5, 0.0).0, 0.0);
        assert!(opnorm_bound(11, 5, 1.0).0 > opnorm_bound(10, 5, 1.0).0);
        assert!(opnorm_bound(10, 6, 1.0).0 > opnorm_bound(10, 5, 1.0).0);
    }

    #[test]
    fn gershgorin_examples() {
        assert_eq!(gershgorin_m_bound(10, 0.0, 3), 1.0);
        assert_eq!(gershgorin_m_bound(10, 0.4, 1), 1.0);
        assert!((gershgorin_m_bound(10, 0.2, 3) - 5f64.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn t_range_inverse_arithmetic() {
        let mut inp = pinned();
        inp.epsilon = 0.0;
        let m = (20.0f64 * 17.0).sqrt();
        inp.nu_min = inp.sigma_min * m;
        inp.nu_max = inp.sigma_max * (2.0 + m).sqrt();
        let r = t_min_max(&inp, DimensionConvention::NBased).unwrap();
        assert!((r.t_min - 1.0).abs() <= 1e-12);
        assert!((r.t_max - 2.0).abs() <= 1e-12);
        assert!(!r.t_max_negative);
    }

    #[test]
    fn t_range_needs_room_for_the_residual() {
        let mut inp = pinned();
        inp.d = 3;
        assert!(t_min_max(&inp, DimensionConvention::NBased).is_ok());
        assert!(t_min_max(&inp, DimensionConvention::DBased).is_err());
    }

    #[test]
    fn t_range_random_recomputation() {
        let mut inp = pinned();
        for (i, &(nu_lo, nu_hi, eps)) in [(0.3, 9.0, 0.01), (2.0, 40.0, 0.2), (0.0, 1.0, 0.5)].iter().enumerate() {
            inp.nu_min = nu_lo;
            inp.nu_max = nu_hi;
            inp.epsilon = eps;
            inp.sigma_min = 0.3 + i as f64 * 0.1;
            for conv in DimensionConvention::ALL {
                let m = match conv {
                    DimensionConvention::NBased => 20.0 * 17.0,
                    DimensionConvention::DBased => 20.0 * 3.0,
                };
                let s = 4.0 * eps * (120.0f64 + 2.0).sqrt();
                let t_min = (nu_lo / inp.sigma_min + s).powi(2) / m;
                let t_max = (nu_hi / 0.5 - s).powi(2) - f64::sqrt(m);
                let r = t_min_max(&inp, conv).unwrap();
                assert!((r.t_min - t_min).abs() <= 1e-12 * t_min.max(1.0));
                assert!((r.t_max - t_max).abs() <= 1e-12 * t_max.abs().max(1.0));
            }
        }
    }

    #[test]
    fn failure_prob_limits() {
        let mut inp = pinned();
        inp.nu_min = 0.0;
        inp.epsilon = 1e-300;
        inp.nu_max = 1e6;
        let fp = theorem2_failure_prob(&inp, inp.c_cov, DimensionConvention::NBased).unwrap();
        let want = (-6.0f64).exp() + (-20.0f64 * 4.0 / 8.0).exp();
        assert!((fp.total - want).abs() <= 1e-15);
        assert_eq!(fp.net_term, 0.0);
        assert!(!fp.vacuous);
        assert!(fp.warnings.is_empty());
    }

    #[test]
    fn failure_prob_vacuous_and_warned() {
        let inp = pinned();
        let fp = theorem2_failure_prob(&inp, 0.01, DimensionConvention::NBased).unwrap();
        assert!(fp.total >= 0.0);
        assert!(fp.vacuous);
        let mut hot = pinned();
        hot.nu_min = 100.0;
        let fp = theorem2_failure_prob(&hot, 0.5, DimensionConvention::NBased).unwrap();
        assert!(fp.t_range.t_min >= 2.0 / E);
        assert!(fp.warnings.iter().any(|w| w.contains("2/e")));
    }

    #[test]
    fn failure_prob_pinned_recomputation() {
        let mut inp = pinned();
        inp.nu_min = 0.5;
        inp.nu_max = 40.0;
        inp.epsilon = 0.01;
        let eps_net = 0.45;
        for conv in DimensionConvention::ALL {
            let (m, cover_exp) = match conv {
                DimensionConvention::NBased => (20.0 * 17.0, 60.0 - 6.0),
                DimensionConvention::DBased => (20.0 * 3.0, 18.0 - 6.0),
            };
            let s = 4.0 * 0.01 * 122.0f64.sqrt();
            let t_min = (0.5 / 0.5 + s).powi(2) / m;
            let t_max = (40.0 / 0.5 - s).powi(2) - f64::sqrt(m);
            let cover = (0.5f64 / 0.45).powf(cover_exp);
            let lower = 2.0 / (PI * m).sqrt() * (t_min * E / 2.0).powf(m / 4.0);
            let want = (-6.0f64).exp() + (-20.0f64 * 4.0 / 8.0).exp() + cover * (lower + (-t_max).exp());
            let got = theorem2_failure_prob(&inp, eps_net, conv).unwrap().total;
            assert!((got - want).abs() <= 1e-12 * want, "{conv:?}: {got} vs {want}");
        }
    }

    #[test]
    fn integral_bound_examples() {
        assert_eq!(lemma_integral_bound(2.5, 0.0, 4.0, 1.0), 6.25);
        assert_eq!(lemma_integral_bound(0.0, 1.0, 0.5, 0.5), 9.0);
        let (x, c, m, e) = (1.3, 0.2, 2.1, 0.7);
        let want = (x + c * (2.0 + c) * (m + e)) * (x + c * (2.0 + c) * (m + e));
        assert!((lemma_integral_bound(x, c, m, e) - want).abs() <= 1e-12);
    }

    #[test]
    fn kl_bound_examples() {
        let mut inp = pinned();
        inp.rho = 1.0;
        inp.c_cov = 1.0;
        inp.c_u = 1e6;
        assert!(lemma_kl_bound(&inp).unwrap() <= 1e-12);
        let mut base = pinned();
        base.c_u = 9.0;
        let mut more = base.clone();
        more.c_o = 3.0;
        assert!(lemma_kl_bound(&more).unwrap() > lemma_kl_bound(&base).unwrap());
        let gap = 80.0f64.sqrt() - 60.0f64.sqrt();
        let want = 1.0 / ((gap * gap / 2.0).exp() - 1.0) + 54.0 * (1.0f64 / 0.9).ln() + 2.0f64.ln();
        assert!((lemma_kl_bound(&base).unwrap() - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn input_validation() {
        let mut inp = pinned();
        inp.c_o = inp.c_u;
        assert!(inp.validate().is_err());
        let mut inp = pinned();
        inp.epsilon = 0.0;
        assert!(inp.validate().is_err());
        assert!(theorem2_failure_prob(&pinned(), 0.0, DimensionConvention::NBased).is_err());
    }

    #[test]
    fn tail_checks_dominate_on_small_grids() {
        assert!(verify_chi2_lower(0.2, 80, 20_000, 1).passed);
        assert!(verify_chi2_upper(2.0, 80, 20_000, 2).passed);
        assert!(verify_opnorm(40, 20, 1.0, 50, 3).passed);
    }

    #[test]
    fn tail_checks_are_reproducible() {
        assert_eq!(verify_chi2_upper(1.0, 10, 5000, 9), verify_chi2_upper(1.0, 10, 5000, 9));
        let c = verify_chi2_upper(1.0, 10, 5001, 9);
        assert_eq!(c.draws, 5001);
    }

    fn monotone_pair() -> impl Strategy<Value = (f64, f64)> {
        (0.0f64..50.0, 1e-3f64..10.0).prop_map(|(a, d)| (a, a + d))
    }

    proptest! {
        #[test]
        fn theorem1_monotone((lo, hi) in monotone_pair(), oracle in 0.0f64..5.0) {
            let mut a = pinned();
            let mut b = pinned();
            a.nu_max = lo;
            b.nu_max = hi;
            prop_assert!(theorem1_rhs(&a, oracle).unwrap() < theorem1_rhs(&b, oracle).unwrap());
            prop_assert!(theorem1_rhs(&a, lo).unwrap() < theorem1_rhs(&a, hi).unwrap());
            // Larger c_O shrinks the prior-mass gap.
            let mut c = pinned();
            c.c_o = 1.0 + lo / 10.0;
            let mut e = pinned();
            e.c_o = 1.0 + hi / 10.0;
            prop_assert!(theorem1_rhs(&c, oracle).unwrap() <= theorem1_rhs(&e, oracle).unwrap());
        }

        #[test]
        fn failure_prob_monotone((lo, hi) in monotone_pair()) {
            for conv in DimensionConvention::ALL {
                // Increasing ν_min raises t_min and the lower-tail term.
                let mut a = pinned();
                let mut b = pinned();
                a.nu_min = lo / 10.0;
                b.nu_min = hi / 10.0;
                let pa = theorem2_failure_prob(&a, 0.4, conv).unwrap().total;
                let pb = theorem2_failure_prob(&b, 0.4, conv).unwrap().total;
                prop_assert!(pa <= pb);
                // A finer net costs more.
                let fine = theorem2_failure_prob(&a, 0.4 / (1.0 + hi), conv).unwrap().total;
                prop_assert!(pa <= fine);
            }
        }

        #[test]
        fn chi2_lower_increasing_in_t((lo, hi) in monotone_pair(), m in 1usize..200) {
            prop_assume!(lo > 0.0);
            prop_assert!(chi2_lower_tail_bound(lo, m).1 < chi2_lower_tail_bound(hi, m).1);
        }

        #[test]
        fn calculators_are_pure(eps in 0.01f64..1.0) {
            let mut inp = pinned();
            inp.epsilon = eps;
            prop_assert_eq!(theorem1_rhs(&inp, 0.3).unwrap(), theorem1_rhs(&inp, 0.3).unwrap());
            prop_assert_eq!(
                theorem2_failure_prob(&inp, 0.2, DimensionConvention::DBased).unwrap(),
                theorem2_failure_prob(&inp, 0.2, DimensionConvention::DBased).unwrap()
            );
        }
    }
}
