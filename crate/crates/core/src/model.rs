//! The statistical model: `X = M + E`, the ideal matrices `T*`, `U*`, the
//! Gaussian coupling prior of `U` around `|O|`, and the tempered loss.
//!
//! Log-densities keep their normalizing constants so values from different
//! components can be compared directly. The Gibbs normalizer `Z_λ` and the
//! constant Haar density of `O` are never evaluated.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::linalg::signum0;
use crate::stiefel::StiefelPoint;

/// Hard assignment of `n` points to `K` nonempty clusters, stored 0-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeling {
    labels: Vec<usize>,
    k: usize,
    sizes: Vec<usize>,
}

impl Labeling {
    /// `labels[i] ∈ 0..k`; every cluster must be nonempty.
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidLabeling("K must be at least 1".into()));
        }
        let mut sizes = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::InvalidLabeling(format!(
                    "label {l} of point {i} is outside 0..{k}"
                )));
            }
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidLabeling(format!("cluster {empty} is empty")));
        }
        Ok(Self { labels, k, sizes })
    }

    /// Relabels arbitrary integer ids to `0..K` in order of first appearance.
    pub fn from_ids<T: Copy + Eq + std::hash::Hash>(ids: &[T]) -> Result<Self> {
        let mut map = std::collections::HashMap::new();
        let labels: Vec<usize> = ids
            .iter()
            .map(|id| {
                let next = map.len();
                *map.entry(*id).or_insert(next)
            })
            .collect();
        let k = map.len();
        Self::new(labels, k)
    }

    /// Labels in `1..=K`, as written to files.
    pub fn from_one_based(labels: &[usize]) -> Result<Self> {
        let k = labels.iter().copied().max().unwrap_or(0);
        if labels.iter().any(|&l| l == 0) {
            return Err(Error::InvalidLabeling("one-based labels must be >= 1".into()));
        }
        Self::new(labels.iter().map(|l| l - 1).collect(), k)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l + 1).collect()
    }

    pub fn n(&self) -> usize {
        self.labels.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cluster_sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Index sets `I_1, …, I_K`.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Permutation listing all points of cluster 0, then cluster 1, ….
    pub fn clusterwise_order(&self) -> Vec<usize> {
        self.members().into_iter().flatten().collect()
    }
}

/// Generating means, noise and labels behind an observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub m: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub labels: Labeling,
}

/// Observation matrix `X` (`d × n`, one column per point).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    x: DMatrix<f64>,
    truth: Option<GroundTruth>,
}

impl DataMatrix {
    pub fn new(x: DMatrix<f64>) -> Result<Self> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("data contains non-finite entries".into()));
        }
        if x.ncols() == 0 || x.nrows() == 0 {
            return Err(Error::InvalidParameter("data matrix is empty".into()));
        }
        Ok(Self { x, truth: None })
    }

    /// Builds `X = M + E` and keeps the parts as ground truth.
    pub fn from_parts(m: DMatrix<f64>, e: DMatrix<f64>, labels: Labeling) -> Result<Self> {
        check_shape("ground truth", m.shape(), e.shape())?;
        if labels.n() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "labels",
                expected: (m.ncols(), 1),
                got: (labels.n(), 1),
            });
        }
        let x = &m + &e;
        let mut data = Self::new(x)?;
        data.truth = Some(GroundTruth { m, e, labels });
        Ok(data)
    }

    /// Attaches means to an existing observation; the noise is recovered as
    /// `X − M`.
    pub fn with_means(self, m: DMatrix<f64>, labels: Labeling) -> Result<Self> {
        check_shape("means", self.x.shape(), m.shape())?;
        if labels.n() != m.ncols() {
            return Err(Error::DimensionMismatch {
                context: "labels",
                expected: (m.ncols(), 1),
                got: (labels.n(), 1),
            });
        }
        let e = &self.x - &m;
        Ok(Self {
            x: self.x,
            truth: Some(GroundTruth { m, e, labels }),
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn ground_truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

/// `T* = U*U*ᵗ` and its explicit factor.
#[derive(Debug, Clone, PartialEq)]
pub struct IdealClusterMatrices {
    pub t_star: DMatrix<f64>,
    pub u_star: DMatrix<f64>,
}

/// `T*_{ij} = 1/n_k` when `i, j` share cluster `k`, and column `k` of `U*`
/// is the normalized indicator of cluster `k`.
pub fn build_ideal(labels: &Labeling) -> IdealClusterMatrices {
    let n = labels.n();
    let k = labels.k();
    let sizes = labels.cluster_sizes();
    let l = labels.labels();
    let u_star = DMatrix::from_fn(n, k, |i, c| {
        if l[i] == c {
            1.0 / (sizes[c] as f64).sqrt()
        } else {
            0.0
        }
    });
    let t_star = DMatrix::from_fn(n, n, |i, j| {
        if l[i] == l[j] {
            1.0 / sizes[l[i]] as f64
        } else {
            0.0
        }
    });
    IdealClusterMatrices { t_star, u_star }
}

/// Sampler state: unconstrained `U` and latent `O`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub u: DMatrix<f64>,
    pub o: StiefelPoint,
}

impl LatentState {
    pub fn new(u: DMatrix<f64>, o: StiefelPoint) -> Result<Self> {
        check_shape("latent state", o.shape(), u.shape())?;
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("U has non-finite entries".into()));
        }
        Ok(Self { u, o })
    }
}

/// Inverse temperature `λ`, prior width `μ` and factor rank `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub lambda: f64,
    pub mu_prior: f64,
    pub rank: usize,
}

impl ModelParams {
    /// `λ = 0` is accepted: it switches the loss off and leaves the prior.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.mu_prior > 0.0 && self.mu_prior.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "mu_prior must be positive, got {}",
                self.mu_prior
            )));
        }
        if self.rank == 0 || self.rank > n {
            return Err(Error::InvalidParameter(format!(
                "rank must satisfy 1 <= R <= n = {n}, got {}",
                self.rank
            )));
        }
        Ok(())
    }
}

fn check_factor(context: &'static str, x: &DMatrix<f64>, u: &DMatrix<f64>) -> Result<()> {
    if u.nrows() != x.ncols() {
        return Err(Error::DimensionMismatch {
            context,
            expected: (x.ncols(), u.ncols()),
            got: u.shape(),
        });
    }
    Ok(())
}

/// `‖X − XUUᵗ‖_F²`.
pub fn loss(x: &DataMatrix, u: &DMatrix<f64>) -> Result<f64> {
    check_factor("loss", x.x(), u)?;
    Ok(residual(x.x(), u).norm_squared())
}

fn residual(x: &DMatrix<f64>, u: &DMatrix<f64>) -> DMatrix<f64> {
    let xu = x * u;
    x - xu * u.transpose()
}

/// Gradient of `U ↦ ‖X − XUUᵗ‖_F²`:
/// `−2 (XᵗR + RᵗX) U` with `R = X − XUUᵗ`.
pub fn loss_gradient_u(x: &DataMatrix, u: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_factor("loss_gradient_u", x.x(), u)?;
    let x = x.x();
    let xu = x * u;
    let r = x - &xu * u.transpose();
    let ru = &r * u;
    Ok((x.tr_mul(&ru) + r.tr_mul(&xu)) * -2.0)
}

/// `log π(U | O) = −‖U − |O|‖_F² / (2μ²) − nR log(√(2π) μ)`.
pub fn log_prior_u_given_o(u: &DMatrix<f64>, o: &StiefelPoint, mu_prior: f64) -> Result<f64> {
    check_shape("log_prior_u_given_o", o.shape(), u.shape())?;
    let dist = (u - o.matrix().abs()).norm_squared();
    let count = (u.nrows() * u.ncols()) as f64;
    Ok(-dist / (2.0 * mu_prior * mu_prior) - count * ((2.0 * PI).sqrt() * mu_prior).ln())
}

/// `−(λ/2) ‖X − XUUᵗ‖_F² + log π(U | O)`.
pub fn log_posterior_unnormalized(
    x: &DataMatrix,
    state: &LatentState,
    params: &ModelParams,
) -> Result<f64> {
    let prior = log_prior_u_given_o(&state.u, &state.o, params.mu_prior)?;
    if params.lambda == 0.0 {
        return Ok(prior);
    }
    Ok(-0.5 * params.lambda * loss(x, &state.u)? + prior)
}

/// Euclidean partial of `log π(U | O)` in `O`:
/// `sign(O) ⊙ (U − |O|) / μ²`, with `sign(0) = 0`.
pub fn grad_o_log_prior(
    u: &DMatrix<f64>,
    o: &StiefelPoint,
    mu_prior: f64,
) -> Result<DMatrix<f64>> {
    check_shape("grad_o_log_prior", o.shape(), u.shape())?;
    let inv = 1.0 / (mu_prior * mu_prior);
    Ok(o
        .matrix()
        .zip_map(u, |oi, ui| signum0(oi) * (ui - oi.abs()) * inv))
}

/// Euclidean partial of `log π(U | O)` in `U`: `−(U − |O|) / μ²`.
pub fn grad_u_log_prior(
    u: &DMatrix<f64>,
    o: &StiefelPoint,
    mu_prior: f64,
) -> Result<DMatrix<f64>> {
    check_shape("grad_u_log_prior", o.shape(), u.shape())?;
    let inv = 1.0 / (mu_prior * mu_prior);
    Ok(o.matrix().zip_map(u, |oi, ui| -(ui - oi.abs()) * inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gaussian_matrix;
    use crate::stiefel::{permute_columns, sample_uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn data(x: DMatrix<f64>) -> DataMatrix {
        DataMatrix::new(x).unwrap()
    }

    #[test]
    fn ideal_for_small_labeling() {
        let labels = Labeling::new(vec![0, 0, 1], 2).unwrap();
        let ideal = build_ideal(&labels);
        let t = DMatrix::from_row_slice(3, 3, &[0.5, 0.5, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(ideal.t_star, t);
        let s = 1.0 / 2f64.sqrt();
        let u = DMatrix::from_row_slice(3, 2, &[s, 0.0, s, 0.0, 0.0, 1.0]);
        assert_eq!(ideal.u_star, u);
    }

    #[test]
    fn ideal_for_one_cluster_and_singletons() {
        let n = 5;
        let one = build_ideal(&Labeling::new(vec![0; n], 1).unwrap());
        assert!((one.t_star - DMatrix::from_element(n, n, 1.0 / n as f64)).norm() < 1e-15);
        let single = build_ideal(&Labeling::new((0..n).collect(), n).unwrap());
        assert_eq!(single.t_star, DMatrix::identity(n, n));
    }

    #[test]
    fn empty_cluster_rejected() {
        assert!(matches!(
            Labeling::new(vec![0, 0, 2], 3),
            Err(Error::InvalidLabeling(_))
        ));
        assert!(Labeling::from_one_based(&[1, 0]).is_err());
        let l = Labeling::from_one_based(&[2, 1, 2]).unwrap();
        assert_eq!(l.labels(), &[1, 0, 1]);
        assert_eq!(l.one_based(), vec![2, 1, 2]);
    }

    #[test]
    fn labels_recovered_from_support_of_u_star() {
        let labels = Labeling::new(vec![2, 0, 1, 1, 2, 0, 2], 3).unwrap();
        let ideal = build_ideal(&labels);
        let recovered: Vec<usize> = (0..labels.n())
            .map(|i| (0..3).find(|&c| ideal.u_star[(i, c)] > 0.0).unwrap())
            .collect();
        assert_eq!(recovered, labels.labels());
    }

    #[test]
    fn loss_at_ideal_on_exact_means_is_zero() {
        let labels = Labeling::new(vec![0, 1, 0, 1, 1], 2).unwrap();
        let means = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 0.0]);
        let m = DMatrix::from_fn(3, 5, |r, i| means[(r, labels.labels()[i])]);
        let ideal = build_ideal(&labels);
        assert!((&m * &ideal.t_star - &m).norm() <= 1e-10);
        let l = loss(&data(m), &ideal.u_star).unwrap();
        assert!(l <= 1e-20, "{l:e}");
    }

    #[test]
    fn loss_of_zero_factor_is_data_energy() {
        let x = gaussian_matrix(&mut rng(1), 4, 6);
        let l = loss(&data(x.clone()), &DMatrix::zeros(6, 2)).unwrap();
        assert!((l - x.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn loss_matches_double_loop() {
        let mut g = rng(2);
        let x = gaussian_matrix(&mut g, 4, 6);
        let u = sample_uniform(6, 2, &mut g).unwrap().into_matrix();
        let mut brute = 0.0;
        for a in 0..4 {
            for j in 0..6 {
                let mut fitted = 0.0;
                for i in 0..6 {
                    let mut uu = 0.0;
                    for r in 0..2 {
                        uu += u[(i, r)] * u[(j, r)];
                    }
                    fitted += x[(a, i)] * uu;
                }
                brute += (x[(a, j)] - fitted).powi(2);
            }
        }
        let l = loss(&data(x), &u).unwrap();
        assert!((l - brute).abs() <= 1e-12);
    }

    #[test]
    fn loss_shape_mismatch() {
        let x = data(DMatrix::zeros(3, 4));
        assert!(matches!(
            loss(&x, &DMatrix::zeros(5, 2)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(loss_gradient_u(&x, &DMatrix::zeros(3, 2)).is_err());
    }

    fn fd_gradient(x: &DataMatrix, u: &DMatrix<f64>, step: f64) -> DMatrix<f64> {
        DMatrix::from_fn(u.nrows(), u.ncols(), |i, r| {
            let mut up = u.clone();
            up[(i, r)] += step;
            let mut dn = u.clone();
            dn[(i, r)] -= step;
            (loss(x, &up).unwrap() - loss(x, &dn).unwrap()) / (2.0 * step)
        })
    }

    #[test]
    fn gradient_zero_cases() {
        let u = gaussian_matrix(&mut rng(3), 5, 2);
        let g = loss_gradient_u(&data(DMatrix::zeros(3, 5)), &u).unwrap();
        assert_eq!(g.norm(), 0.0);

        // X whose rows lie in the span of an orthonormal U.
        let mut gg = rng(4);
        let basis = sample_uniform(5, 2, &mut gg).unwrap().into_matrix();
        let coeffs = gaussian_matrix(&mut gg, 3, 2);
        let x = data(coeffs * basis.transpose());
        let g = loss_gradient_u(&x, &basis).unwrap();
        assert!(g.norm() <= 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut g = rng(5);
        let x = data(gaussian_matrix(&mut g, 3, 5));
        let u = gaussian_matrix(&mut g, 5, 2);
        let analytic = loss_gradient_u(&x, &u).unwrap();
        let fd = fd_gradient(&x, &u, 1e-6);
        for (a, f) in analytic.iter().zip(fd.iter()) {
            let rel = (a - f).abs() / a.abs().max(1e-8);
            assert!(rel <= 1e-5, "analytic={a} fd={f}");
        }
    }

    #[test]
    fn prior_values() {
        let mut g = rng(6);
        let o = sample_uniform(4, 2, &mut g).unwrap();
        let mode = o.matrix().abs();
        let mu = 0.3;
        let at_mode = log_prior_u_given_o(&mode, &o, mu).unwrap();
        let want = -8.0 * ((2.0 * PI).sqrt() * mu).ln();
        assert!((at_mode - want).abs() < 1e-12);
        let doubled = log_prior_u_given_o(&mode, &o, 2.0 * mu).unwrap();
        assert!((doubled - at_mode + 8.0 * 2f64.ln()).abs() < 1e-12);

        let u = gaussian_matrix(&mut g, 4, 2);
        let scalar: f64 = u
            .iter()
            .zip(o.matrix().iter())
            .map(|(ui, oi)| {
                let z = (ui - oi.abs()) / mu;
                -0.5 * z * z - ((2.0 * PI).sqrt() * mu).ln()
            })
            .sum();
        assert!((log_prior_u_given_o(&u, &o, mu).unwrap() - scalar).abs() < 1e-12);
    }

    #[test]
    fn posterior_composition() {
        let mut g = rng(7);
        let x = data(gaussian_matrix(&mut g, 3, 6));
        let o = sample_uniform(6, 2, &mut g).unwrap();
        let u = gaussian_matrix(&mut g, 6, 2);
        let state = LatentState::new(u.clone(), o.clone()).unwrap();
        let zero = ModelParams { lambda: 0.0, mu_prior: 0.2, rank: 2 };
        assert_eq!(
            log_posterior_unnormalized(&x, &state, &zero).unwrap(),
            log_prior_u_given_o(&u, &o, 0.2).unwrap()
        );

        let params = ModelParams { lambda: 1.7, mu_prior: 0.2, rank: 2 };
        let l = (x.x() - x.x() * &u * u.transpose()).norm_squared();
        let p = (&u - o.matrix().abs()).norm_squared();
        let want = -0.85 * l - p / (2.0 * 0.04) - 12.0 * ((2.0 * PI).sqrt() * 0.2).ln();
        let got = log_posterior_unnormalized(&x, &state, &params).unwrap();
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
    }

    #[test]
    fn posterior_decreases_with_loss() {
        let mut g = rng(8);
        let o = sample_uniform(5, 1, &mut g).unwrap();
        let u = o.matrix().abs();
        let state = LatentState::new(u.clone(), o).unwrap();
        let params = ModelParams { lambda: 2.0, mu_prior: 0.5, rank: 1 };
        let x_small = data(DMatrix::from_fn(2, 5, |_, j| u[(j, 0)]));
        let x_large = data(gaussian_matrix(&mut g, 2, 5) * 3.0);
        let (ls, ll) = (loss(&x_small, &u).unwrap(), loss(&x_large, &u).unwrap());
        assert!(ls < ll);
        assert!(
            log_posterior_unnormalized(&x_small, &state, &params).unwrap()
                > log_posterior_unnormalized(&x_large, &state, &params).unwrap()
        );
    }

    #[test]
    fn posterior_is_column_permutation_invariant() {
        let mut g = rng(9);
        let x = data(gaussian_matrix(&mut g, 4, 7));
        let o = sample_uniform(7, 3, &mut g).unwrap();
        let u = gaussian_matrix(&mut g, 7, 3);
        let params = ModelParams { lambda: 3.0, mu_prior: 0.4, rank: 3 };
        let perm = [2, 0, 1];
        let a = log_posterior_unnormalized(&x, &LatentState::new(u.clone(), o.clone()).unwrap(), &params)
            .unwrap();
        let b = log_posterior_unnormalized(
            &x,
            &LatentState::new(permute_columns(&u, &perm), o.permute_columns(&perm)).unwrap(),
            &params,
        )
        .unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn prior_gradient_in_o() {
        let mut g = rng(10);
        let o = sample_uniform(5, 2, &mut g).unwrap();
        let mu = 0.7;
        let at_mode = grad_o_log_prior(&o.matrix().abs(), &o, mu).unwrap();
        assert_eq!(at_mode.norm(), 0.0);

        let u = gaussian_matrix(&mut g, 5, 2);
        let analytic = grad_o_log_prior(&u, &o, mu).unwrap();
        // Finite differences of the prior in the ambient coordinates of O.
        let log_prior = |om: &DMatrix<f64>| -> f64 {
            -(&u - om.abs()).norm_squared() / (2.0 * mu * mu)
        };
        let step = 1e-7;
        for i in 0..5 {
            for r in 0..2 {
                if o.matrix()[(i, r)].abs() <= 1e-3 {
                    continue;
                }
                let mut up = o.matrix().clone();
                up[(i, r)] += step;
                let mut dn = o.matrix().clone();
                dn[(i, r)] -= step;
                let fd = (log_prior(&up) - log_prior(&dn)) / (2.0 * step);
                let a = analytic[(i, r)];
                assert!((a - fd).abs() / a.abs().max(1e-8) <= 1e-5, "a={a} fd={fd}");
            }
        }

        // Odd symmetry: flipping the signs of row 1 (which keeps O on the
        // manifold) flips exactly those gradient entries.
        let mut flipped = o.matrix().clone();
        flipped.row_mut(1).neg_mut();
        let flipped = StiefelPoint::new(flipped).unwrap();
        let gf = grad_o_log_prior(&u, &flipped, mu).unwrap();
        for i in 0..5 {
            for r in 0..2 {
                let sign = if i == 1 { -1.0 } else { 1.0 };
                assert_eq!(gf[(i, r)], sign * analytic[(i, r)]);
            }
        }
    }
}
