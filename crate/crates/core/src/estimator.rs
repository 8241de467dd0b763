//! Posterior mean `Û`, plug-in cluster matrix `ÛÛᵗ` and hard labels.
//!
//! The posterior is invariant under column permutations and column sign
//! flips of `U`, so raw averaging of samples cancels mass. Each sample is
//! first aligned to the running mean: columns are matched greedily by
//! absolute correlation and flipped so the matched inner product is
//! nonnegative. Continuous rotations of the columns are not undone.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::model::Labeling;
use crate::sampler::ChainTrace;

/// Seed and restart count of the k-means fallback in [`extract_labels`].
pub const KMEANS_SEED: u64 = 0x6b6d_6561_6e73;
pub const KMEANS_RESTARTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Alignment {
    #[default]
    Greedy,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub u_hat: DMatrix<f64>,
    pub t_hat: DMatrix<f64>,
    pub n_samples_used: usize,
    /// Entrywise standard deviation of the aligned samples.
    pub u_spread: DMatrix<f64>,
}

impl PosteriorEstimate {
    pub fn from_u(u_hat: DMatrix<f64>) -> Self {
        let t_hat = &u_hat * u_hat.transpose();
        let u_spread = DMatrix::zeros(u_hat.nrows(), u_hat.ncols());
        Self {
            u_hat,
            t_hat,
            n_samples_used: 1,
            u_spread,
        }
    }
}

/// Reorders and flips the columns of `sample` to best match `reference`.
pub fn align_to(reference: &DMatrix<f64>, sample: &DMatrix<f64>) -> DMatrix<f64> {
    let r = sample.ncols();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(r * r);
    for a in 0..r {
        let na = reference.column(a).norm();
        for b in 0..r {
            let nb = sample.column(b).norm();
            let denom = na * nb;
            let corr = if denom > 0.0 {
                (reference.column(a).dot(&sample.column(b)) / denom).abs()
            } else {
                0.0
            };
            pairs.push((corr, a, b));
        }
    }
    // Largest correlation first; ties resolved by (reference, sample) index.
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut target_of = vec![usize::MAX; r];
    let mut used = vec![false; r];
    for (_, a, b) in pairs {
        if target_of[a] == usize::MAX && !used[b] {
            target_of[a] = b;
            used[b] = true;
        }
    }

    let mut out = DMatrix::<f64>::zeros(sample.nrows(), r);
    for a in 0..r {
        let b = target_of[a];
        let sign = if reference.column(a).dot(&sample.column(b)) < 0.0 {
            -1.0
        } else {
            1.0
        };
        out.set_column(a, &(sample.column(b) * sign));
    }
    out
}

/// Mean of a sequence of factor samples.
pub fn mean_of_samples(samples: &[DMatrix<f64>], alignment: Alignment) -> Result<PosteriorEstimate> {
    let first = samples.first().ok_or(Error::EmptyTrace)?;
    let mut sum = DMatrix::<f64>::zeros(first.nrows(), first.ncols());
    let mut sum_sq = sum.clone();
    for (count, s) in samples.iter().enumerate() {
        let aligned = match alignment {
            Alignment::Greedy if count > 0 => align_to(&(&sum / count as f64), s),
            _ => s.clone(),
        };
        sum_sq += aligned.component_mul(&aligned);
        sum += aligned;
    }
    let k = samples.len() as f64;
    let u_hat = sum / k;
    let u_spread = (sum_sq / k - u_hat.component_mul(&u_hat)).map(|v| v.max(0.0).sqrt());
    let t_hat = &u_hat * u_hat.transpose();
    Ok(PosteriorEstimate {
        u_hat,
        t_hat,
        n_samples_used: samples.len(),
        u_spread,
    })
}

/// `Û` = aligned mean of the stored `U` samples; `T̂ = ÛÛᵗ`.
pub fn posterior_mean(trace: &ChainTrace, alignment: Alignment) -> Result<PosteriorEstimate> {
    mean_of_samples(&trace.stored_u(), alignment)
}

/// `label(i) = argmax_{r < K} |Û_{i,r}|` (smallest `r` on ties). If a label
/// ends up unused the rows of `Û` are clustered with k-means instead.
pub fn extract_labels(estimate: &PosteriorEstimate, k: usize) -> Result<Labeling> {
    let u = &estimate.u_hat;
    let n = u.nrows();
    if k == 0 || k > u.ncols() || k > n {
        return Err(Error::InvalidParameter(format!(
            "cannot extract {k} clusters from a {}x{} estimate",
            n,
            u.ncols()
        )));
    }
    let labels: Vec<usize> = (0..n)
        .map(|i| {
            let mut best = 0;
            for r in 1..k {
                if u[(i, r)].abs() > u[(i, best)].abs() {
                    best = r;
                }
            }
            best
        })
        .collect();
    match Labeling::new(labels, k) {
        Ok(l) => Ok(l),
        Err(_) => {
            let fit = kmeans(u, k, KMEANS_RESTARTS, KMEANS_SEED);
            Labeling::new(fit.labels, k)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::partition_agreement;
    use crate::linalg::gaussian_matrix;
    use crate::model::build_ideal;
    use crate::stiefel::permute_columns;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_sample_is_its_own_mean() {
        let u = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(1), 5, 2);
        let est = mean_of_samples(std::slice::from_ref(&u), Alignment::Greedy).unwrap();
        assert_eq!(est.u_hat, u);
        assert_eq!(est.n_samples_used, 1);
        assert!((&est.t_hat - &u * u.transpose()).norm() <= 1e-12);
    }

    #[test]
    fn opposite_samples_cancel_without_alignment() {
        let u = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(2), 5, 2);
        let neg = -u.clone();
        let raw = mean_of_samples(&[u.clone(), neg.clone()], Alignment::None).unwrap();
        assert_eq!(raw.u_hat.norm(), 0.0);
        let aligned = mean_of_samples(&[u.clone(), neg], Alignment::Greedy).unwrap();
        assert!((aligned.u_hat - u).norm() <= 1e-14);
    }

    #[test]
    fn aligned_mean_matches_summation() {
        let mut g = ChaCha8Rng::seed_from_u64(3);
        let base = gaussian_matrix(&mut g, 6, 3);
        let perms = [[0, 1, 2], [2, 0, 1], [1, 2, 0], [0, 2, 1]];
        let samples: Vec<DMatrix<f64>> = (0..12)
            .map(|i| {
                let noisy = &base + gaussian_matrix(&mut g, 6, 3) * 0.05;
                let mut s = permute_columns(&noisy, &perms[i % 4]);
                if i % 3 == 0 {
                    s.column_mut(1).neg_mut();
                }
                s
            })
            .collect();
        let est = mean_of_samples(&samples, Alignment::Greedy).unwrap();

        let mut total = samples[0].clone();
        let mut aligned = vec![samples[0].clone()];
        for (i, s) in samples.iter().enumerate().skip(1) {
            let a = align_to(&(&total / i as f64), s);
            total += &a;
            aligned.push(a);
        }
        let mut brute = DMatrix::<f64>::zeros(6, 3);
        for a in &aligned {
            for idx in 0..brute.len() {
                brute[idx] += a[idx];
            }
        }
        brute /= aligned.len() as f64;
        assert!((&est.u_hat - brute).norm() <= 1e-14);
        // Alignment undid the relabelings, relative to the first sample's
        // orientation (its column 1 is flipped).
        let mut oriented = base.clone();
        oriented.column_mut(1).neg_mut();
        assert!((&est.u_hat - &oriented).norm() <= 0.1);
    }

    #[test]
    fn constant_sequence_averages_to_constant() {
        let u = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(4), 4, 2);
        let est = mean_of_samples(&vec![u.clone(); 9], Alignment::Greedy).unwrap();
        assert!((est.u_hat - u).norm() <= 1e-14);
        assert!(est.u_spread.max() <= 1e-7);
    }

    #[test]
    fn empty_sequence_errors() {
        assert_eq!(mean_of_samples(&[], Alignment::Greedy), Err(Error::EmptyTrace));
    }

    #[test]
    fn t_hat_norm_sanity_bound() {
        let u = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(5), 7, 3);
        let est = PosteriorEstimate::from_u(u.clone());
        let row_max = (0..7).map(|i| u.row(i).norm_squared()).fold(0.0, f64::max);
        // ‖ÛÛᵗ‖ = ‖Û‖² ≤ ‖Û‖_F² ≤ n · max_i ‖row_i‖².
        assert!(crate::linalg::op_norm(&est.t_hat) <= 7.0 * row_max * (1.0 + 1e-12));
        assert!((&est.t_hat - est.t_hat.transpose()).norm() == 0.0);
    }

    #[test]
    fn labels_from_ideal_factor() {
        let truth = Labeling::new(vec![0, 1, 2, 0, 1, 2, 2, 0], 3).unwrap();
        let u_star = build_ideal(&truth).u_star;
        let got = extract_labels(&PosteriorEstimate::from_u(u_star.clone()), 3).unwrap();
        assert_eq!(got, truth);

        let swapped = permute_columns(&u_star, &[2, 0, 1]);
        let got = extract_labels(&PosteriorEstimate::from_u(swapped), 3).unwrap();
        assert_eq!(partition_agreement(&truth, &got).0, 1.0);
    }

    #[test]
    fn labels_stable_under_small_perturbation() {
        let truth = Labeling::new((0..12).map(|i| i % 3).collect(), 3).unwrap();
        let u_star = build_ideal(&truth).u_star;
        // Ideal entries are 1/2; the perturbation stays well below the margin.
        let noise = gaussian_matrix(&mut ChaCha8Rng::seed_from_u64(6), 12, 3) * 0.01;
        assert!(noise.abs().max() < 0.25);
        let got = extract_labels(&PosteriorEstimate::from_u(u_star + noise), 3).unwrap();
        assert_eq!(got, truth);
    }

    #[test]
    fn sign_flips_do_not_change_partition() {
        let truth = Labeling::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        let mut u = build_ideal(&truth).u_star;
        u.column_mut(1).neg_mut();
        let got = extract_labels(&PosteriorEstimate::from_u(u), 3).unwrap();
        assert_eq!(got, truth);
    }

    #[test]
    fn fallback_when_argmax_leaves_cluster_empty() {
        // Rows of two clusters share the same dominant column.
        let u = DMatrix::from_row_slice(
            6,
            3,
            &[
                0.9, 0.1, 0.0, 0.9, 0.1, 0.0, 0.7, -0.5, 0.0, 0.7, -0.5, 0.0, 0.0, 0.0, 0.8, 0.0,
                0.0, 0.8,
            ],
        );
        let got = extract_labels(&PosteriorEstimate::from_u(u), 3).unwrap();
        let truth = Labeling::new(vec![0, 0, 1, 1, 2, 2], 3).unwrap();
        assert_eq!(partition_agreement(&truth, &got).0, 1.0);
    }
}
