//! Synthetic Gaussian mixtures with unit-norm, exactly `μ`-coherent means,
//! and plug-in estimates of the noise functionals `ν_min`, `ν_max`.

use nalgebra::{Cholesky, DMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::orthonormality_residual;
use crate::model::{build_ideal, DataMatrix, Labeling};
use crate::stiefel::sample_uniform;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub n: usize,
    pub d: usize,
    pub k: usize,
    pub cluster_sizes: Vec<usize>,
    /// Common inner product `⟨μ_k, μ_j⟩` of distinct means.
    pub coherence: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl MixtureSpec {
    /// Near-equal cluster sizes; the first `n mod k` clusters get one extra.
    pub fn balanced(n: usize, d: usize, k: usize, coherence: f64, sigma: f64, seed: u64) -> Self {
        let cluster_sizes = if k == 0 {
            Vec::new()
        } else {
            (0..k).map(|c| n / k + usize::from(c < n % k)).collect()
        };
        Self {
            n,
            d,
            k,
            cluster_sizes,
            coherence,
            sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.cluster_sizes.len() != self.k {
            return Err(Error::InvalidParameter(format!(
                "need K >= 1 cluster sizes, got K={} and {} sizes",
                self.k,
                self.cluster_sizes.len()
            )));
        }
        if self.cluster_sizes.contains(&0) || self.cluster_sizes.iter().sum::<usize>() != self.n {
            return Err(Error::InvalidParameter(format!(
                "cluster sizes {:?} must be positive and sum to n = {}",
                self.cluster_sizes, self.n
            )));
        }
        if self.d <= self.k {
            return Err(Error::InvalidParameter(format!(
                "dimension d = {} must exceed the number of clusters K = {}",
                self.d, self.k
            )));
        }
        let limit = if self.k > 1 {
            1.0 / (self.k - 1) as f64
        } else {
            f64::INFINITY
        };
        if !(self.coherence >= 0.0 && self.coherence < limit) {
            return Err(Error::InvalidCoherence {
                coherence: self.coherence,
                k: self.k,
            });
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<Labeling> {
        let labels = self
            .cluster_sizes
            .iter()
            .enumerate()
            .flat_map(|(c, &s)| std::iter::repeat_n(c, s))
            .collect();
        Labeling::new(labels, self.k)
    }

    pub fn max_cluster_size(&self) -> usize {
        self.cluster_sizes.iter().copied().max().unwrap_or(0)
    }
}

/// `Υ = [μ_1 … μ_K]` (`d × K`) with unit columns and `⟨μ_k, μ_j⟩ = coherence`
/// for `k ≠ j`: a square-root factor of the Gram matrix embedded through a
/// random orthonormal `d × K` frame.
pub fn make_incoherent_means<G: Rng + ?Sized>(spec: &MixtureSpec, rng: &mut G) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let k = spec.k;
    let c = spec.coherence;
    let gram = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 } else { c });
    let chol = Cholesky::new(gram).ok_or(Error::InvalidCoherence { coherence: c, k })?;
    let factor = chol.l().transpose();
    let frame = sample_uniform(spec.d, k, rng)?;
    Ok(frame.matrix() * factor)
}

/// Dataset plus the generating means.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub data: DataMatrix,
    pub means: DMatrix<f64>,
}

/// Draws means, then iid `N(0, σ²)` noise, from one seeded stream.
pub fn generate_dataset(spec: &MixtureSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = make_incoherent_means(spec, &mut rng)?;
    let labels = spec.labels()?;
    let m = DMatrix::from_fn(spec.d, spec.n, |r, i| means[(r, labels.labels()[i])]);
    let e = DMatrix::from_fn(spec.d, spec.n, |_, _| {
        spec.sigma * rng.sample::<f64, _>(StandardNormal)
    });
    let data = DataMatrix::from_parts(m, e, labels)?;
    Ok(SyntheticDataset { data, means })
}

pub fn generate(spec: &MixtureSpec) -> Result<DataMatrix> {
    generate_dataset(spec).map(|s| s.data)
}

/// One-sided plug-in estimates of `ν_min` and `ν_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuEstimate {
    /// Minimum over the candidates: an upper bound on the true minimum.
    pub nu_min_hat: f64,
    /// Maximum over the candidates: a lower bound on the true maximum.
    pub nu_max_hat: f64,
    pub candidates: usize,
}

/// Feasible factors `Ũ ∈ 𝕆_{n,R,+}` with `MŨŨᵗ = M`.
///
/// Each candidate is the normalized block-indicator matrix of a random
/// refinement of the true partition into exactly `rank` blocks. For
/// `rank = K` the only refinement is the partition itself, so the list is
/// `U*`; for `rank > K`, `n_candidates` random refinements are drawn.
pub fn nu_candidates<G: Rng + ?Sized>(
    labels: &Labeling,
    rank: usize,
    n_candidates: usize,
    rng: &mut G,
) -> Result<Vec<DMatrix<f64>>> {
    let n = labels.n();
    let k = labels.k();
    if rank < k || rank > n {
        return Err(Error::InvalidParameter(format!(
            "feasible factors need K = {k} <= R = {rank} <= n = {n}"
        )));
    }
    if rank == k {
        return Ok(vec![build_ideal(labels).u_star]);
    }
    if n_candidates == 0 {
        return Err(Error::InvalidParameter(
            "R > K needs at least one random candidate".into(),
        ));
    }
    let members = labels.members();
    let mut out = Vec::with_capacity(n_candidates);
    for _ in 0..n_candidates {
        let mut blocks = vec![1usize; k];
        for _ in k..rank {
            let open: Vec<usize> = (0..k).filter(|&c| blocks[c] < members[c].len()).collect();
            let c = open[rng.random_range(0..open.len())];
            blocks[c] += 1;
        }
        let mut u = DMatrix::<f64>::zeros(n, rank);
        let mut col = 0;
        for (c, idx) in members.iter().enumerate() {
            let mut shuffled = idx.clone();
            shuffled.shuffle(rng);
            let mut gaps: Vec<usize> = (1..idx.len()).collect();
            gaps.shuffle(rng);
            let mut cuts: Vec<usize> = gaps.into_iter().take(blocks[c] - 1).collect();
            cuts.sort_unstable();
            cuts.push(idx.len());
            let mut start = 0;
            for end in cuts {
                let w = 1.0 / ((end - start) as f64).sqrt();
                for &i in &shuffled[start..end] {
                    u[(i, col)] = w;
                }
                col += 1;
                start = end;
            }
        }
        out.push(u);
    }
    Ok(out)
}

/// `ν(Ũ) = ‖E(I − ŨŨᵗ)‖_F`.
pub fn nu_value(e: &DMatrix<f64>, u: &DMatrix<f64>) -> f64 {
    (e - (e * u) * u.transpose()).norm()
}

/// Min and max of `‖E(I − ŨŨᵗ)‖_F` over [`nu_candidates`], after checking
/// each candidate is feasible (`‖MŨŨᵗ − M‖_F ≤ 1e-8`, orthonormal to
/// `1e-10`, entrywise nonnegative).
pub fn estimate_nu<G: Rng + ?Sized>(
    x: &DataMatrix,
    rank: usize,
    n_candidates: usize,
    rng: &mut G,
) -> Result<NuEstimate> {
    let truth = x.ground_truth().ok_or(Error::NoGroundTruth)?;
    let candidates = nu_candidates(&truth.labels, rank, n_candidates, rng)?;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for u in &candidates {
        let reproduce = (&truth.m - (&truth.m * u) * u.transpose()).norm();
        let ortho = orthonormality_residual(u);
        if reproduce > 1e-8 || ortho > 1e-10 || u.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "infeasible candidate: ‖MŨŨᵗ − M‖ = {reproduce:e}, ‖ŨᵗŨ − I‖ = {ortho:e}"
            )));
        }
        let v = nu_value(&truth.e, u);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(NuEstimate {
        nu_min_hat: lo,
        nu_max_hat: hi,
        candidates: candidates.len(),
    })
}
