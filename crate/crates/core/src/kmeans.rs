//! Lloyd's k-means with k-means++ seeding, used as the fallback hard
//! clustering on the rows of a factor estimate.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub centroids: DMatrix<f64>,
    pub inertia: f64,
}

/// Clusters the rows of `points` into `k` groups, keeping the best of
/// `restarts` seeded runs. Every returned cluster is nonempty when
/// `k <= points.nrows()`.
pub fn kmeans(points: &DMatrix<f64>, k: usize, restarts: usize, seed: u64) -> KMeansFit {
    assert!(k >= 1 && k <= points.nrows(), "need 1 <= k <= number of points");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    best.expect("at least one restart")
}

fn sq_dist(points: &DMatrix<f64>, i: usize, centroids: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols())
        .map(|j| (points[(i, j)] - centroids[(c, j)]).powi(2))
        .sum()
}

fn seed_plus_plus(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, dim) = points.shape();
    let mut centroids = DMatrix::<f64>::zeros(k, dim);
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from(&points.row(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from(&points.row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, i, &centroids, c));
        }
    }
    centroids
}

fn lloyd(points: &DMatrix<f64>, k: usize, rng: &mut ChaCha8Rng) -> KMeansFit {
    let (n, dim) = points.shape();
    let mut centroids = seed_plus_plus(points, k, rng);
    let mut labels = vec![0usize; n];
    for iter in 0..300 {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|c| (c, sq_dist(points, i, &centroids, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap_or(0);
            if best != *label {
                *label = best;
                changed = true;
            }
        }

        let mut counts = vec![0usize; k];
        let mut sums = DMatrix::<f64>::zeros(k, dim);
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            let mut row = sums.row_mut(l);
            row += points.row(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                let mean = sums.row(c) / counts[c] as f64;
                centroids.row_mut(c).copy_from(&mean);
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(points, a, &centroids, labels[a])
                            .total_cmp(&sq_dist(points, b, &centroids, labels[b]))
                    })
                    .unwrap_or(0);
                centroids.row_mut(c).copy_from(&points.row(far));
                labels[far] = c;
                changed = true;
            }
        }
        if !changed && iter > 0 {
            break;
        }
    }
    // Ties between coincident centroids can still leave a cluster empty.
    let mut counts = vec![0usize; k];
    for &l in &labels {
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] == 0 {
            let donor = (0..k).max_by_key(|&j| counts[j]).unwrap_or(0);
            if let Some(i) = labels.iter().rposition(|&l| l == donor) {
                labels[i] = c;
                counts[donor] -= 1;
                counts[c] += 1;
                centroids.row_mut(c).copy_from(&points.row(i));
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points, i, &centroids, labels[i])).sum();
    KMeansFit {
        labels,
        centroids,
        inertia,
    }
}
