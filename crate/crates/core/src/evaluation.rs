//! Error metrics against ground truth and partition-agreement scores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::model::Labeling;
use crate::stiefel::permute_columns;

/// `‖M(T* − T̂)‖_F`.
pub fn prediction_error(m: &DMatrix<f64>, t_star: &DMatrix<f64>, t_hat: &DMatrix<f64>) -> Result<f64> {
    let n = m.ncols();
    check_shape("T*", (n, n), t_star.shape())?;
    check_shape("T_hat", (n, n), t_hat.shape())?;
    Ok((m * (t_star - t_hat)).norm())
}

/// Clusterwise deviation of `ÛÛᵗ` from `T*`, squared and rooted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterwiseError {
    /// `Σ_k Σ_i (Σ_{i'∈I_k} D_{i',i})²` with `D = T* − ÛÛᵗ`, summed over all
    /// columns `i`. Equals `‖Υ†M(T* − ÛÛᵗ)‖_F²` whenever the means `Υ` have
    /// full column rank.
    pub squared: f64,
    pub root: f64,
    /// Same sum restricted to `i ∈ I_k` (block-diagonal columns only).
    pub display_squared: f64,
    pub display_root: f64,
}

/// Cluster-block sums of `T* − ÛÛᵗ` after reordering the points cluster by
/// cluster.
pub fn clusterwise_error(labels: &Labeling, t_star: &DMatrix<f64>, u_hat: &DMatrix<f64>) -> Result<ClusterwiseError> {
    let n = labels.n();
    check_shape("T*", (n, n), t_star.shape())?;
    if u_hat.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "U_hat",
            expected: (n, u_hat.ncols()),
            got: u_hat.shape(),
        });
    }
    let order = labels.clusterwise_order();
    let t_pi = permute_columns(&permute_columns(t_star, &order).transpose(), &order);
    let u_pi = DMatrix::from_fn(n, u_hat.ncols(), |i, r| u_hat[(order[i], r)]);
    let diff = t_pi - &u_pi * u_pi.transpose();

    let mut squared = 0.0;
    let mut display_squared = 0.0;
    let mut start = 0;
    for &size in labels.cluster_sizes() {
        let block = start..start + size;
        for i in 0..n {
            let s: f64 = block.clone().map(|ip| diff[(ip, i)]).sum();
            squared += s * s;
            if block.contains(&i) {
                display_squared += s * s;
            }
        }
        start += size;
    }
    Ok(ClusterwiseError {
        squared,
        root: squared.sqrt(),
        display_squared,
        display_root: display_squared.sqrt(),
    })
}

fn contingency(truth: &Labeling, est: &Labeling) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0usize; est.k()]; truth.k()];
    for (&a, &b) in truth.labels().iter().zip(est.labels()) {
        table[a][b] += 1;
    }
    table
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut perm: Vec<usize> = (0..k).collect();
    heap_permute(k, &mut perm, &mut out);
    out
}

fn heap_permute(len: usize, perm: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if len <= 1 {
        out.push(perm.clone());
        return;
    }
    for i in 0..len - 1 {
        heap_permute(len - 1, perm, out);
        let j = if len % 2 == 0 { i } else { 0 };
        perm.swap(j, len - 1);
    }
    heap_permute(len - 1, perm, out);
}

/// Minimum-cost perfect assignment on a square cost matrix (Kuhn–Munkres
/// with potentials). Returns `assign[row] = col`.
pub(crate) fn hungarian(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = i64::MAX;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    assign
}

fn best_matching(table: &[Vec<usize>], k: usize) -> usize {
    let at = |a: usize, b: usize| table.get(a).and_then(|r| r.get(b)).copied().unwrap_or(0);
    if k <= 8 {
        permutations(k)
            .iter()
            .map(|p| (0..k).map(|a| at(a, p[a])).sum::<usize>())
            .max()
            .unwrap_or(0)
    } else {
        let cost: Vec<Vec<i64>> = (0..k)
            .map(|a| (0..k).map(|b| -(at(a, b) as i64)).collect())
            .collect();
        hungarian(&cost)
            .iter()
            .enumerate()
            .map(|(a, &b)| at(a, b))
            .sum()
    }
}

fn choose2(x: usize) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// `(accuracy, ARI)`. Accuracy is the best matching fraction over label
/// permutations; ARI is the adjusted Rand index.
pub fn partition_agreement(truth: &Labeling, est: &Labeling) -> (f64, f64) {
    let n = truth.n();
    assert_eq!(n, est.n(), "partitions must cover the same points");
    if n == 0 {
        return (1.0, 1.0);
    }
    let table = contingency(truth, est);
    let k = truth.k().max(est.k());
    let accuracy = best_matching(&table, k) as f64 / n as f64;

    let index: f64 = table.iter().flatten().map(|&c| choose2(c)).sum();
    let rows: f64 = truth.cluster_sizes().iter().map(|&c| choose2(c)).sum();
    let cols: f64 = est.cluster_sizes().iter().map(|&c| choose2(c)).sum();
    let expected = rows * cols / choose2(n);
    let max = 0.5 * (rows + cols);
    let ari = if max == expected {
        // Both partitions trivial (all singletons or one block).
        if index == expected { 1.0 } else { 0.0 }
    } else {
        (index - expected) / (max - expected)
    };
    (accuracy, ari)
}
