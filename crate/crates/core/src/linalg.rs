//! Dense linear-algebra helpers shared by the geometry and model code.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. The matrix exponential
//! is the scaling-and-squaring algorithm with diagonal Padé approximants of
//! degree 3, 5, 7, 9 or 13 (Higham, 2005), which is accurate to a few ulps on
//! the skew-symmetric generators used by the Stiefel exponential map.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative tolerance on the diagonal of the triangular factor below which a
/// column is declared linearly dependent.
pub const RANK_TOL: f64 = 1e-12;

/// Thin QR factorization with the diagonal of `R` forced nonnegative.
///
/// Returns `(Q, R)` with `Q` of shape `rows × cols` and `R` of shape
/// `cols × cols`. Requires `rows >= cols`.
pub fn qr_positive(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (rows, cols) = a.shape();
    if rows < cols {
        return Err(Error::InvalidParameter(format!(
            "thin QR needs rows >= cols, got {rows}x{cols}"
        )));
    }
    let qr = a.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();

    let scale = (0..cols)
        .map(|j| a.column(j).norm())
        .fold(0.0_f64, f64::max);
    let tol = RANK_TOL * scale;
    let rank = (0..cols).filter(|&j| r[(j, j)].abs() > tol).count();
    if scale == 0.0 || rank < cols {
        return Err(Error::RankDeficient {
            rank: if scale == 0.0 { 0 } else { rank },
            expected: cols,
        });
    }

    for j in 0..cols {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    Ok((q, r))
}

/// Symmetric part `(B + Bᵗ) / 2`.
pub fn sym(b: &DMatrix<f64>) -> DMatrix<f64> {
    (b + b.transpose()) * 0.5
}

/// Skew-symmetric part `(B − Bᵗ) / 2`.
pub fn skew(b: &DMatrix<f64>) -> DMatrix<f64> {
    (b - b.transpose()) * 0.5
}

/// `‖AᵗA − I‖_F`.
pub fn orthonormality_residual(a: &DMatrix<f64>) -> f64 {
    let gram = a.tr_mul(a);
    let id = DMatrix::<f64>::identity(gram.nrows(), gram.ncols());
    (gram - id).norm()
}

/// Largest singular value.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.singular_values().max()
}

/// Matrix of iid standard normal entries.
pub fn gaussian_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Entrywise sign with `sign(0) = 0`.
pub fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

const THETA_3: f64 = 1.495_585_217_958_292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504_178_996_162_932e-1;
const THETA_9: f64 = 2.097_847_961_257_068;
const THETA_13: f64 = 5.371_920_351_148_152;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [
    17_297_280.0,
    8_648_640.0,
    1_995_840.0,
    277_200.0,
    25_200.0,
    1_512.0,
    56.0,
    1.0,
];
const PADE_9: [f64; 10] = [
    17_643_225_600.0,
    8_821_612_800.0,
    2_075_673_600.0,
    302_702_400.0,
    30_270_240.0,
    2_162_160.0,
    110_880.0,
    3_960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Matrix exponential by scaling and squaring.
///
/// Panics if `a` is not square.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm requires a square matrix");
    let n = a.nrows();
    if n == 0 {
        return a.clone();
    }
    let id = DMatrix::<f64>::identity(n, n);
    let norm = one_norm(a);
    if norm == 0.0 {
        return id;
    }

    let low_degree = [
        (THETA_3, &PADE_3[..]),
        (THETA_5, &PADE_5[..]),
        (THETA_7, &PADE_7[..]),
        (THETA_9, &PADE_9[..]),
    ];
    for (theta, coeffs) in low_degree {
        if norm <= theta {
            let (u, v) = pade_low(a, coeffs, &id);
            return solve_pade(&u, &v);
        }
    }

    let s = ((norm / THETA_13).log2().ceil()).max(0.0) as i32;
    let scaled = a / 2f64.powi(s);
    let (u, v) = pade_13(&scaled, &id);
    let mut result = solve_pade(&u, &v);
    for _ in 0..s {
        result = &result * &result;
    }
    result
}

fn pade_low(a: &DMatrix<f64>, b: &[f64], id: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let a2 = a * a;
    let mut power = id.clone();
    let mut odd = id * b[1];
    let mut even = id * b[0];
    let mut k = 2;
    while k < b.len() {
        power = &power * &a2;
        even += &power * b[k];
        odd += &power * b[k + 1];
        k += 2;
    }
    (a * odd, even)
}

fn pade_13(a: &DMatrix<f64>, id: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let b = &PADE_13;
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + id * b[0];
    (u, v)
}

fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Pade denominator is nonsingular within the scaling bound")
}
