//! # Stiefel manifold 𝕆_{n,R}
//!
//! The set of `n × R` real matrices with orthonormal columns,
//!
//! ```text
//! 𝕆_{n,R} = { O ∈ ℝ^{n×R} : OᵗO = I_R }
//! ```
//!
//! ## Tangent space
//!
//! ```text
//! T_O 𝕆_{n,R} = { Δ : OᵗΔ is skew-symmetric }
//! ```
//!
//! with orthogonal projection `P_O(A) = A − O sym(OᵗA)`.
//!
//! ## Canonical metric and geodesics
//!
//! Writing a tangent vector in quotient coordinates relative to a completed
//! orthogonal frame `Ō = [O | O⊥]`,
//!
//! ```text
//! Δ = Ō [A; B],   A = OᵗΔ (skew, R×R),   B = O⊥ᵗΔ ((n−R)×R)
//! ```
//!
//! the canonical metric is `g_c(Δ₁, Δ₂) = tr(Δ₁ᵗ (I − ½ OOᵗ) Δ₂)` and the
//! geodesic leaving `O` with velocity `Δ` is
//!
//! ```text
//! O(t) = Ō · expm(t [[A, −Bᵗ], [B, 0]]) · I_{n,R}
//! ```
//!
//! Only the span of `(I − OOᵗ)Δ` matters, so [`geodesic`] replaces `O⊥` by a
//! thin QR basis of that matrix and exponentiates a `2R × 2R` block.
//!
//! The gradient of a smooth `f` with Euclidean partials `f_O` under the
//! canonical metric is `f_O − O f_Oᵗ O`.
//!
//! Every operation returning a [`StiefelPoint`] leaves it within `1e-10` of
//! the manifold in `‖OᵗO − I‖_F`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_shape, Error, Result};
use crate::linalg::{expm, gaussian_matrix, orthonormality_residual, qr_positive, skew, sym};

/// Tolerance on `‖OᵗO − I‖_F` accepted for a point on the manifold.
pub const MANIFOLD_TOL: f64 = 1e-10;

/// Relative tolerance on `‖sym(OᵗΔ)‖_F` accepted for a tangent vector.
pub const TANGENT_TOL: f64 = 1e-8;

/// Base seed of the Gaussian block used to complete orthogonal frames.
const FRAME_SEED: u64 = 0x5eed_f4a3_e000_0000;

/// An `n × R` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    matrix: DMatrix<f64>,
}

impl StiefelPoint {
    /// Wraps `matrix` after checking `‖matrixᵗmatrix − I‖_F ≤ 1e-10`.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (n, r) = matrix.shape();
        if r == 0 || r > n {
            return Err(Error::InvalidParameter(format!(
                "Stiefel point needs n >= R >= 1, got {n}x{r}"
            )));
        }
        let residual = orthonormality_residual(&matrix);
        if !(residual <= MANIFOLD_TOL) {
            return Err(Error::NotOrthonormal { residual });
        }
        Ok(Self { matrix })
    }

    /// First `R` columns of the `n × n` identity.
    pub fn identity(n: usize, r: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, r))
    }

    pub(crate) fn from_trusted(matrix: DMatrix<f64>) -> Self {
        debug_assert!(orthonormality_residual(&matrix) <= 1e-8);
        Self { matrix }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn rank(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.matrix.shape()
    }

    /// `‖OᵗO − I_R‖_F`.
    pub fn residual(&self) -> f64 {
        orthonormality_residual(&self.matrix)
    }

    /// Same point with its columns reordered: column `j` of the result is
    /// column `perm[j]` of `self`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        Self {
            matrix: permute_columns(&self.matrix, perm),
        }
    }
}

/// A tangent vector together with the point it is attached to.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    matrix: DMatrix<f64>,
    base: StiefelPoint,
}

impl TangentVector {
    /// Checks the tangency condition to relative tolerance [`TANGENT_TOL`].
    pub fn new(base: &StiefelPoint, matrix: DMatrix<f64>) -> Result<Self> {
        check_shape("tangent vector", base.shape(), matrix.shape())?;
        let residual = tangent_residual(base, &matrix);
        if !(residual <= TANGENT_TOL * matrix.norm().max(1.0)) {
            return Err(Error::NotTangent { residual });
        }
        Ok(Self {
            matrix,
            base: base.clone(),
        })
    }

    pub fn zero(base: &StiefelPoint) -> Self {
        let (n, r) = base.shape();
        Self {
            matrix: DMatrix::zeros(n, r),
            base: base.clone(),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn base(&self) -> &StiefelPoint {
        &self.base
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            matrix: &self.matrix * factor,
            base: self.base.clone(),
        }
    }

    /// `self + factor · other`; both must share the same base.
    pub fn add_scaled(&self, other: &TangentVector, factor: f64) -> Result<Self> {
        if !same_base(&self.base, &other.base) {
            return Err(Error::BaseMismatch);
        }
        Ok(Self {
            matrix: &self.matrix + &other.matrix * factor,
            base: self.base.clone(),
        })
    }
}

fn tangent_residual(base: &StiefelPoint, d: &DMatrix<f64>) -> f64 {
    sym(&base.matrix.tr_mul(d)).norm()
}

fn same_base(a: &StiefelPoint, b: &StiefelPoint) -> bool {
    a.shape() == b.shape() && (&a.matrix - &b.matrix).norm() <= 1e-12
}

pub(crate) fn permute_columns(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), perm.len(), |i, j| m[(i, perm[j])])
}

/// Nearest-by-QR point on the manifold: the `Q` factor of the thin QR of `a`
/// with the triangular factor's diagonal forced positive.
pub fn project_to_stiefel(a: &DMatrix<f64>) -> Result<StiefelPoint> {
    let (n, r) = a.shape();
    if r == 0 || r > n {
        return Err(Error::InvalidParameter(format!(
            "projection needs n >= R >= 1, got {n}x{r}"
        )));
    }
    let (q, _) = qr_positive(a)?;
    Ok(StiefelPoint { matrix: q })
}

/// `P_O(A) = A − O sym(OᵗA)`.
pub fn tangent_project(base: &StiefelPoint, a: &DMatrix<f64>) -> Result<TangentVector> {
    check_shape("tangent_project", base.shape(), a.shape())?;
    let o = &base.matrix;
    let matrix = a - o * sym(&o.tr_mul(a));
    Ok(TangentVector {
        matrix,
        base: base.clone(),
    })
}

/// `g_c(Δ₁, Δ₂) = tr(Δ₁ᵗ (I − ½ OOᵗ) Δ₂)`.
pub fn canonical_metric(
    base: &StiefelPoint,
    d1: &TangentVector,
    d2: &TangentVector,
) -> Result<f64> {
    if !same_base(base, &d1.base) || !same_base(base, &d2.base) {
        return Err(Error::BaseMismatch);
    }
    let o = &base.matrix;
    // tr(Δ₁ᵗΔ₂) − ½ tr((OᵗΔ₁)ᵗ (OᵗΔ₂)), avoiding the n×n product.
    let full = d1.matrix.dot(&d2.matrix);
    let a1 = o.tr_mul(&d1.matrix);
    let a2 = o.tr_mul(&d2.matrix);
    Ok(full - 0.5 * a1.dot(&a2))
}

/// Orthogonal completion `O⊥` (`n × (n−R)`) of a Stiefel point.
///
/// The completion is the trailing block of the sign-fixed QR of
/// `[O | G]`, where `G` is a Gaussian block drawn from a generator seeded by
/// `(n, R)`, so the result is a deterministic function of `O`.
pub fn orthogonal_complement(base: &StiefelPoint) -> DMatrix<f64> {
    let (n, r) = base.shape();
    if n == r {
        return DMatrix::zeros(n, 0);
    }
    let mut attempt = 0u64;
    loop {
        let seed = FRAME_SEED ^ ((n as u64) << 20) ^ ((r as u64) << 4) ^ attempt;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = gaussian_matrix(&mut rng, n, n - r);
        let mut frame = DMatrix::<f64>::zeros(n, n);
        frame.columns_mut(0, r).copy_from(&base.matrix);
        frame.columns_mut(r, n - r).copy_from(&g);
        if let Ok((q, _)) = qr_positive(&frame) {
            return q.columns(r, n - r).into_owned();
        }
        attempt += 1;
    }
}

/// Point `O(t)` on the geodesic, before re-projection.
///
/// Also returns the velocity `O'(t)`, which is the tangent vector that
/// continues the same geodesic from `O(t)`.
pub fn geodesic(
    base: &StiefelPoint,
    d: &TangentVector,
    t: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_shape("geodesic", base.shape(), d.matrix.shape())?;
    let residual = tangent_residual(base, &d.matrix);
    if !(residual <= TANGENT_TOL * d.matrix.norm().max(1.0)) {
        return Err(Error::NotTangent { residual });
    }
    let r = base.rank();
    let o = &base.matrix;

    // Δ = OA + QB with Q an orthonormal basis for the normal part; the flow
    // stays in span[O | Q], so a 2R × 2R exponential suffices.
    let a = skew(&o.tr_mul(&d.matrix));
    let normal = &d.matrix - o * o.tr_mul(&d.matrix);
    let qr = normal.qr();
    let q = qr.q();
    let b = qr.r();
    let m = q.ncols();

    let mut generator = DMatrix::<f64>::zeros(r + m, r + m);
    generator.view_mut((0, 0), (r, r)).copy_from(&a);
    generator.view_mut((r, 0), (m, r)).copy_from(&b);
    generator.view_mut((0, r), (r, m)).copy_from(&(-b.transpose()));

    let mut frame = DMatrix::<f64>::zeros(o.nrows(), r + m);
    frame.columns_mut(0, r).copy_from(o);
    frame.columns_mut(r, m).copy_from(&q);

    let flow = expm(&(&generator * t));
    let point = &frame * flow.columns(0, r);
    let velocity = &frame * (&flow * generator.columns(0, r));
    Ok((point, velocity))
}

/// Exponential map `exp_O(tΔ)`, re-projected onto the manifold.
///
/// `t = 0` returns `base` unchanged.
pub fn exp_map(base: &StiefelPoint, d: &TangentVector, t: f64) -> Result<StiefelPoint> {
    if t == 0.0 {
        check_shape("exp_map", base.shape(), d.matrix.shape())?;
        return Ok(base.clone());
    }
    let (point, _) = geodesic(base, d, t)?;
    project_to_stiefel(&point)
}

/// `∇f(O) = f_O − O f_Oᵗ O`, projected onto the tangent space.
pub fn riemannian_gradient(
    base: &StiefelPoint,
    euclid_grad: &DMatrix<f64>,
) -> Result<TangentVector> {
    check_shape("riemannian_gradient", base.shape(), euclid_grad.shape())?;
    let o = &base.matrix;
    let raw = euclid_grad - o * (euclid_grad.tr_mul(o));
    tangent_project(base, &raw)
}

/// Haar-uniform draw: sign-fixed QR of an `n × R` Gaussian matrix.
pub fn sample_uniform<G: Rng + ?Sized>(n: usize, r: usize, rng: &mut G) -> Result<StiefelPoint> {
    if r == 0 || r > n {
        return Err(Error::InvalidParameter(format!(
            "uniform Stiefel sample needs n >= R >= 1, got n={n}, R={r}"
        )));
    }
    loop {
        let g = gaussian_matrix(rng, n, r);
        match project_to_stiefel(&g) {
            Ok(p) => return Ok(p),
            Err(Error::RankDeficient { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}
