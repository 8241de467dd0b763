use thiserror::Error;

/// Errors raised by the geometry, model, sampler and bound calculators.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is rank deficient: numerical rank {rank} < {expected}")]
    RankDeficient { rank: usize, expected: usize },

    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("tangent vectors are attached to different base points")]
    BaseMismatch,

    #[error("matrix is not a tangent vector at the base point (symmetric residual {residual:.3e})")]
    NotTangent { residual: f64 },

    #[error("matrix does not have orthonormal columns (residual {residual:.3e})")]
    NotOrthonormal { residual: f64 },

    #[error("invalid labeling: {0}")]
    InvalidLabeling(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sampler produced non-finite values at iteration {iteration}")]
    DivergedStep { iteration: usize },

    #[error("chain trace contains no stored states")]
    EmptyTrace,

    #[error("coherence {coherence} is outside [0, 1/(K-1)) for K = {k}")]
    InvalidCoherence { coherence: f64, k: usize },

    #[error("data matrix carries no ground truth")]
    NoGroundTruth,

    #[error("denominator ||M|| + ||E|| is zero")]
    DegenerateDenominator,

    #[error("vacuous bound: {0}")]
    VacuousBound(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_shape(
    context: &'static str,
    expected: (usize, usize),
    got: (usize, usize),
) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
