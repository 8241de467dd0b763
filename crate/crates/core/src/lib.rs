//! Clustering as low-rank factorization on the nonnegative Stiefel manifold.
//!
//! The normalized membership matrix `T* = U*U*ᵗ` of a partition is estimated
//! by the posterior mean of a Gibbs (generalized Bayes) posterior over an
//! unconstrained factor `U` coupled to a latent Stiefel point `O`:
//!
//! ```text
//! ρ(U, O) ∝ exp(−λ/2 ‖X − XUUᵗ‖_F²) · Π N(U_ir; |O_ir|, μ²) · Haar(O)
//! ```
//!
//! The posterior is explored with an alternating Langevin sampler that takes
//! geodesic steps in `O` and Euclidean steps in `U`. Closed-form calculators
//! for the accompanying oracle inequalities and their tail bounds live in
//! [`bounds`].
//!
//! Matrices follow the column-per-point convention: the data matrix `X` is
//! `d × n`, factors are `n × R`.

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod kmeans;
pub mod linalg;
pub mod model;
pub mod sampler;
pub mod stiefel;
pub mod synthetic;

pub use bounds::{BoundInputs, DimensionConvention, FailureProbability, TailCheck};
pub use error::{Error, Result};
pub use estimator::{extract_labels, posterior_mean, Alignment, PosteriorEstimate};
pub use evaluation::{clusterwise_error, partition_agreement, prediction_error, ClusterwiseError};
pub use model::{
    build_ideal, DataMatrix, GroundTruth, IdealClusterMatrices, Labeling, LatentState, ModelParams,
};
pub use sampler::{run_chain, ChainRng, ChainTrace, InitStrategy, SamplerConfig};
pub use stiefel::{StiefelPoint, TangentVector};
pub use synthetic::{estimate_nu, generate, generate_dataset, MixtureSpec, NuEstimate, SyntheticDataset};

pub use nalgebra::DMatrix;
