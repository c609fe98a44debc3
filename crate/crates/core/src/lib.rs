//! Multivariate Gaussian regression for multi-dimensional quality scores.
//!
//! A dense head maps a feature vector to a mean and an unconstrained lower
//! triangle. The triangle becomes a covariance through a softplus-diagonal
//! Cholesky factor, an affine map puts the result on the label scale, and
//! training minimises the Gaussian negative log-likelihood with Adam.
//!
//! Module map:
//! - [`gaussian`]: value types, Cholesky and affine transforms, density, marginals, sampling.
//! - [`loss`]: GNLL / diagonal GNLL / MSE with closed-form gradients on the raw output.
//! - [`model`]: the dense head, its three variants and checkpoint I/O.
//! - [`trainer`]: Adam and the mini-batch training loop.
//! - [`dataio`]: dataset files, synthetic data with known truth, splitting.
//! - [`metrics`]: RMSE/PCC reports and diagnostic tables.

pub mod dataio;
pub mod error;
pub mod gaussian;
pub mod linalg;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod trainer;

pub use dataio::{LabeledSample, SynthSpec, LABEL_NAMES};
pub use error::{Error, Result};
pub use gaussian::{
    affine_transform, cholesky_transform, correlation, log_density, marginalize, sample, AffineMap,
    CovarianceMatrix, GaussianParams, LowerTriangularRaw, MeanVector, RawGaussian, QUALITY_DIMS,
};
pub use linalg::Matrix;
pub use loss::{gnll_grad_raw, gnll_loss, LossValue, RawGradient};
pub use metrics::{evaluate, pcc, rmse, EvalReport};
pub use model::{forward, init_head, predict, HeadConfig, HeadModel, Prediction, Variant};
pub use trainer::{adam_step, train, AdamState, TrainConfig, TrainTrace};
