//! Training losses and their closed-form gradients with respect to the raw
//! head output.
//!
//! The Gaussian negative log-likelihood here is `½[ln|Λ| + rᵀΛ⁻¹r]` and leaves
//! out the constant `(n/2)·ln 2π`; [`crate::gaussian::log_density`] keeps it,
//! so `gnll_loss = −log_density − (n/2)·ln 2π`.

use crate::error::{invalid, Error, Result};
use crate::gaussian::{
    affine_transform, packed_index, packed_len, sigmoid, softplus, AffineMap, GaussianParams,
    LowerTriangularRaw, MeanVector, RawGaussian, DIAG_FLOOR,
};
use crate::linalg::{cholesky_inverse, cholesky_solve, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LossValue(f64);

impl LossValue {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// Gradient with respect to a raw head output, split the same way the head
/// output is: mean block first, then the covariance block. The covariance
/// block is the packed triangle for the full variant, the raw diagonal for
/// the independent variant, and empty for the MSE variant.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGradient {
    pub d_mean: Vec<f64>,
    pub d_tri: Vec<f64>,
}

impl RawGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.d_mean.clone();
        out.extend_from_slice(&self.d_tri);
        out
    }

    fn check_finite(self) -> Result<Self> {
        if let Some(i) = self.d_mean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "gradient of raw mean entry {i} is {}",
                self.d_mean[i]
            )));
        }
        if let Some(i) = self.d_tri.iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "gradient of raw covariance entry {i} is {}",
                self.d_tri[i]
            )));
        }
        Ok(self)
    }
}

fn finite_loss(v: f64) -> Result<LossValue> {
    if v.is_finite() {
        Ok(LossValue(v))
    } else {
        Err(Error::NumericFailure(format!("loss evaluated to {v}")))
    }
}

/// `½[ln|Λ| + (y−μ)ᵀΛ⁻¹(y−μ)]`.
pub fn gnll_loss(g: &GaussianParams, y: &[f64]) -> Result<LossValue> {
    let z = g.whiten(y)?;
    let quad: f64 = z.iter().map(|v| v * v).sum();
    finite_loss(g.half_log_det() + 0.5 * quad)
}

/// Gradient of [`gnll_loss`] with respect to the mean and the covariance of `g`.
///
/// With `α = Λ⁻¹(y − μ)`: `∂ℓ/∂μ = −α` and `∂ℓ/∂Λ = ½(Λ⁻¹ − ααᵀ)` (symmetric form).
pub fn gnll_grad_params(g: &GaussianParams, y: &[f64]) -> Result<(Vec<f64>, Matrix)> {
    if y.len() != g.dim() {
        return Err(invalid(format!(
            "observation has length {} but the Gaussian has dimension {}",
            y.len(),
            g.dim()
        )));
    }
    let n = g.dim();
    let r: Vec<f64> = y.iter().zip(g.mean().as_slice()).map(|(a, m)| a - m).collect();
    let alpha = cholesky_solve(g.chol(), &r);
    let mut d_cov = cholesky_inverse(g.chol());
    for i in 0..n {
        for j in 0..n {
            d_cov[(i, j)] = 0.5 * (d_cov[(i, j)] - alpha[i] * alpha[j]);
        }
    }
    let d_mean = alpha.into_iter().map(|a| -a).collect();
    Ok((d_mean, d_cov))
}

/// Loss and gradient of the full pipeline
/// `raw → (μ, F) → (Aμ + b, A F Fᵀ Aᵀ) → GNLL` with respect to every raw entry.
pub fn gnll_value_and_grad_raw(
    raw: &RawGaussian,
    y: &[f64],
    map: &AffineMap,
) -> Result<(LossValue, RawGradient)> {
    let n = raw.dim();
    if map.dim() != n || y.len() != n {
        return Err(invalid(format!(
            "dimension mismatch: raw n = {n}, map n = {}, y has {}",
            map.dim(),
            y.len()
        )));
    }
    let inner = raw.to_gaussian()?;
    let outer = affine_transform(&inner, map)?;
    let loss = gnll_loss(&outer, y)?;
    let (d_mean_hat, d_cov_hat) = gnll_grad_params(&outer, y)?;

    // Back through μ̂ = Aμ + b and Λ̂ = AΛAᵀ.
    let a = map.a();
    let d_mean = a.matvec_transpose(&d_mean_hat)?;
    let d_cov = a.transpose().matmul(&d_cov_hat)?.matmul(a)?;

    // Back through Λ = F Fᵀ: ∂ℓ/∂F = (G + Gᵀ) F = 2 G F for symmetric G.
    let factor = inner.chol();
    let d_factor = d_cov.matmul(factor)?.scale(2.0);

    let mut d_tri = vec![0.0; packed_len(n)];
    for r in 0..n {
        for c in 0..r {
            d_tri[packed_index(r, c)] = d_factor[(r, c)];
        }
        let x = raw.tri.get(r, r);
        // The floor is flat, so no gradient flows through it.
        let local = if softplus(x) > DIAG_FLOOR { sigmoid(x) } else { 0.0 };
        d_tri[packed_index(r, r)] = d_factor[(r, r)] * local;
    }
    let grad = RawGradient { d_mean, d_tri }.check_finite()?;
    Ok((loss, grad))
}

pub fn gnll_grad_raw(raw: &RawGaussian, y: &[f64], map: &AffineMap) -> Result<RawGradient> {
    gnll_value_and_grad_raw(raw, y, map).map(|(_, g)| g)
}

/// `(1/n) Σ (yᵢ − μ̂ᵢ)²`.
pub fn mse_loss(mean_pred: &MeanVector, y: &[f64]) -> Result<LossValue> {
    if mean_pred.len() != y.len() {
        return Err(invalid(format!(
            "prediction has length {} but target has {}",
            mean_pred.len(),
            y.len()
        )));
    }
    let n = y.len() as f64;
    let sq: f64 = mean_pred
        .as_slice()
        .iter()
        .zip(y)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    finite_loss(sq / n)
}

/// Gradient of [`mse_loss`] with respect to the prediction: `−(2/n)(y − μ̂)`.
pub fn mse_grad(mean_pred: &MeanVector, y: &[f64]) -> Result<Vec<f64>> {
    if mean_pred.len() != y.len() {
        return Err(invalid("prediction and target lengths differ"));
    }
    let n = y.len() as f64;
    Ok(mean_pred
        .as_slice()
        .iter()
        .zip(y)
        .map(|(p, t)| -2.0 * (t - p) / n)
        .collect())
}

/// MSE of the affinely mapped raw mean, with its gradient on the raw mean.
pub fn mse_value_and_grad_raw(
    raw_mean: &[f64],
    y: &[f64],
    map: &AffineMap,
) -> Result<(LossValue, RawGradient)> {
    if raw_mean.len() != map.dim() {
        return Err(invalid("raw mean and affine map dimensions differ"));
    }
    let pred = MeanVector::new(map.apply(raw_mean)?)?;
    let loss = mse_loss(&pred, y)?;
    let d_pred = mse_grad(&pred, y)?;
    let d_mean = map.a().matvec_transpose(&d_pred)?;
    let grad = RawGradient {
        d_mean,
        d_tri: Vec::new(),
    }
    .check_finite()?;
    Ok((loss, grad))
}

fn diagonal_raw(means: &MeanVector, diag_raw: &[f64]) -> Result<RawGaussian> {
    if means.len() != diag_raw.len() {
        return Err(invalid(format!(
            "{} means but {} raw scales",
            means.len(),
            diag_raw.len()
        )));
    }
    RawGaussian::new(means.as_slice().to_vec(), LowerTriangularRaw::diagonal(diag_raw)?)
}

/// GNLL for a diagonal covariance whose i-th pre-affine standard deviation is
/// `softplus(diag_raw[i])`. Identical to the full pipeline with zero
/// off-diagonal raw entries.
pub fn diag_gnll_loss(
    means: &MeanVector,
    diag_raw: &[f64],
    y: &[f64],
    map: &AffineMap,
) -> Result<LossValue> {
    let raw = diagonal_raw(means, diag_raw)?;
    if y.len() != raw.dim() || map.dim() != raw.dim() {
        return Err(invalid("dimension mismatch in diagonal GNLL"));
    }
    gnll_loss(&raw.to_label_gaussian(map)?, y)
}

/// Loss and gradient of [`diag_gnll_loss`] on `(means, diag_raw)`.
pub fn diag_gnll_value_and_grad_raw(
    means: &MeanVector,
    diag_raw: &[f64],
    y: &[f64],
    map: &AffineMap,
) -> Result<(LossValue, RawGradient)> {
    let raw = diagonal_raw(means, diag_raw)?;
    let (loss, full) = gnll_value_and_grad_raw(&raw, y, map)?;
    let d_tri = (0..raw.dim()).map(|i| full.d_tri[packed_index(i, i)]).collect();
    Ok((
        loss,
        RawGradient {
            d_mean: full.d_mean,
            d_tri,
        },
    ))
}
