//! Multivariate Gaussian value types and their exact transforms.
//!
//! Covariances are produced from an unconstrained lower triangle: the diagonal
//! goes through softplus (then a small floor), the off-diagonal entries are
//! used as-is, and the covariance is the Gram matrix of the resulting factor.
//! Every density or quadratic form is evaluated through triangular solves
//! against that factor.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Error, Result};
use crate::linalg::{solve_lower, Matrix};

/// Number of quality dimensions (MOS, NOI, COL, DIS, LOUD).
pub const QUALITY_DIMS: usize = 5;

/// Lower bound applied to every factor diagonal after softplus.
pub const DIAG_FLOOR: f64 = 1e-6;

const SYMMETRY_TOL: f64 = 1e-12;
const MIN_ABS_DET: f64 = 1e-12;

/// `ln(1 + eˣ)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] on `(0, ∞)`: `ln(eʸ − 1)`.
#[inline]
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Derivative of [`softplus`].
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Number of packed entries in an `n×n` lower triangle.
#[inline]
pub const fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of `(row, col)` (with `col <= row`) in the row-major lower packing.
#[inline]
pub const fn packed_index(row: usize, col: usize) -> usize {
    row * (row + 1) / 2 + col
}

/// Dimension `n` such that `packed_len(n) == len`, if any.
fn dim_from_packed(len: usize) -> Option<usize> {
    let mut n = 0;
    while packed_len(n) < len {
        n += 1;
    }
    (packed_len(n) == len).then_some(n)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(invalid(format!("{what}[{i}] is not finite ({})", values[i]))),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanVector(Vec<f64>);

impl MeanVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite(&values, "mean")?;
        Ok(Self(values))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Unconstrained lower-triangle entries, packed row-major:
/// `(0,0), (1,0), (1,1), (2,0), (2,1), (2,2), ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangularRaw {
    dim: usize,
    entries: Vec<f64>,
}

impl LowerTriangularRaw {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        let dim = dim_from_packed(entries.len()).ok_or_else(|| {
            invalid(format!(
                "{} values do not form a packed lower triangle",
                entries.len()
            ))
        })?;
        check_finite(&entries, "raw triangle")?;
        Ok(Self { dim, entries })
    }

    /// Raw entries that are zero off the diagonal.
    pub fn diagonal(diag_raw: &[f64]) -> Result<Self> {
        let n = diag_raw.len();
        let mut entries = vec![0.0; packed_len(n)];
        for (i, &d) in diag_raw.iter().enumerate() {
            entries[packed_index(i, i)] = d;
        }
        Self::new(entries)
    }

    /// Recovers raw entries that reproduce `factor` under [`cholesky_transform`],
    /// i.e. inverts the packing and the diagonal softplus.
    pub fn from_factor(factor: &Matrix) -> Result<Self> {
        if !factor.is_square() {
            return Err(invalid("factor must be square"));
        }
        let n = factor.rows();
        let mut entries = Vec::with_capacity(packed_len(n));
        for r in 0..n {
            for c in 0..=r {
                let v = factor[(r, c)];
                if r == c {
                    if !(v > 0.0) {
                        return Err(invalid(format!("factor diagonal {r} is not positive")));
                    }
                    entries.push(softplus_inverse(v));
                } else {
                    entries.push(v);
                }
            }
        }
        Self::new(entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.entries[packed_index(row, col)]
    }
}

/// Symmetric positive-definite covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix(Matrix);

impl CovarianceMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        Self::validate(&m)?;
        Ok(Self(m))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n))
    }

    fn validate(m: &Matrix) -> Result<Matrix> {
        if !m.is_square() {
            return Err(invalid("covariance must be square"));
        }
        check_finite(m.as_slice(), "covariance")?;
        let asym = m.max_abs_asymmetry();
        if asym > SYMMETRY_TOL {
            return Err(invalid(format!("covariance asymmetric by {asym:e}")));
        }
        m.cholesky()
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }
}

/// Mean and covariance of an `n`-dimensional Gaussian, with the lower
/// Cholesky factor of the covariance kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: MeanVector,
    cov: CovarianceMatrix,
    chol: Matrix,
}

impl GaussianParams {
    pub fn new(mean: MeanVector, cov: CovarianceMatrix) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(invalid(format!(
                "mean has length {} but covariance is {}x{}",
                mean.len(),
                cov.dim(),
                cov.dim()
            )));
        }
        let chol = cov.0.cholesky()?;
        Ok(Self { mean, cov, chol })
    }

    /// Builds the Gaussian `N(mean, F Fᵀ)` from a lower-triangular factor with
    /// positive diagonal. The factor becomes the cached Cholesky factor.
    pub fn from_factor(mean: MeanVector, factor: Matrix) -> Result<Self> {
        if !factor.is_square() || factor.rows() != mean.len() {
            return Err(invalid("factor shape does not match mean"));
        }
        if !factor.is_lower_triangular() || factor.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("factor must be lower triangular with positive diagonal"));
        }
        check_finite(factor.as_slice(), "factor")?;
        let cov = CovarianceMatrix(spd_gram(&factor));
        Ok(Self {
            mean,
            cov,
            chol: factor,
        })
    }

    pub fn standard(n: usize) -> Self {
        Self {
            mean: MeanVector::zeros(n),
            cov: CovarianceMatrix::identity(n),
            chol: Matrix::identity(n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &MeanVector {
        &self.mean
    }

    pub fn cov(&self) -> &CovarianceMatrix {
        &self.cov
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    /// `Σ ln Lᵢᵢ`, half the log-determinant of the covariance.
    pub fn half_log_det(&self) -> f64 {
        self.chol.diagonal().iter().map(|d| d.ln()).sum()
    }

    /// Whitened residual `L⁻¹ (y − μ)`.
    pub fn whiten(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.dim() {
            return Err(invalid(format!(
                "observation has length {} but the Gaussian has dimension {}",
                y.len(),
                self.dim()
            )));
        }
        let r: Vec<f64> = y.iter().zip(self.mean.as_slice()).map(|(a, m)| a - m).collect();
        Ok(solve_lower(&self.chol, &r))
    }
}

/// `y ↦ A y + b` with invertible `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    a: Matrix,
    b: Vec<f64>,
}

impl AffineMap {
    pub fn new(a: Matrix, b: Vec<f64>) -> Result<Self> {
        if !a.is_square() || a.rows() != b.len() {
            return Err(invalid(format!(
                "affine map needs a square A matching b (A is {}x{}, b has {})",
                a.rows(),
                a.cols(),
                b.len()
            )));
        }
        check_finite(a.as_slice(), "A")?;
        check_finite(&b, "b")?;
        let det = a.determinant()?;
        if !(det.abs() > MIN_ABS_DET) {
            return Err(invalid(format!("A is not invertible (det = {det:e})")));
        }
        Ok(Self { a, b })
    }

    /// `A = 2I`, `b = 3·1`: maps a `[-1, 1]` output range onto the 1–5 label scale.
    pub fn quality_scale(n: usize) -> Self {
        Self {
            a: Matrix::identity(n).scale(2.0),
            b: vec![3.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            a: Matrix::identity(n),
            b: vec![0.0; n],
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.a.matvec(y)?;
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
        Ok(out)
    }

    /// The map applying `self` first and `then` second.
    pub fn then(&self, then: &AffineMap) -> Result<AffineMap> {
        let a = then.a.matmul(&self.a)?;
        let b = then.apply(&self.b)?;
        AffineMap::new(a, b)
    }

    pub fn log_abs_det(&self) -> f64 {
        self.a.determinant().map(|d| d.abs().ln()).unwrap_or(f64::NAN)
    }
}

/// `F Fᵀ`, made safe to factor again.
///
/// After scaling by its diagonal, a computed Gram matrix is off by at most
/// about `n ε` per entry. When `F` has tiny diagonal entries under large
/// off-diagonal ones (softplus of very negative raw values), its smallest
/// eigenvalue sits far below that and the stored product can be indefinite.
/// In that case only, every diagonal entry is raised by the relative margin
/// `8 (n + 1)² ε`, which clears the rounding error with room to spare and
/// changes no entry by more than 1e-13 relative for five dimensions.
/// Well-conditioned products are returned unchanged.
pub fn spd_gram(factor: &Matrix) -> Matrix {
    let mut g = factor.gram();
    if g.cholesky().is_ok() {
        return g;
    }
    let n = factor.rows();
    let margin = 8.0 * ((n + 1) * (n + 1)) as f64 * f64::EPSILON;
    for i in 0..n {
        g.as_mut_slice()[i * n + i] *= 1.0 + margin;
    }
    g
}

/// Unpacks `raw` into a lower-triangular factor with softplus (floored at
/// [`DIAG_FLOOR`]) on the diagonal and returns `(F Fᵀ, F)`.
pub fn cholesky_transform(raw: &LowerTriangularRaw) -> Result<(CovarianceMatrix, Matrix)> {
    let factor = raw_to_factor(raw);
    check_finite(factor.as_slice(), "factor")?;
    Ok((CovarianceMatrix(spd_gram(&factor)), factor))
}

pub(crate) fn raw_to_factor(raw: &LowerTriangularRaw) -> Matrix {
    let n = raw.dim();
    let mut factor = Matrix::zeros(n, n);
    for r in 0..n {
        for c in 0..r {
            factor[(r, c)] = raw.get(r, c);
        }
        factor[(r, r)] = softplus(raw.get(r, r)).max(DIAG_FLOOR);
    }
    factor
}

/// Unconstrained mean plus packed triangle: the raw parameterization a
/// full-covariance head emits.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGaussian {
    pub mean: Vec<f64>,
    pub tri: LowerTriangularRaw,
}

impl RawGaussian {
    pub fn new(mean: Vec<f64>, tri: LowerTriangularRaw) -> Result<Self> {
        if mean.len() != tri.dim() {
            return Err(invalid(format!(
                "raw mean has length {} but the triangle is for n = {}",
                mean.len(),
                tri.dim()
            )));
        }
        check_finite(&mean, "raw mean")?;
        Ok(Self { mean, tri })
    }

    /// Splits `[mean (n) | triangle (n(n+1)/2)]`.
    pub fn from_flat(values: &[f64], n: usize) -> Result<Self> {
        if values.len() != n + packed_len(n) {
            return Err(invalid(format!(
                "expected {} raw values for n = {n}, got {}",
                n + packed_len(n),
                values.len()
            )));
        }
        Self::new(values[..n].to_vec(), LowerTriangularRaw::new(values[n..].to_vec())?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pre-affine Gaussian `N(μ, F Fᵀ)`.
    pub fn to_gaussian(&self) -> Result<GaussianParams> {
        let (_, factor) = cholesky_transform(&self.tri)?;
        GaussianParams::from_factor(MeanVector::new(self.mean.clone())?, factor)
    }

    /// Label-scale Gaussian after the affine output map.
    pub fn to_label_gaussian(&self, map: &AffineMap) -> Result<GaussianParams> {
        affine_transform(&self.to_gaussian()?, map)
    }
}

/// `(A μ + b, A Λ Aᵀ)`.
pub fn affine_transform(g: &GaussianParams, map: &AffineMap) -> Result<GaussianParams> {
    if g.dim() != map.dim() {
        return Err(invalid(format!(
            "Gaussian has dimension {} but the affine map has {}",
            g.dim(),
            map.dim()
        )));
    }
    let mean = MeanVector::new(map.apply(g.mean.as_slice())?)?;
    // A Λ Aᵀ = (A L)(A L)ᵀ, which keeps the result exactly symmetric.
    let scaled = map.a.matmul(&g.chol)?;
    let cov = spd_gram(&scaled);
    check_finite(cov.as_slice(), "transformed covariance")?;
    let chol = if scaled.is_lower_triangular() && scaled.diagonal().iter().all(|d| *d > 0.0) {
        scaled
    } else {
        cov.cholesky()?
    };
    Ok(GaussianParams {
        mean,
        cov: CovarianceMatrix(cov),
        chol,
    })
}

/// `ln N(y; μ, Λ)`, including the `(2π)^{n/2}` normalizer.
pub fn log_density(g: &GaussianParams, y: &[f64]) -> Result<f64> {
    let z = g.whiten(y)?;
    let quad: f64 = z.iter().map(|v| v * v).sum();
    let n = g.dim() as f64;
    Ok(-0.5 * quad - g.half_log_det() - 0.5 * n * (2.0 * PI).ln())
}

/// Marginal over `dims` (strictly increasing indices).
pub fn marginalize(g: &GaussianParams, dims: &[usize]) -> Result<GaussianParams> {
    let n = g.dim();
    if dims.is_empty() {
        return Err(invalid("marginal needs at least one dimension"));
    }
    if let Some(&bad) = dims.iter().find(|&&d| d >= n) {
        return Err(invalid(format!("dimension {bad} out of range for n = {n}")));
    }
    if dims.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("marginal dimensions must be strictly increasing"));
    }
    if dims.len() == n {
        return Ok(g.clone());
    }
    let mean = MeanVector(dims.iter().map(|&d| g.mean.0[d]).collect());
    let cov = g.cov.0.select(dims);
    let chol = cov.cholesky()?;
    Ok(GaussianParams {
        mean,
        cov: CovarianceMatrix(cov),
        chol,
    })
}

/// `Λᵢⱼ / √(Λᵢᵢ Λⱼⱼ)`.
pub fn correlation(cov: &CovarianceMatrix, i: usize, j: usize) -> Result<f64> {
    let n = cov.dim();
    if i >= n || j >= n {
        return Err(invalid(format!("index pair ({i}, {j}) out of range for n = {n}")));
    }
    if i == j {
        return Ok(1.0);
    }
    let rho = cov.get(i, j) / (cov.get(i, i) * cov.get(j, j)).sqrt();
    Ok(rho.clamp(-1.0, 1.0))
}

/// `count` draws of `μ + L z`, `z ~ N(0, I)`, one per row. Deterministic in `seed`.
pub fn sample(g: &GaussianParams, count: usize, seed: u64) -> Result<Matrix> {
    if count == 0 {
        return Err(Error::InvalidArgument("sample count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_with(g, count, &mut rng))
}

pub(crate) fn sample_with<R: rand::Rng + ?Sized>(g: &GaussianParams, count: usize, rng: &mut R) -> Matrix {
    let n = g.dim();
    let mut out = Matrix::zeros(count, n);
    let mut z = vec![0.0; n];
    for s in 0..count {
        for zi in z.iter_mut() {
            *zi = StandardNormal.sample(rng);
        }
        for r in 0..n {
            let mut v = g.mean.0[r];
            for c in 0..=r {
                v += g.chol[(r, c)] * z[c];
            }
            out[(s, r)] = v;
        }
    }
    out
}
