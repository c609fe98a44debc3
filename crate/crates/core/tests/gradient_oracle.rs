//! Analytic raw-output gradients against central finite differences of an
//! independently written loss.

use qualgauss_core::gaussian::packed_index;
use qualgauss_core::loss::{gnll_grad_params, mse_grad};
use qualgauss_core::{
    gnll_loss, AffineMap, CovarianceMatrix, GaussianParams, Matrix, MeanVector, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const N: usize = 5;
const STEP: f64 = 1e-5;
const WIDE_STEP: f64 = 1e-3;

fn softplus_floored(x: f64) -> f64 {
    (1.0 + x.exp()).ln().max(1e-6)
}

/// Inverse and log-determinant by Gauss-Jordan with partial pivoting.
fn inverse_and_logdet(m: &[[f64; N]; N]) -> ([[f64; N]; N], f64) {
    let mut a = *m;
    let mut inv = [[0.0; N]; N];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut logdet = 0.0;
    for c in 0..N {
        let p = (c..N).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let piv = a[c][c];
        logdet += piv.abs().ln();
        for k in 0..N {
            a[c][k] /= piv;
            inv[c][k] /= piv;
        }
        for r in 0..N {
            if r != c {
                let f = a[r][c];
                for k in 0..N {
                    a[r][k] -= f * a[c][k];
                    inv[r][k] -= f * inv[c][k];
                }
            }
        }
    }
    (inv, logdet)
}

/// Loss of `variant` on raw output `raw`, written from the definitions:
/// GNLL `½[ln|Λ| + rᵀΛ⁻¹r]` on the label scale, or the mean squared error.
fn oracle_loss(variant: Variant, raw: &[f64], y: &[f64], a: &[[f64; N]; N], b: &[f64]) -> f64 {
    let mu: Vec<f64> = (0..N)
        .map(|i| (0..N).map(|k| a[i][k] * raw[k]).sum::<f64>() + b[i])
        .collect();
    let r: Vec<f64> = (0..N).map(|i| y[i] - mu[i]).collect();
    if variant == Variant::Mse {
        return r.iter().map(|v| v * v).sum::<f64>() / N as f64;
    }
    let mut f = [[0.0; N]; N];
    let mut idx = N;
    for i in 0..N {
        for j in 0..=i {
            let off_diagonal = variant == Variant::Full;
            if i == j {
                f[i][i] = softplus_floored(if off_diagonal { raw[idx] } else { raw[N + i] });
            } else if off_diagonal {
                f[i][j] = raw[idx];
            }
            if off_diagonal {
                idx += 1;
            }
        }
    }
    // Λ = A F Fᵀ Aᵀ
    let mut af = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            af[i][j] = (0..N).map(|k| a[i][k] * f[k][j]).sum();
        }
    }
    let mut cov = [[0.0; N]; N];
    for i in 0..N {
        for j in 0..N {
            cov[i][j] = (0..N).map(|k| af[i][k] * af[j][k]).sum();
        }
    }
    let (inv, logdet) = inverse_and_logdet(&cov);
    let quad: f64 = (0..N).map(|i| (0..N).map(|j| r[i] * inv[i][j] * r[j]).sum::<f64>()).sum();
    0.5 * (logdet + quad)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn random_map(rng: &mut ChaCha8Rng) -> ([[f64; N]; N], Vec<f64>) {
    let mut a = [[0.0; N]; N];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 2.0 } else { 0.0 } + rng.gen_range(-0.3..0.3);
        }
    }
    (a, (0..N).map(|_| rng.gen_range(2.0..4.0)).collect())
}

fn affine(a: &[[f64; N]; N], b: &[f64]) -> AffineMap {
    let flat: Vec<f64> = a.iter().flatten().copied().collect();
    AffineMap::new(Matrix::from_row_major(N, N, flat).unwrap(), b.to_vec()).unwrap()
}

fn check_variant(variant: Variant, seed: u64, general_map: bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let raw: Vec<f64> = (0..variant.output_dim(N)).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..N).map(|_| rng.gen_range(1.0..5.0)).collect();
        let (a, b) = if general_map {
            random_map(&mut rng)
        } else {
            let mut a = [[0.0; N]; N];
            (0..N).for_each(|i| a[i][i] = 2.0);
            (a, vec![3.0; N])
        };
        let map = affine(&a, &b);

        let (value, grad) = variant.loss_and_grad(&raw, &y, &map).unwrap();
        let expected = oracle_loss(variant, &raw, &y, &a, &b);
        assert!(rel_err(value, expected) < 1e-10, "{variant} case {case}: loss {value} vs oracle {expected}");

        let at = |k: usize, h: f64| {
            let mut shifted = raw.clone();
            shifted[k] += h;
            oracle_loss(variant, &shifted, &y, &a, &b)
        };
        for k in 0..raw.len() {
            let fd = if general_map {
                // Random maps can make Λ ill-conditioned enough that a 1e-5
                // step is dominated by round-off; use a fourth-order stencil.
                let h = WIDE_STEP;
                (at(k, -2.0 * h) - 8.0 * at(k, -h) + 8.0 * at(k, h) - at(k, 2.0 * h)) / (12.0 * h)
            } else {
                (at(k, STEP) - at(k, -STEP)) / (2.0 * STEP)
            };
            let err = rel_err(grad[k], fd);
            worst = worst.max(err);
            assert!(err < 1e-5, "{variant} case {case} coord {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }
    eprintln!("{variant}: worst relative error {worst:.2e}");
}

#[test]
fn full_gradient_matches_finite_differences() {
    check_variant(Variant::Full, 1, false);
    check_variant(Variant::Full, 2, true);
}

#[test]
fn independent_gradient_matches_finite_differences() {
    check_variant(Variant::Independent, 3, false);
    check_variant(Variant::Independent, 4, true);
}

#[test]
fn mse_gradient_matches_finite_differences() {
    check_variant(Variant::Mse, 5, false);
    check_variant(Variant::Mse, 6, true);
}

fn identity_cov_gaussian(mean: Vec<f64>) -> GaussianParams {
    GaussianParams::new(MeanVector::new(mean).unwrap(), CovarianceMatrix::identity(N)).unwrap()
}

#[test]
fn identity_covariance_gradient_is_scaled_mse_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let mean: Vec<f64> = (0..N).map(|_| rng.gen_range(0.0..6.0)).collect();
        let y: Vec<f64> = (0..N).map(|_| rng.gen_range(1.0..5.0)).collect();
        let (d_mean, _) = gnll_grad_params(&identity_cov_gaussian(mean.clone()), &y).unwrap();
        let mse = mse_grad(&MeanVector::new(mean).unwrap(), &y).unwrap();
        for (g, m) in d_mean.iter().zip(&mse) {
            assert!((g - N as f64 / 2.0 * m).abs() <= 1e-12, "{g} vs {}", N as f64 / 2.0 * m);
        }
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng) -> GaussianParams {
    let mut l = Matrix::zeros(N, N);
    for i in 0..N {
        for j in 0..i {
            l.as_mut_slice()[i * N + j] = rng.gen_range(-1.0..1.0);
        }
        l.as_mut_slice()[i * N + i] = rng.gen_range(0.3..1.5);
    }
    let mean = MeanVector::new((0..N).map(|_| rng.gen_range(1.0..5.0)).collect()).unwrap();
    GaussianParams::new(mean, CovarianceMatrix::new(l.gram()).unwrap()).unwrap()
}

#[test]
fn loss_is_invariant_under_dimension_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let perm = [3, 0, 4, 1, 2];
    for _ in 0..100 {
        let g = random_gaussian(&mut rng);
        let y: Vec<f64> = (0..N).map(|_| rng.gen_range(1.0..5.0)).collect();
        let pm: Vec<f64> = perm.iter().map(|&p| g.mean().as_slice()[p]).collect();
        let py: Vec<f64> = perm.iter().map(|&p| y[p]).collect();
        let mut pc = Matrix::zeros(N, N);
        for i in 0..N {
            for j in 0..N {
                pc.as_mut_slice()[i * N + j] = g.cov().get(perm[i], perm[j]);
            }
        }
        let permuted =
            GaussianParams::new(MeanVector::new(pm).unwrap(), CovarianceMatrix::new(pc).unwrap()).unwrap();
        let a = gnll_loss(&g, &y).unwrap().value();
        let b = gnll_loss(&permuted, &py).unwrap().value();
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn loss_is_translation_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100 {
        let g = random_gaussian(&mut rng);
        // Quarter-integer data and shifts keep every subtraction exact.
        let mean: Vec<f64> = (0..N).map(|_| rng.gen_range(4..20) as f64 / 4.0).collect();
        let y: Vec<f64> = (0..N).map(|_| rng.gen_range(4..20) as f64 / 4.0).collect();
        let c: Vec<f64> = (0..N).map(|_| rng.gen_range(-40..40) as f64 / 4.0).collect();
        let base = GaussianParams::new(MeanVector::new(mean.clone()).unwrap(), g.cov().clone()).unwrap();
        let shifted_mean: Vec<f64> = mean.iter().zip(&c).map(|(m, s)| m + s).collect();
        let shifted_y: Vec<f64> = y.iter().zip(&c).map(|(v, s)| v + s).collect();
        let shifted = GaussianParams::new(MeanVector::new(shifted_mean).unwrap(), g.cov().clone()).unwrap();
        assert_eq!(
            gnll_loss(&base, &y).unwrap().value(),
            gnll_loss(&shifted, &shifted_y).unwrap().value()
        );

        // Arbitrary real shifts agree to rounding.
        let c: Vec<f64> = (0..N).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let y: Vec<f64> = (0..N).map(|_| rng.gen_range(1.0..5.0)).collect();
        let sm: Vec<f64> = g.mean().as_slice().iter().zip(&c).map(|(m, s)| m + s).collect();
        let sy: Vec<f64> = y.iter().zip(&c).map(|(v, s)| v + s).collect();
        let shifted = GaussianParams::new(MeanVector::new(sm).unwrap(), g.cov().clone()).unwrap();
        let a = gnll_loss(&g, &y).unwrap().value();
        let b = gnll_loss(&shifted, &sy).unwrap().value();
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    }
}

#[test]
fn mean_gradient_vanishes_at_the_target() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let g = random_gaussian(&mut rng);
        let y = g.mean().as_slice().to_vec();
        let (d_mean, _) = gnll_grad_params(&g, &y).unwrap();
        assert!(d_mean.iter().all(|&v| v == 0.0), "{d_mean:?}");
        // The Hessian in μ̂ is Λ⁻¹, positive definite because Λ factors.
        assert!(g.cov().matrix().cholesky().is_ok());
    }
}

#[test]
fn packed_layout_is_row_major() {
    let order: Vec<(usize, usize)> = (0..N).flat_map(|i| (0..=i).map(move |j| (i, j))).collect();
    for (k, &(i, j)) in order.iter().enumerate() {
        assert_eq!(packed_index(i, j), k);
    }
}

