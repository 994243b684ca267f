use rand::Rng;
use rand_distr::StandardNormal;

use super::{Family, PairwiseModel};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Draws `n` i.i.d. observations from `N(Θ⁻¹η, Θ⁻¹)`.
pub fn sample_gaussian<T: Scalar, R: Rng + ?Sized>(
    model: &PairwiseModel<T>,
    n: usize,
    rng: &mut R,
) -> Result<Matrix<T>> {
    if model.family() != Family::Gaussian {
        return Err(Error::Model("sample_gaussian needs a Gaussian model".into()));
    }
    let chol = model
        .theta()
        .cholesky()
        .map_err(|_| Error::Model("Gaussian precision matrix is not positive definite".into()))?;
    let m = model.dim();
    let mean = chol.solve(model.eta());
    let mut out = Matrix::zeros(n, m);
    let mut z = vec![T::zero(); m];
    for i in 0..n {
        for zj in z.iter_mut() {
            *zj = T::of(rng.sample::<f64, _>(StandardNormal));
        }
        // Lᵀ y = z gives Cov(y) = (L Lᵀ)⁻¹
        let y = chol.solve_upper(&z);
        for (dst, (mu, yj)) in out.row_mut(i).iter_mut().zip(mean.iter().zip(y)) {
            *dst = *mu + yj;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { burn_in: 1000, thin: 1 }
    }
}

/// Systematic-scan Gibbs sampler for the square-root model.
///
/// With `u = √x_i`, the full conditional of `u` has density proportional to
/// `u · exp(−Θ_ii (u − c/Θ_ii)²)` on `u ≥ 0`, where
/// `c = η_i + Σ_{j≠i} Θ_ij √x_j`; it is drawn exactly by rejection.
pub fn sample_sqr_gibbs<T: Scalar, R: Rng + ?Sized>(
    model: &PairwiseModel<T>,
    n: usize,
    cfg: GibbsConfig,
    rng: &mut R,
) -> Result<Matrix<T>> {
    if model.family() != Family::SquareRoot {
        return Err(Error::Model("sample_sqr_gibbs needs a square-root model".into()));
    }
    model.check_normalizable()?;
    let m = model.dim();
    let thin = cfg.thin.max(1);
    let theta: Vec<Vec<f64>> = (0..m).map(|i| model.theta().row(i).iter().map(|v| v.to_f64_lossy()).collect()).collect();
    let eta: Vec<f64> = model.eta().iter().map(|v| v.to_f64_lossy()).collect();

    // state kept as u = √x
    let mut u = vec![1.0f64; m];
    let scan = |u: &mut [f64], rng: &mut R| {
        for i in 0..m {
            let a = theta[i][i];
            let c = eta[i]
                + theta[i]
                    .iter()
                    .zip(u.iter())
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, (t, uj))| t * uj)
                    .sum::<f64>();
            u[i] = sample_sqrt_conditional(a, c, rng).0;
        }
    };

    for _ in 0..cfg.burn_in {
        scan(&mut u, rng);
    }
    let mut out = Matrix::zeros(n, m);
    for row in 0..n {
        for _ in 0..thin {
            scan(&mut u, rng);
        }
        for (dst, &ui) in out.row_mut(row).iter_mut().zip(&u) {
            let x = ui * ui;
            // an exact zero would sit on the boundary; the law puts no mass there
            *dst = T::of(if x > 0.0 { x } else { f64::MIN_POSITIVE });
        }
    }
    Ok(out)
}

/// Draws `u ≥ 0` with density proportional to `u · exp(−a u² + 2 c u)`.
///
/// Returns the draw together with the number of proposals used. Writing
/// `μ = c/a`, `σ² = 1/(2a)`, `z = μ/σ`:
///
/// * `z > 0`: proposal `(|u − μ| + μ) φ(u)`, a mixture of a normal truncated
///   to `[0, ∞)` and two Rayleigh pieces around `μ`; accept with `u / (|u − μ| + μ)`.
/// * `−1 < z ≤ 0`: Rayleigh proposal `u exp(−u²/2σ²)`; accept with `exp(uμ/σ²)`.
/// * `z ≤ −1`: Gamma(2, |μ|/σ²) proposal; accept with `exp(−u²/2σ²)`.
pub(crate) fn sample_sqrt_conditional<R: Rng + ?Sized>(a: f64, c: f64, rng: &mut R) -> (f64, usize) {
    debug_assert!(a > 0.0);
    let mu = c / a;
    let sigma = (0.5 / a).sqrt();
    let z = mu / sigma;
    let mut tries = 0usize;
    // uniform on (0, 1]
    let open01 = |rng: &mut R| 1.0 - rng.random::<f64>();

    if z > 0.0 {
        let w_norm = mu * sigma * (2.0 * std::f64::consts::PI).sqrt() * std_normal_cdf(z);
        let w_up = sigma * sigma;
        let tail = -(-0.5 * z * z).exp_m1();
        let w_low = sigma * sigma * tail;
        let total = w_norm + w_up + w_low;
        loop {
            tries += 1;
            let pick = rng.random::<f64>() * total;
            let u = if pick < w_norm {
                loop {
                    let v = mu + sigma * rng.sample::<f64, _>(StandardNormal);
                    if v >= 0.0 {
                        break v;
                    }
                }
            } else if pick < w_norm + w_up {
                mu + sigma * (-2.0 * open01(rng).ln()).sqrt()
            } else {
                let v = rng.random::<f64>();
                let r = sigma * (-2.0 * (-(v * tail)).ln_1p()).sqrt();
                (mu - r).max(0.0)
            };
            if rng.random::<f64>() * ((u - mu).abs() + mu) < u {
                return (u, tries);
            }
        }
    } else if z > -1.0 {
        loop {
            tries += 1;
            let u = sigma * (-2.0 * open01(rng).ln()).sqrt();
            if rng.random::<f64>() < (u * mu / (sigma * sigma)).exp() {
                return (u, tries);
            }
        }
    } else {
        let rate = -mu / (sigma * sigma);
        loop {
            tries += 1;
            let u = -(open01(rng).ln() + open01(rng).ln()) / rate;
            if rng.random::<f64>() < (-0.5 * u * u / (sigma * sigma)).exp() {
                return (u, tries);
            }
        }
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Moments of `u ↦ u exp(−a u² + 2cu)` on `[0, ∞)` by Simpson's rule.
    fn conditional_moments(a: f64, c: f64) -> (f64, f64) {
        let mu = c / a;
        let sigma = (0.5 / a).sqrt();
        let hi = mu.max(0.0) + 40.0 * sigma;
        let n = 200_000;
        let h = hi / n as f64;
        let f = |u: f64| u * (-a * u * u + 2.0 * c * u - (a * mu * mu).max(0.0)).exp();
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for k in 0..=n {
            let u = k as f64 * h;
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            let v = w * f(u);
            z += v;
            m1 += v * u;
            m2 += v * u * u;
        }
        (m1 / z, m2 / z - (m1 / z) * (m1 / z))
    }

    #[test]
    fn conditional_draws_match_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(a, c) in &[(1.0, 3.0), (2.0, 0.4), (1.0, 0.0), (0.5, -0.3), (4.0, -6.0), (1.0, -0.9)] {
            let (mean, var) = conditional_moments(a, c);
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| sample_sqrt_conditional(a, c, &mut rng).0).collect();
            let m = draws.iter().sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!((m - mean).abs() < 4.0 * se, "a={a} c={c}: {m} vs {mean} (se {se})");
        }
    }

    #[test]
    fn conditional_acceptance_is_bounded_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in -40..=40 {
            let c = k as f64 * 0.25;
            let n = 2000;
            let tries: usize = (0..n).map(|_| sample_sqrt_conditional(1.0, c, &mut rng).1).sum();
            let rate = n as f64 / tries as f64;
            assert!(rate > 0.25, "c={c}: acceptance {rate}");
        }
    }

    #[test]
    fn gaussian_population_mean() {
        let theta = Matrix::from_diag(&[2.0, 2.0, 2.0]);
        let model = PairwiseModel::gaussian(theta, vec![2.0; 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = sample_gaussian(&model, 20_000, &mut rng).unwrap();
        for j in 0..3 {
            let mean: f64 = x.column(j).iter().sum::<f64>() / 20_000.0;
            assert!((mean - 1.0).abs() < 0.03);
        }
    }

    #[test]
    fn gaussian_requires_pd() {
        let theta = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]);
        let model = PairwiseModel::gaussian(theta, vec![0.0; 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(sample_gaussian(&model, 5, &mut rng), Err(Error::Model(_))));
    }

    #[test]
    fn gibbs_rejects_non_dominant() {
        let theta = Matrix::from_rows(&[vec![1.0, 1.5], vec![1.5, 1.0]]);
        let model = PairwiseModel::square_root(theta, vec![0.0; 2], 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(sample_sqr_gibbs(&model, 5, GibbsConfig::default(), &mut rng).is_err());
    }
}
