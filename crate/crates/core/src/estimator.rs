//! Score-matching estimators on aggregated moments.
//!
//! The unpenalized estimate solves `Γ̂ θ = ĝ`. The penalized estimate
//! minimizes `½ θᵀ Γ̂_β θ − ĝᵀ θ + λ Σ_i w_i |θ_i|` with
//! `Γ̂_β = Γ̂ + β diag(Γ̂)` by cyclic coordinate descent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{inverse, norm_inf, spectral_norm_sym, Matrix};
use crate::models::{Param, PairwiseModel, ParamLayout};
use crate::scalar::Scalar;
use crate::scorestats::{sm_objective, with_row, GammaPattern, StatsAccumulator};

/// Which coordinates carry the ℓ1 penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    /// Every coordinate, including `Θ_ii` and `η`.
    #[default]
    All,
    /// Only the off-diagonal interactions `Θ_ij`, `i < j`.
    OffDiagonal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinateOrder {
    #[default]
    Cyclic,
    /// A fresh permutation every sweep, drawn from the given seed.
    Shuffled(u64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig<T> {
    pub k: usize,
    pub beta: T,
    pub lambda: T,
    pub cd_tol: T,
    pub cd_max_sweeps: usize,
    pub penalty: Penalty,
    pub order: CoordinateOrder,
}

impl<T: Scalar> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            k: 1,
            beta: T::zero(),
            lambda: T::zero(),
            cd_tol: T::of(1e-8),
            cd_max_sweeps: 10_000,
            penalty: Penalty::All,
            order: CoordinateOrder::Cyclic,
        }
    }
}

impl<T: Scalar> EstimatorConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: T| v >= T::zero() && v.is_finite();
        if self.k == 0 {
            return Err(Error::Config("block count K must be at least 1".into()));
        }
        if !ok(self.beta) || !ok(self.lambda) || !ok(self.cd_tol) {
            return Err(Error::Config("beta, lambda and cd_tol must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimatorResult<T> {
    pub theta_hat: Vec<T>,
    /// Indices `i` with `θ̂_i ≠ 0`.
    pub support: Vec<usize>,
    pub objective: T,
    pub sweeps: usize,
    pub kkt_residual: T,
    /// Condition estimate of `Γ̂_β`; infinite when it is not positive definite.
    pub gamma_condition: T,
    #[serde(skip)]
    pub objective_trace: Vec<T>,
}

impl<T: Scalar> EstimatorResult<T> {
    fn new(theta_hat: Vec<T>, objective: T, sweeps: usize, kkt_residual: T, gamma_condition: T, trace: Vec<T>) -> Self {
        let support = support_of(&theta_hat);
        Self { theta_hat, support, objective, sweeps, kkt_residual, gamma_condition, objective_trace: trace }
    }

    /// Estimated `(Θ̂, η̂)`, with `Θ̂` symmetric.
    pub fn unflatten(&self) -> Result<(Matrix<T>, Vec<T>)> {
        Ok(ParamLayout::from_len(self.theta_hat.len())?.unflatten(&self.theta_hat))
    }

    /// Off-diagonal interactions `(i, j, Θ̂_ij)`, `i < j`, that are nonzero.
    pub fn edges(&self) -> Result<Vec<(usize, usize, T)>> {
        let layout = ParamLayout::from_len(self.theta_hat.len())?;
        Ok(self
            .support
            .iter()
            .filter_map(|&idx| match layout.param(idx) {
                Param::Interaction(i, j) if i != j => Some((i, j, self.theta_hat[idx])),
                _ => None,
            })
            .collect())
    }
}

pub fn support_of<T: Scalar>(theta: &[T]) -> Vec<usize> {
    theta.iter().enumerate().filter(|(_, v)| **v != T::zero()).map(|(i, _)| i).collect()
}

fn check_system<T: Scalar>(gamma: &Matrix<T>, g: &[T]) -> Result<()> {
    if !gamma.is_square() || gamma.rows() != g.len() {
        return Err(Error::input(format!(
            "Γ̂ is {}×{} but ĝ has length {}",
            gamma.rows(),
            gamma.cols(),
            g.len()
        )));
    }
    if gamma.as_slice().iter().chain(g).any(|v| !v.is_finite()) {
        return Err(Error::input("non-finite entry in Γ̂ or ĝ"));
    }
    let tol = T::of(1e-10) * gamma.max_abs().max(T::one());
    if !gamma.is_symmetric(tol) {
        return Err(Error::input("Γ̂ is not symmetric"));
    }
    Ok(())
}

/// Unpenalized estimate `θ̂ = Γ̂⁻¹ ĝ`.
///
/// Fails with [`Error::NotPositiveDefinite`] when the minimizer does not exist
/// uniquely.
pub fn robust_sm<T: Scalar>(gamma: &Matrix<T>, g: &[T]) -> Result<EstimatorResult<T>> {
    check_system(gamma, g)?;
    let chol = gamma.cholesky()?;
    let mut theta = chol.solve(g);
    // two rounds of iterative refinement
    for _ in 0..2 {
        let resid: Vec<T> = gamma.mul_vec(&theta).iter().zip(g).map(|(&a, &b)| b - a).collect();
        let corr = chol.solve(&resid);
        theta.iter_mut().zip(corr).for_each(|(t, c)| *t += c);
    }
    let resid: Vec<T> = gamma.mul_vec(&theta).iter().zip(g).map(|(&a, &b)| a - b).collect();
    let objective = sm_objective(&theta, gamma, g, T::zero());
    Ok(EstimatorResult::new(theta, objective, 0, norm_inf(&resid), chol.condition_estimate(), vec![objective]))
}

/// `Γ̂ + β diag(Γ̂)`.
pub fn inflate_diagonal<T: Scalar>(gamma: &Matrix<T>, beta: T) -> Matrix<T> {
    let mut out = gamma.clone();
    for i in 0..gamma.rows().min(gamma.cols()) {
        out[(i, i)] = gamma[(i, i)] * (T::one() + beta);
    }
    out
}

fn penalty_weights<T: Scalar>(r: usize, penalty: Penalty) -> Vec<T> {
    match penalty {
        Penalty::All => vec![T::one(); r],
        Penalty::OffDiagonal => {
            let layout = ParamLayout::from_len(r).ok();
            (0..r)
                .map(|idx| match layout.map(|l| l.param(idx)) {
                    Some(Param::Interaction(i, j)) if i != j => T::one(),
                    Some(_) => T::zero(),
                    None => T::one(),
                })
                .collect()
        }
    }
}

fn soft_threshold<T: Scalar>(z: T, t: T) -> T {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        T::zero()
    }
}

/// Largest violation of the optimality conditions at `theta`, given the
/// gradient `Γθ − g` of the smooth part.
pub fn kkt_residual<T: Scalar>(theta: &[T], grad: &[T], penalties: &[T]) -> T {
    theta
        .iter()
        .zip(grad)
        .zip(penalties)
        .map(|((&t, &gr), &l)| {
            if t != T::zero() {
                (gr + l * t.signum()).abs()
            } else {
                (gr.abs() - l).max(T::zero())
            }
        })
        .fold(T::zero(), |a, b| a.max(b))
}

fn gradient<T: Scalar>(gamma: &Matrix<T>, g: &[T], theta: &[T]) -> Vec<T> {
    gamma.mul_vec(theta).iter().zip(g).map(|(&a, &b)| a - b).collect()
}

/// ℓ1-penalized estimate by coordinate descent, starting from zero.
pub fn regularized_robust_sm<T: Scalar>(gamma: &Matrix<T>, g: &[T], cfg: &EstimatorConfig<T>) -> Result<EstimatorResult<T>> {
    regularized_from(gamma, g, cfg, None)
}

/// As [`regularized_robust_sm`], starting from `warm` when given.
pub fn regularized_from<T: Scalar>(
    gamma: &Matrix<T>,
    g: &[T],
    cfg: &EstimatorConfig<T>,
    warm: Option<&[T]>,
) -> Result<EstimatorResult<T>> {
    check_system(gamma, g)?;
    cfg.validate()?;
    let a = inflate_diagonal(gamma, cfg.beta);
    solve_cd(&a, g, cfg, warm)
}

fn solve_cd<T: Scalar>(a: &Matrix<T>, g: &[T], cfg: &EstimatorConfig<T>, warm: Option<&[T]>) -> Result<EstimatorResult<T>> {
    let r = g.len();
    if let Some(i) = (0..r).find(|&i| !(a[(i, i)] > T::zero())) {
        return Err(Error::Degenerate(format!("diagonal entry {i} of Γ̂_β is not positive")));
    }
    let penalties: Vec<T> = penalty_weights(r, cfg.penalty).into_iter().map(|w: T| w * cfg.lambda).collect();
    let mut theta = match warm {
        Some(w) if w.len() == r => w.to_vec(),
        Some(w) => return Err(Error::input(format!("warm start has length {}, expected {r}", w.len()))),
        None => vec![T::zero(); r],
    };
    let mut grad = gradient(a, g, &theta);
    let condition = a.cholesky().map(|c| c.condition_estimate()).unwrap_or(T::infinity());
    let mut order: Vec<usize> = (0..r).collect();
    let mut rng = match cfg.order {
        CoordinateOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        CoordinateOrder::Cyclic => None,
    };
    let objective = |theta: &[T]| sm_objective_weighted(theta, a, g, &penalties);
    let mut trace = vec![objective(&theta)];

    for sweep in 0..=cfg.cd_max_sweeps {
        // convergence is judged on a freshly computed gradient
        let kkt = kkt_residual(&theta, &grad, &penalties);
        if kkt <= cfg.cd_tol {
            grad = gradient(a, g, &theta);
            let kkt = kkt_residual(&theta, &grad, &penalties);
            if kkt <= cfg.cd_tol {
                let obj = *trace.last().unwrap();
                return Ok(EstimatorResult::new(theta, obj, sweep, kkt, condition, trace));
            }
        }
        if sweep == cfg.cd_max_sweeps {
            break;
        }
        if let Some(rng) = rng.as_mut() {
            order.shuffle(rng);
        }
        for &i in &order {
            let aii = a[(i, i)];
            let old = theta[i];
            if old == T::zero() && grad[i].abs() <= penalties[i] {
                continue;
            }
            let new = soft_threshold(aii * old - grad[i], penalties[i]) / aii;
            let delta = new - old;
            if delta != T::zero() {
                theta[i] = new;
                for (gk, &aki) in grad.iter_mut().zip(a.row(i)) {
                    *gk += delta * aki;
                }
            }
        }
        trace.push(objective(&theta));
    }
    Err(Error::Convergence {
        what: "coordinate descent",
        iterations: cfg.cd_max_sweeps,
        last: theta.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

fn sm_objective_weighted<T: Scalar>(theta: &[T], a: &Matrix<T>, g: &[T], penalties: &[T]) -> T {
    let smooth = sm_objective(theta, a, g, T::zero());
    smooth + theta.iter().zip(penalties).map(|(&t, &l)| l * t.abs()).sum::<T>()
}

/// Solves along a strictly decreasing `lambdas`, warm-starting each solve
/// from the previous one.
pub fn lambda_path<T: Scalar>(gamma: &Matrix<T>, g: &[T], cfg: &EstimatorConfig<T>, lambdas: &[T]) -> Result<Vec<EstimatorResult<T>>> {
    if lambdas.is_empty() {
        return Err(Error::input("empty lambda grid"));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::input("lambda grid must be strictly decreasing"));
    }
    check_system(gamma, g)?;
    let a = inflate_diagonal(gamma, cfg.beta);
    let mut out: Vec<EstimatorResult<T>> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let c = EstimatorConfig { lambda, ..*cfg };
        c.validate()?;
        let warm = out.last().map(|r| r.theta_hat.as_slice());
        out.push(solve_cd(&a, g, &c, warm)?);
    }
    Ok(out)
}

/// `round(4 ε n)` clipped to `[1, n]`.
pub fn choose_k(epsilon: f64, n: usize) -> usize {
    let k = (4.0 * epsilon * n as f64).round();
    if !(k >= 1.0) {
        1
    } else {
        (k as usize).min(n).max(1)
    }
}

/// Largest admissible diagonal multiplier,
/// `1 / (1 + ‖Γ₀‖₂ / √(2 tr Σ_Γ) · √(n/K))`.
pub fn beta_upper_bound<T: Scalar>(gamma0_spectral: T, trace_sigma_gamma: T, n: usize, k: usize) -> Result<T> {
    if !(trace_sigma_gamma > T::zero()) {
        return Err(Error::input("trace of the covariance of Γ(x) must be positive"));
    }
    if k == 0 || k > n {
        return Err(Error::input(format!("need 1 ≤ K ≤ n, got K={k}, n={n}")));
    }
    let ratio = T::from_usize(n).unwrap() / T::from_usize(k).unwrap();
    Ok(T::one() / (T::one() + gamma0_spectral / (T::of(2.0) * trace_sigma_gamma).sqrt() * ratio.sqrt()))
}

/// Plug-in `(‖Γ̄‖₂, tr Cov vec Γ(x))` from the rows of `data`.
pub fn gamma_plugins<T: Scalar>(model: &PairwiseModel<T>, data: &Matrix<T>) -> Result<(T, T)> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::input("need at least two observations"));
    }
    let pattern = GammaPattern::for_layout(model.layout());
    let mut acc = StatsAccumulator::new(model.n_params());
    let mut mean = vec![T::zero(); pattern.len()];
    let mut sumsq = T::zero();
    for i in 0..n {
        acc.reset();
        acc.add(model, data.row(i)).map_err(|e| with_row(e, i))?;
        let v = pattern.pack(&acc.sum().gamma);
        sumsq += v.iter().map(|x| *x * *x).sum::<T>();
        mean.iter_mut().zip(&v).for_each(|(m, x)| *m += *x);
    }
    let nn = T::from_usize(n).unwrap();
    mean.iter_mut().for_each(|m| *m /= nn);
    let mean_sq: T = mean.iter().map(|x| *x * *x).sum();
    // unbiased total variance
    let trace = (sumsq - nn * mean_sq) / (nn - T::one());
    let spectral = spectral_norm_sym(&pattern.unpack(&mean), 500);
    Ok((spectral, trace.max(T::zero())))
}

/// Diagonal-multiplier bound with `Γ₀` replaced by plug-ins from `data`.
pub fn beta_plugin<T: Scalar>(model: &PairwiseModel<T>, data: &Matrix<T>, k: usize) -> Result<T> {
    let (spectral, trace) = gamma_plugins(model, data)?;
    beta_upper_bound(spectral, trace, data.rows(), k)
}

/// Quantities of the irrepresentability condition for `(Γ₀, θ₀)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IrrepDiagnostics<T> {
    /// `max_j (#{i : Θ_ij ≠ 0} + 1{η_j ≠ 0})`.
    pub d_theta0: usize,
    /// `‖Θ₀‖_∞,∞`, the largest absolute row sum.
    pub c_theta0: T,
    /// `‖(Γ₀,SS)⁻¹‖_∞,∞`.
    pub c_gamma0: T,
    /// `‖Γ₀,S^cS (Γ₀,SS)⁻¹‖_∞,∞`.
    pub i_s0: T,
    /// `1 − I_S0`; the condition holds when this is positive.
    pub alpha: T,
}

pub fn irrep_diagnostics<T: Scalar>(gamma0: &Matrix<T>, theta0: &[T]) -> Result<IrrepDiagnostics<T>> {
    check_system(gamma0, theta0)?;
    let layout = ParamLayout::from_len(theta0.len())?;
    let (theta, eta) = layout.unflatten(theta0);
    let m = layout.dim();
    let d_theta0 = (0..m)
        .map(|j| (0..m).filter(|&i| theta[(i, j)] != T::zero()).count() + usize::from(eta[j] != T::zero()))
        .max()
        .unwrap_or(0);
    let support = support_of(theta0);
    let complement: Vec<usize> = (0..theta0.len()).filter(|i| theta0[*i] == T::zero()).collect();
    if support.is_empty() {
        return Err(Error::input("θ₀ has empty support"));
    }
    let inv = inverse(&gamma0.select(&support, &support))
        .map_err(|_| Error::Degenerate("Γ₀ restricted to the support is singular".into()))?;
    let i_s0 = if complement.is_empty() {
        T::zero()
    } else {
        gamma0.select(&complement, &support).matmul(&inv).inf_norm()
    };
    Ok(IrrepDiagnostics { d_theta0, c_theta0: theta.inf_norm(), c_gamma0: inv.inf_norm(), i_s0, alpha: T::one() - i_s0 })
}
