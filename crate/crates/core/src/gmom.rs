//! Geometric median of means.
//!
//! Observations are split in input order into `K` contiguous blocks, each
//! block is averaged, and the block means are aggregated by their geometric
//! median `argmin_m Σ_k ‖μ_k − m‖₂`. `K = 1` gives the sample mean and
//! `K = n` the geometric median of the raw points.
//!
//! The median is computed with Weiszfeld's fixed-point iteration
//! `m ← Σ_k w_k μ_k`, `w_k ∝ 1/‖m − μ_k‖`, using the Vardi–Zhang step when an
//! iterate lands on an input point. The returned weights are the final
//! convex-combination coefficients, so aggregated PSD matrices stay PSD.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dist2, norm2, Matrix};
use crate::models::PairwiseModel;
use crate::scalar::Scalar;
use crate::scorestats::{with_row, GammaPattern, ScoreStats, StatsAccumulator};

/// What to do with the `n mod K` observations left over by equal blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderPolicy {
    /// Give one extra observation to each of the last `n mod K` blocks.
    #[default]
    FoldIntoLast,
    /// Drop the trailing `n mod K` observations.
    Discard,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmomConfig<T> {
    pub k: usize,
    /// Weiszfeld stops once a step is below `tol` times the harmonic-mean
    /// distance from the iterate to the points.
    pub tol: T,
    pub max_iter: usize,
    pub remainder: RemainderPolicy,
}

impl<T: Scalar> GmomConfig<T> {
    pub fn new(k: usize) -> Self {
        Self { k, tol: T::of(1e-10), max_iter: 10_000, remainder: RemainderPolicy::FoldIntoLast }
    }

    pub fn with_remainder(mut self, remainder: RemainderPolicy) -> Self {
        self.remainder = remainder;
        self
    }
}

/// Block sizes for `n` observations split into `k` contiguous blocks.
pub fn block_sizes(n: usize, k: usize, policy: RemainderPolicy) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::input("block count must be at least 1"));
    }
    if k > n {
        return Err(Error::input(format!("block count {k} exceeds sample size {n}")));
    }
    let base = n / k;
    let extra = n % k;
    Ok((0..k)
        .map(|b| match policy {
            RemainderPolicy::FoldIntoLast if b >= k - extra => base + 1,
            _ => base,
        })
        .collect())
}

fn check_points<T: Scalar>(points: &[Vec<T>]) -> Result<usize> {
    let p = points.first().ok_or_else(|| Error::input("no points"))?.len();
    for (i, x) in points.iter().enumerate() {
        if x.len() != p {
            return Err(Error::input(format!("point {i} has dimension {}, expected {p}", x.len())));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("point {i} has a non-finite coordinate")));
        }
    }
    Ok(p)
}

/// Arithmetic means of `k` contiguous blocks of `points`.
pub fn block_means<T: Scalar>(points: &[Vec<T>], k: usize, policy: RemainderPolicy) -> Result<Vec<Vec<T>>> {
    let p = check_points(points)?;
    let sizes = block_sizes(points.len(), k, policy)?;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for size in sizes {
        let mut mean = vec![T::zero(); p];
        for x in &points[start..start + size] {
            for (m, &v) in mean.iter_mut().zip(x) {
                *m += v;
            }
        }
        let inv = T::one() / T::from_usize(size).unwrap();
        mean.iter_mut().for_each(|v| *v *= inv);
        out.push(mean);
        start += size;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeometricMedian<T> {
    pub median: Vec<T>,
    /// Nonnegative, summing to one, with `median ≈ Σ_i weights_i · points_i`.
    pub weights: Vec<T>,
    pub iterations: usize,
    /// `Σ_i ‖points_i − m‖` at each visited iterate.
    pub objective_trace: Vec<T>,
}

/// `Σ_i ‖points_i − m‖₂`.
pub fn gm_objective<T: Scalar>(points: &[Vec<T>], m: &[T]) -> T {
    points.iter().map(|x| dist2(x, m)).sum()
}

fn coincide<T: Scalar>(d: T, a: &[T], b: &[T]) -> bool {
    if d == T::zero() {
        return true;
    }
    let scale = a.iter().chain(b).fold(T::zero(), |s, v| s.max(v.abs()));
    d <= T::of(64.0) * T::epsilon() * scale
}

fn one_hot<T: Scalar>(n: usize, idx: &[usize]) -> Vec<T> {
    let mut w = vec![T::zero(); n];
    let share = T::one() / T::from_usize(idx.len()).unwrap();
    for &i in idx {
        w[i] = share;
    }
    w
}

/// Geometric median of `points` by modified Weiszfeld iteration.
pub fn geometric_median<T: Scalar>(points: &[Vec<T>], tol: T, max_iter: usize) -> Result<GeometricMedian<T>> {
    let p = check_points(points)?;
    let n = points.len();
    if n == 1 {
        return Ok(GeometricMedian {
            median: points[0].clone(),
            weights: vec![T::one()],
            iterations: 0,
            objective_trace: vec![T::zero()],
        });
    }
    if p == 1 {
        return Ok(univariate_median(points));
    }
    weiszfeld(points, tol, max_iter)
}

/// On the real line the geometric median is the ordinary median.
fn univariate_median<T: Scalar>(points: &[Vec<T>]) -> GeometricMedian<T> {
    let n = points.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| points[a][0].partial_cmp(&points[b][0]).unwrap());
    let (median, weights) = if n % 2 == 1 {
        let i = order[n / 2];
        (points[i][0], one_hot(n, &[i]))
    } else {
        let (a, b) = (order[n / 2 - 1], order[n / 2]);
        let mid = (points[a][0] + points[b][0]) * T::of(0.5);
        let mut w = vec![T::zero(); n];
        w[a] += T::of(0.5);
        w[b] += T::of(0.5);
        (mid, w)
    };
    let obj = points.iter().map(|x| (x[0] - median).abs()).sum();
    GeometricMedian { median: vec![median], weights, iterations: 0, objective_trace: vec![obj] }
}

fn coordinatewise_median<T: Scalar>(points: &[Vec<T>]) -> Vec<T> {
    let p = points[0].len();
    let mut col: Vec<T> = Vec::with_capacity(points.len());
    (0..p)
        .map(|j| {
            col.clear();
            col.extend(points.iter().map(|x| x[j]));
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = col.len();
            if n % 2 == 1 {
                col[n / 2]
            } else {
                (col[n / 2 - 1] + col[n / 2]) * T::of(0.5)
            }
        })
        .collect()
}

/// Whether `points[k]` is itself the geometric median: the resultant of unit
/// vectors towards the other points has norm below its multiplicity.
///
/// Ties (a whole segment of minimizers, as for two points) are left to the
/// iteration so that the interior solution is returned.
fn vertex_optimal<T: Scalar>(points: &[Vec<T>], k: usize) -> Option<Vec<usize>> {
    let xk = &points[k];
    let mut resultant = vec![T::zero(); xk.len()];
    let mut same = Vec::new();
    for (i, x) in points.iter().enumerate() {
        let d = dist2(x, xk);
        if coincide(d, x, xk) {
            same.push(i);
            continue;
        }
        for ((r, &a), &b) in resultant.iter_mut().zip(x).zip(xk) {
            *r += (a - b) / d;
        }
    }
    let eta = T::from_usize(same.len()).unwrap();
    (norm2(&resultant) <= eta * (T::one() - T::of(1e-9))).then_some(same)
}

pub(crate) fn weiszfeld<T: Scalar>(points: &[Vec<T>], tol: T, max_iter: usize) -> Result<GeometricMedian<T>> {
    let n = points.len();
    let p = points[0].len();
    let mut y = coordinatewise_median(points);
    let mut dist = vec![T::zero(); n];
    let mut weights = vec![T::zero(); n];
    let mut next = vec![T::zero(); p];
    let mut trace = Vec::new();

    for iter in 0..max_iter {
        let mut nearest = 0;
        let mut coincident = Vec::new();
        for (i, x) in points.iter().enumerate() {
            dist[i] = dist2(x, &y);
            if dist[i] < dist[nearest] {
                nearest = i;
            }
            if coincide(dist[i], x, &y) {
                coincident.push(i);
            }
        }
        trace.push(dist.iter().copied().sum());

        if let Some(same) = vertex_optimal(points, nearest) {
            trace.push(gm_objective(points, &points[nearest]));
            return Ok(GeometricMedian {
                median: points[nearest].clone(),
                weights: one_hot(n, &same),
                iterations: iter,
                objective_trace: trace,
            });
        }

        // plain Weiszfeld map over non-coincident points
        let mut wsum = T::zero();
        for i in 0..n {
            weights[i] = if coincident.contains(&i) { T::zero() } else { T::one() / dist[i] };
            wsum += weights[i];
        }
        if wsum == T::zero() {
            // every point coincides with y
            return Ok(GeometricMedian {
                median: y,
                weights: one_hot(n, &coincident),
                iterations: iter,
                objective_trace: trace,
            });
        }
        weights.iter_mut().for_each(|w| *w /= wsum);

        if !coincident.is_empty() {
            // Vardi–Zhang: blend the Weiszfeld target with the current vertex
            let mut resultant = vec![T::zero(); p];
            for (i, x) in points.iter().enumerate() {
                if weights[i] > T::zero() {
                    for ((r, &a), &b) in resultant.iter_mut().zip(x).zip(&y) {
                        *r += (a - b) / dist[i];
                    }
                }
            }
            let eta = T::from_usize(coincident.len()).unwrap();
            let rn = norm2(&resultant);
            let keep = (eta / rn).min(T::one());
            let share = keep / eta;
            for (i, w) in weights.iter_mut().enumerate() {
                *w = if coincident.contains(&i) { share } else { *w * (T::one() - keep) };
            }
        }

        next.iter_mut().for_each(|v| *v = T::zero());
        for (x, &w) in points.iter().zip(&weights) {
            if w > T::zero() {
                for (nv, &xv) in next.iter_mut().zip(x) {
                    *nv += w * xv;
                }
            }
        }

        let step = dist2(&next, &y);
        let harmonic = T::from_usize(n - coincident.len()).unwrap() / wsum;
        std::mem::swap(&mut y, &mut next);
        if step <= tol * harmonic {
            trace.push(gm_objective(points, &y));
            return Ok(GeometricMedian { median: y, weights, iterations: iter + 1, objective_trace: trace });
        }
    }
    Err(Error::Convergence {
        what: "Weiszfeld iteration",
        iterations: max_iter,
        last: y.iter().map(|v| v.to_f64_lossy()).collect(),
    })
}

/// Geometric median of the `cfg.k` block means of `points`.
pub fn gmom<T: Scalar>(points: &[Vec<T>], cfg: &GmomConfig<T>) -> Result<Vec<T>> {
    let means = block_means(points, cfg.k, cfg.remainder)?;
    Ok(geometric_median(&means, cfg.tol, cfg.max_iter)?.median)
}

/// GMoM of precomputed per-observation statistics.
///
/// Each `Γ(x)` is treated as a vector in `ℝ^{r²}`; the median of `Γ` and of
/// `g` are computed separately.
pub fn gmom_stats<T: Scalar>(stats: &[ScoreStats<T>], cfg: &GmomConfig<T>) -> Result<ScoreStats<T>> {
    let r = stats.first().ok_or_else(|| Error::input("no statistics"))?.r();
    if stats.iter().any(|s| s.r() != r || s.gamma.rows() != r) {
        return Err(Error::input("statistics have inconsistent dimensions"));
    }
    let pattern = GammaPattern::support_of(&stats.iter().map(|s| &s.gamma).collect::<Vec<_>>());
    let gammas: Vec<Vec<T>> = stats.iter().map(|s| pattern.pack(&s.gamma)).collect();
    let gs: Vec<Vec<T>> = stats.iter().map(|s| s.g.clone()).collect();
    let gamma = pattern.unpack(&gmom(&gammas, cfg)?);
    let g = gmom(&gs, cfg)?;
    Ok(ScoreStats { gamma, g })
}

/// Block means of `(Γ(x), g(x))` computed by streaming over the rows of `data`.
pub fn block_moments<T: Scalar>(
    model: &PairwiseModel<T>,
    data: &Matrix<T>,
    k: usize,
    policy: RemainderPolicy,
) -> Result<Vec<ScoreStats<T>>> {
    let sizes = block_sizes(data.rows(), k, policy)?;
    let mut acc = StatsAccumulator::new(model.n_params());
    let mut out = Vec::with_capacity(k);
    let mut row = 0;
    for size in sizes {
        acc.reset();
        for i in row..row + size {
            acc.add(model, data.row(i)).map_err(|e| with_row(e, i))?;
        }
        out.push(acc.mean()?);
        row += size;
    }
    Ok(out)
}

/// Robust moments `(Γ̂_K(X), ĝ_K(X))` without materializing every `Γ(x)`.
pub fn gmom_moments<T: Scalar>(model: &PairwiseModel<T>, data: &Matrix<T>, cfg: &GmomConfig<T>) -> Result<ScoreStats<T>> {
    let blocks = block_moments(model, data, cfg.k, cfg.remainder)?;
    aggregate_blocks(&blocks, &GammaPattern::for_layout(model.layout()), cfg)
}

/// Geometric medians of already-formed block means.
pub fn aggregate_blocks<T: Scalar>(blocks: &[ScoreStats<T>], pattern: &GammaPattern, cfg: &GmomConfig<T>) -> Result<ScoreStats<T>> {
    if blocks.len() == 1 {
        return Ok(blocks[0].clone());
    }
    let gammas: Vec<Vec<T>> = blocks.iter().map(|b| pattern.pack(&b.gamma)).collect();
    let gs: Vec<Vec<T>> = blocks.iter().map(|b| b.g.clone()).collect();
    let gamma = pattern.unpack(&geometric_median(&gammas, cfg.tol, cfg.max_iter)?.median);
    let g = geometric_median(&gs, cfg.tol, cfg.max_iter)?.median;
    Ok(ScoreStats { gamma, g })
}

/// `ψ(α, p) = (1−α) log((1−α)/(1−p)) + α log(α/p)`, the Bernoulli KL divergence.
pub fn psi<T: Scalar>(alpha: T, p: T) -> T {
    let one = T::one();
    (one - alpha) * ((one - alpha) / (one - p)).ln() + alpha * (alpha / p).ln()
}

/// `C_α = (1−α)/√(1−2α)` for `0 < α < ½`.
pub fn c_alpha<T: Scalar>(alpha: T) -> T {
    (T::one() - alpha) / (T::one() - T::of(2.0) * alpha).sqrt()
}

/// Block count, constants and tolerated corruption for a confidence level
/// `δ` and corruption parameter `τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConcentrationParams<T> {
    pub delta: T,
    pub tau: T,
    /// `ψ((½−τ)²/(1−τ), ½(½−τ)²)`.
    pub psi: T,
    pub k_tau: T,
    pub c_tau: T,
    /// `⌊k(τ) log(1/δ)⌋ + 1`.
    pub k: usize,
    /// Number of samples that may be corrupted: `τ (⌊17 log(1/δ)⌋ + 1)`.
    pub n_c: T,
}

pub fn concentration_params<T: Scalar>(delta: T, tau: T) -> Result<ConcentrationParams<T>> {
    let half = T::of(0.5);
    if !(delta > T::zero() && delta <= T::one()) {
        return Err(Error::input(format!("delta must lie in (0, 1], got {delta}")));
    }
    if !(tau >= T::zero() && tau < half) {
        return Err(Error::input(format!("tau must lie in [0, 1/2), got {tau}")));
    }
    let one = T::one();
    let gap = half - tau;
    let psi_v = psi(gap * gap / (one - tau), half * gap * gap);
    let denom = (one - tau) * psi_v;
    let k_tau = one / denom;
    let c_tau = T::of(2.0) * (T::of(0.75) - tau * tau) / (gap * (half - T::of(2.0) * tau * tau).sqrt() * denom.sqrt());
    let log_inv = (one / delta).ln();
    let k_real = (k_tau * log_inv).floor();
    if !k_real.is_finite() || k_real > T::of(1e15) {
        return Err(Error::input("block count overflows"));
    }
    let k = k_real.to_usize().unwrap() + 1;
    let n_c = tau * ((T::of(17.0) * log_inv).floor() + one);
    Ok(ConcentrationParams { delta, tau, psi: psi_v, k_tau, c_tau, k, n_c })
}

/// `c(τ) √(log(4 / ((1−τ)² δ)) · tr(Σ) / n)`; requires `K ≤ n/2`.
pub fn concentration_radius<T: Scalar>(params: &ConcentrationParams<T>, n: usize, trace_sigma: T) -> Result<T> {
    if 2 * params.k > n {
        return Err(Error::Assumption(format!("block count {} exceeds n/2 = {}", params.k, n as f64 / 2.0)));
    }
    if trace_sigma < T::zero() {
        return Err(Error::input("trace of the covariance must be nonnegative"));
    }
    let one = T::one();
    let om = one - params.tau;
    let log_term = (T::of(4.0) / (om * om * params.delta)).ln();
    Ok(params.c_tau * (log_term * trace_sigma / T::from_usize(n).unwrap()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn block_size_policies() {
        assert_eq!(block_sizes(10, 3, RemainderPolicy::FoldIntoLast).unwrap(), vec![3, 3, 4]);
        assert_eq!(block_sizes(11, 3, RemainderPolicy::FoldIntoLast).unwrap(), vec![3, 4, 4]);
        assert_eq!(block_sizes(10, 3, RemainderPolicy::Discard).unwrap(), vec![3, 3, 3]);
        assert!(block_sizes(3, 4, RemainderPolicy::FoldIntoLast).is_err());
        assert!(block_sizes(3, 0, RemainderPolicy::FoldIntoLast).is_err());
    }

    #[test]
    fn block_means_extremes() {
        let pts = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 9.0]];
        assert_eq!(block_means(&pts, 1, RemainderPolicy::FoldIntoLast).unwrap(), vec![vec![3.0, 5.0]]);
        assert_eq!(block_means(&pts, 3, RemainderPolicy::FoldIntoLast).unwrap(), pts);
    }

    #[test]
    fn geometric_median_examples() {
        let gm = geometric_median(&[vec![3.0, -1.0]], 1e-10, 100).unwrap();
        assert_eq!(gm.median, vec![3.0, -1.0]);
        assert_eq!(gm.weights, vec![1.0]);

        let gm = geometric_median(&[vec![1.0], vec![2.0], vec![100.0]], 1e-10, 100).unwrap();
        assert_eq!(gm.median, vec![2.0]);

        let sq = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        let gm = geometric_median(&sq, 1e-12, 1000).unwrap();
        assert!(norm2(&gm.median) < 1e-9);
    }

    #[test]
    fn weiszfeld_snaps_to_vertex_in_one_dimension() {
        let pts = vec![vec![1.0], vec![2.0], vec![100.0]];
        let gm = weiszfeld(&pts, 1e-12, 1000).unwrap();
        assert_eq!(gm.median, vec![2.0]);
        assert_eq!(gm.weights, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn obtuse_triangle_median_is_vertex() {
        // angle at the origin exceeds 120°
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.1], vec![-1.0, 0.1]];
        let gm = geometric_median(&pts, 1e-12, 1000).unwrap();
        assert_eq!(gm.median, vec![0.0, 0.0]);
    }

    #[test]
    fn weiszfeld_objective_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..25).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let gm = geometric_median(&pts, 1e-12, 10_000).unwrap();
        for w in gm.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-14));
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        assert!(geometric_median(&[vec![1.0, f64::NAN], vec![0.0, 0.0]], 1e-10, 10).is_err());
        assert!(geometric_median::<f64>(&[], 1e-10, 10).is_err());
    }

    #[test]
    fn max_iter_reports_last_iterate() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![5.0, 5.0]];
        match geometric_median(&pts, 0.0, 2) {
            Err(Error::Convergence { iterations: 2, last, .. }) => assert_eq!(last.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gmom_reductions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<Vec<f64>> = (0..17).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mean = block_means(&pts, 1, RemainderPolicy::FoldIntoLast).unwrap().remove(0);
        assert_eq!(gmom(&pts, &GmomConfig::new(1)).unwrap(), mean);

        let uni: Vec<Vec<f64>> = pts.iter().map(|p| vec![p[0]]).collect();
        let mut sorted: Vec<f64> = uni.iter().map(|p| p[0]).collect();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(gmom(&uni, &GmomConfig::new(17)).unwrap(), vec![sorted[8]]);
    }

    #[test]
    fn concentration_constants_at_zero_corruption() {
        let cp = concentration_params(0.1f64, 0.0).unwrap();
        assert!((cp.psi - 0.0576738).abs() < 1e-6, "{}", cp.psi);
        assert!((cp.k_tau - 17.3389).abs() < 1e-3, "{}", cp.k_tau);
        assert_eq!(cp.k, 40);
        assert!((cp.c_tau - 17.6664).abs() < 1e-3, "{}", cp.c_tau);
        assert_eq!(concentration_params(1.0f64, 0.3).unwrap().k, 1);
        assert!(concentration_params(0.1f64, 0.5).is_err());
        assert!(concentration_params(0.0f64, 0.1).is_err());
    }

    #[test]
    fn radius_properties() {
        let cp = concentration_params(0.1f64, 0.0).unwrap();
        assert_eq!(concentration_radius(&cp, 1000, 0.0).unwrap(), 0.0);
        let r1 = concentration_radius(&cp, 1000, 10.0).unwrap();
        let r4 = concentration_radius(&cp, 4000, 10.0).unwrap();
        assert!((r4 / r1 - 0.5).abs() < 1e-12);
        assert!(matches!(concentration_radius(&cp, 79, 1.0), Err(Error::Assumption(_))));
    }
}
