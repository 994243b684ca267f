//! Per-observation score-matching statistics and their empirical means.
//!
//! For weights `h` and sufficient statistic `t`,
//!
//! ```text
//! Γ(x) = Σ_j h_j(x) ∂_j t(x) ∂_j t(x)ᵀ
//! g(x) = −Σ_j [ h_j(x) ∂_j b(x) ∂_j t(x) + h_j(x) ∂_jj t(x) + ∂_j h_j(x) ∂_j t(x) ]
//! ```
//!
//! and the score-matching loss is `½ θᵀ Γ θ − gᵀ θ` up to a constant.
//! For pairwise models `∂_j t` is nonzero only on the `m + 1` parameters that
//! touch variable `j`, so `Γ(x)` is assembled in `O(m³)` rather than `O(r²)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{PairwiseModel, ParamLayout, PartialEntry};
use crate::scalar::Scalar;

/// A pair `(Γ, g)`, either for one observation or aggregated.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScoreStats<T> {
    pub gamma: Matrix<T>,
    pub g: Vec<T>,
}

impl<T: Scalar> ScoreStats<T> {
    pub fn zeros(r: usize) -> Self {
        Self { gamma: Matrix::zeros(r, r), g: vec![T::zero(); r] }
    }

    pub fn r(&self) -> usize {
        self.g.len()
    }
}

/// Positions `(a, b)`, `a ≤ b`, of `Γ` that can be nonzero.
///
/// Packing a symmetric matrix onto these positions with off-diagonal entries
/// scaled by `√2` is an isometry from the `r²`-dimensional vectorization, so
/// geometric medians computed on packed vectors equal those of the full
/// vectorized matrices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GammaPattern {
    r: usize,
    positions: Vec<(usize, usize)>,
}

impl GammaPattern {
    /// Union over variables `j` of the blocks `R_j × R_j`.
    pub fn for_layout(layout: ParamLayout) -> Self {
        let m = layout.dim();
        let r = layout.len();
        let mut mask = vec![false; r * r];
        for j in 0..m {
            let mut rj: Vec<usize> = (0..m).map(|i| layout.theta(i, j)).collect();
            rj.push(layout.eta(j));
            for &a in &rj {
                for &b in &rj {
                    if a <= b {
                        mask[a * r + b] = true;
                    }
                }
            }
        }
        Self::from_mask(r, &mask)
    }

    /// Full upper triangle.
    pub fn dense(r: usize) -> Self {
        let positions = (0..r).flat_map(|a| (a..r).map(move |b| (a, b))).collect();
        Self { r, positions }
    }

    fn from_mask(r: usize, mask: &[bool]) -> Self {
        let positions = (0..r)
            .flat_map(|a| (a..r).map(move |b| (a, b)))
            .filter(|&(a, b)| mask[a * r + b])
            .collect();
        Self { r, positions }
    }

    /// Positions where any of the given matrices is nonzero.
    pub fn support_of<T: Scalar>(mats: &[&Matrix<T>]) -> Self {
        let r = mats.first().map_or(0, |m| m.rows());
        let mut mask = vec![false; r * r];
        for mat in mats {
            for a in 0..r {
                for b in a..r {
                    if mat[(a, b)] != T::zero() || mat[(b, a)] != T::zero() {
                        mask[a * r + b] = true;
                    }
                }
            }
        }
        Self::from_mask(r, &mask)
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[(usize, usize)] {
        &self.positions
    }

    pub fn pack<T: Scalar>(&self, gamma: &Matrix<T>) -> Vec<T> {
        let s = T::of(std::f64::consts::SQRT_2);
        self.positions
            .iter()
            .map(|&(a, b)| if a == b { gamma[(a, b)] } else { s * gamma[(a, b)] })
            .collect()
    }

    pub fn unpack<T: Scalar>(&self, packed: &[T]) -> Matrix<T> {
        assert_eq!(packed.len(), self.positions.len());
        let s = T::of(std::f64::consts::FRAC_1_SQRT_2);
        let mut out = Matrix::zeros(self.r, self.r);
        for (&(a, b), &v) in self.positions.iter().zip(packed) {
            if a == b {
                out[(a, a)] = v;
            } else {
                out[(a, b)] = s * v;
                out[(b, a)] = s * v;
            }
        }
        out
    }
}

/// Running sums of `Γ(x)` (upper triangle) and `g(x)` over observations.
#[derive(Clone, Debug)]
pub struct StatsAccumulator<T> {
    gamma: Matrix<T>,
    g: Vec<T>,
    count: usize,
    buf: Vec<PartialEntry<T>>,
}

impl<T: Scalar> StatsAccumulator<T> {
    pub fn new(r: usize) -> Self {
        Self { gamma: Matrix::zeros(r, r), g: vec![T::zero(); r], count: 0, buf: Vec::new() }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reset(&mut self) {
        self.gamma.as_mut_slice().iter_mut().for_each(|v| *v = T::zero());
        self.g.iter_mut().for_each(|v| *v = T::zero());
        self.count = 0;
    }

    /// Adds `Γ(x)` and `g(x)` for one interior observation.
    pub fn add(&mut self, model: &PairwiseModel<T>, x: &[T]) -> Result<()> {
        model.check_interior(x)?;
        let (h, dh) = model.weight_h(x)?;
        let mut buf = std::mem::take(&mut self.buf);
        for j in 0..model.dim() {
            model.column_partials_into(x, j, &mut buf);
            let hj = h[j];
            for (p, ep) in buf.iter().enumerate() {
                let s = hj * ep.dt;
                if s != T::zero() {
                    for eq in &buf[p..] {
                        self.gamma[(ep.param, eq.param)] += s * eq.dt;
                    }
                }
                self.g[ep.param] -= hj * ep.ddt + dh[j] * ep.dt;
            }
        }
        self.buf = buf;
        self.count += 1;
        Ok(())
    }

    /// Sums so far, with `Γ` symmetrized.
    pub fn sum(&self) -> ScoreStats<T> {
        let r = self.g.len();
        let mut gamma = self.gamma.clone();
        for a in 0..r {
            for b in (a + 1)..r {
                gamma[(b, a)] = gamma[(a, b)];
            }
        }
        ScoreStats { gamma, g: self.g.clone() }
    }

    pub fn mean(&self) -> Result<ScoreStats<T>> {
        if self.count == 0 {
            return Err(Error::input("no observations accumulated"));
        }
        let mut s = self.sum();
        let inv = T::one() / T::from_usize(self.count).unwrap();
        s.gamma.scale(inv);
        s.g.iter_mut().for_each(|v| *v *= inv);
        Ok(s)
    }
}

/// `Γ(x)` and `g(x)` for one observation.
pub fn score_stats<T: Scalar>(model: &PairwiseModel<T>, x: &[T]) -> Result<ScoreStats<T>> {
    let mut acc = StatsAccumulator::new(model.n_params());
    acc.add(model, x)?;
    Ok(acc.sum())
}

pub fn gamma_of_x<T: Scalar>(model: &PairwiseModel<T>, x: &[T]) -> Result<Matrix<T>> {
    Ok(score_stats(model, x)?.gamma)
}

pub fn g_of_x<T: Scalar>(model: &PairwiseModel<T>, x: &[T]) -> Result<Vec<T>> {
    Ok(score_stats(model, x)?.g)
}

/// Per-row statistics for every observation of `data`.
pub fn score_stats_all<T: Scalar>(model: &PairwiseModel<T>, data: &Matrix<T>) -> Result<Vec<ScoreStats<T>>> {
    (0..data.rows())
        .map(|i| score_stats(model, data.row(i)).map_err(|e| with_row(e, i)))
        .collect()
}

/// Arithmetic means `(Γ̄(X), ḡ(X))` over the rows of `data`.
pub fn empirical_moments<T: Scalar>(model: &PairwiseModel<T>, data: &Matrix<T>) -> Result<ScoreStats<T>> {
    if data.rows() == 0 {
        return Err(Error::input("empty observation matrix"));
    }
    let mut acc = StatsAccumulator::new(model.n_params());
    for i in 0..data.rows() {
        acc.add(model, data.row(i)).map_err(|e| with_row(e, i))?;
    }
    acc.mean()
}

pub(crate) fn with_row(e: Error, row: usize) -> Error {
    match e {
        Error::Domain { col, value, .. } => Error::Domain { row, col, value },
        Error::SingularPoint { coord } => Error::Input(format!("row {row}: coordinate {coord} lies on the boundary")),
        other => other,
    }
}

/// `½ θᵀ Γ θ − gᵀ θ + λ ‖θ‖₁`.
pub fn sm_objective<T: Scalar>(theta: &[T], gamma: &Matrix<T>, g: &[T], lambda: T) -> T {
    let gt = gamma.mul_vec(theta);
    let quad: T = theta.iter().zip(&gt).map(|(&a, &b)| a * b).sum();
    let lin: T = theta.iter().zip(g).map(|(&a, &b)| a * b).sum();
    let l1: T = theta.iter().map(|v| v.abs()).sum();
    T::of(0.5) * quad - lin + lambda * l1
}
