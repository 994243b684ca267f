//! Pairwise interaction exponential families.
//!
//! A model has density proportional to `exp(θᵀ t(x))` on its domain, where the
//! parameter vector `θ` stacks the upper triangle of the symmetric interaction
//! matrix `Θ` row by row followed by the location vector `η`:
//!
//! ```text
//! (Θ_11, Θ_12, …, Θ_1m, Θ_22, …, Θ_2m, …, Θ_mm, η_1, …, η_m)
//! ```
//!
//! so there are `r = m(m+1)/2 + m` parameters. Signs are folded into `t`:
//!
//! * square root: `t_ii = −x_i`, `t_ij = 2√(x_i x_j)`, `t_i = 2√x_i`, on `[0, ∞)^m`;
//! * Gaussian: `t_ii = −x_i²/2`, `t_ij = −x_i x_j`, `t_i = x_i`, on `ℝ^m`,
//!   which makes `Θ` the precision matrix.
//!
//! The base measure term `b(x)` is identically zero for both families.

mod sampler;

pub use sampler::{sample_gaussian, sample_sqr_gibbs, GibbsConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SquareRoot,
    Gaussian,
}

impl Family {
    pub fn domain(self) -> Support {
        match self {
            Family::SquareRoot => Support::NonNegOrthant,
            Family::Gaussian => Support::RealLine,
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "square_root" | "sqrt" | "sqr" => Ok(Family::SquareRoot),
            "gaussian" | "normal" | "ggm" => Ok(Family::Gaussian),
            other => Err(Error::Config(format!("unknown family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    RealLine,
    NonNegOrthant,
}

/// Sample space `𝒳` of an `m`-dimensional model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub support: Support,
    pub dimension: usize,
}

impl DomainSpec {
    pub fn new(support: Support, dimension: usize) -> Self {
        Self { support, dimension }
    }

    pub fn for_family(family: Family, dimension: usize) -> Self {
        Self::new(family.domain(), dimension)
    }
}

/// Index arithmetic for the flattened parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    m: usize,
}

/// What a flattened parameter index refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    Interaction(usize, usize),
    Location(usize),
}

impl ParamLayout {
    pub fn new(m: usize) -> Self {
        Self { m }
    }

    /// Recovers `m` from a parameter count `r = m(m+3)/2`.
    pub fn from_len(r: usize) -> Result<Self> {
        let mut m = 0;
        while m * (m + 3) / 2 < r {
            m += 1;
        }
        if m * (m + 3) / 2 == r {
            Ok(Self { m })
        } else {
            Err(Error::input(format!("{r} is not a valid pairwise parameter count")))
        }
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn n_interactions(&self) -> usize {
        self.m * (self.m + 1) / 2
    }

    pub fn len(&self) -> usize {
        self.n_interactions() + self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    /// Index of `Θ_ij`; order of `i` and `j` does not matter.
    #[inline]
    pub fn theta(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.m - i * i.saturating_sub(1) / 2 + (j - i)
    }

    #[inline]
    pub fn eta(&self, i: usize) -> usize {
        self.n_interactions() + i
    }

    pub fn param(&self, idx: usize) -> Param {
        if idx >= self.n_interactions() {
            return Param::Location(idx - self.n_interactions());
        }
        let mut i = 0;
        let mut start = 0;
        loop {
            let row_len = self.m - i;
            if idx < start + row_len {
                return Param::Interaction(i, i + idx - start);
            }
            start += row_len;
            i += 1;
        }
    }

    /// Variable indices a parameter touches.
    pub fn variables(&self, idx: usize) -> (usize, usize) {
        match self.param(idx) {
            Param::Interaction(i, j) => (i, j),
            Param::Location(i) => (i, i),
        }
    }

    /// Flattens `(Θ, η)` using only the upper triangle of `Θ`.
    pub fn flatten<T: Scalar>(&self, theta: &Matrix<T>, eta: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.len());
        for i in 0..self.m {
            for j in i..self.m {
                out.push(theta[(i, j)]);
            }
        }
        out.extend_from_slice(eta);
        out
    }

    /// Inverse of [`flatten`](Self::flatten); `Θ` comes back symmetric.
    pub fn unflatten<T: Scalar>(&self, params: &[T]) -> (Matrix<T>, Vec<T>) {
        assert_eq!(params.len(), self.len());
        let mut theta = Matrix::zeros(self.m, self.m);
        let mut k = 0;
        for i in 0..self.m {
            for j in i..self.m {
                theta[(i, j)] = params[k];
                theta[(j, i)] = params[k];
                k += 1;
            }
        }
        (theta, params[k..].to_vec())
    }
}

/// One nonzero of `∂_j t(x)`: parameter index, first and second partials.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartialEntry<T> {
    pub param: usize,
    pub dt: T,
    pub ddt: T,
}

/// Dense partial derivatives of the sufficient statistic, `r × m` each.
#[derive(Clone, Debug)]
pub struct StatPartials<T> {
    pub dt: Matrix<T>,
    pub ddt: Matrix<T>,
    pub db: Vec<T>,
}

/// A pairwise interaction model with interaction matrix `Θ` and locations `η`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseModel<T> {
    family: Family,
    theta: Matrix<T>,
    eta: Vec<T>,
    weight_exponent: T,
}

impl<T: Scalar> PairwiseModel<T> {
    pub fn new(family: Family, theta: Matrix<T>, eta: Vec<T>, weight_exponent: T) -> Result<Self> {
        if !theta.is_square() || theta.rows() != eta.len() {
            return Err(Error::Model(format!(
                "theta is {}x{} but eta has length {}",
                theta.rows(),
                theta.cols(),
                eta.len()
            )));
        }
        if theta.rows() == 0 {
            return Err(Error::Model("model dimension must be positive".into()));
        }
        if !theta.is_symmetric(T::zero()) {
            return Err(Error::Model("theta must be symmetric".into()));
        }
        if !(weight_exponent >= T::zero()) {
            return Err(Error::Model("weight exponent must be nonnegative".into()));
        }
        if theta.as_slice().iter().chain(&eta).any(|v| !v.is_finite()) {
            return Err(Error::Model("parameters must be finite".into()));
        }
        Ok(Self { family, theta, eta, weight_exponent })
    }

    pub fn gaussian(theta: Matrix<T>, eta: Vec<T>) -> Result<Self> {
        Self::new(Family::Gaussian, theta, eta, T::zero())
    }

    pub fn square_root(theta: Matrix<T>, eta: Vec<T>, weight_exponent: T) -> Result<Self> {
        Self::new(Family::SquareRoot, theta, eta, weight_exponent)
    }

    /// Rebuilds a model from a flattened parameter vector.
    pub fn from_params(family: Family, params: &[T], weight_exponent: T) -> Result<Self> {
        let layout = ParamLayout::from_len(params.len())?;
        let (theta, eta) = layout.unflatten(params);
        Self::new(family, theta, eta, weight_exponent)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.eta.len()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout::new(self.dim())
    }

    pub fn n_params(&self) -> usize {
        self.layout().len()
    }

    pub fn theta(&self) -> &Matrix<T> {
        &self.theta
    }

    pub fn eta(&self) -> &[T] {
        &self.eta
    }

    pub fn weight_exponent(&self) -> T {
        self.weight_exponent
    }

    pub fn domain(&self) -> DomainSpec {
        DomainSpec::for_family(self.family, self.dim())
    }

    pub fn params(&self) -> Vec<T> {
        self.layout().flatten(&self.theta, &self.eta)
    }

    /// Number of nonzero off-diagonal entries in the upper triangle of `Θ`.
    pub fn edge_count(&self) -> usize {
        let m = self.dim();
        (0..m).flat_map(|i| ((i + 1)..m).map(move |j| (i, j))).filter(|&(i, j)| self.theta[(i, j)] != T::zero()).count()
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::input(format!("observation has length {}, model dimension {}", x.len(), self.dim())));
        }
        Ok(())
    }

    fn check_domain(&self, x: &[T]) -> Result<()> {
        self.check_dim(x)?;
        for (j, &v) in x.iter().enumerate() {
            let bad = !v.is_finite() || (self.family == Family::SquareRoot && v < T::zero());
            if bad {
                return Err(Error::Domain { row: 0, col: j, value: v.to_f64_lossy() });
            }
        }
        Ok(())
    }

    /// Interior points only: every coordinate strictly positive for the square-root family.
    pub fn check_interior(&self, x: &[T]) -> Result<()> {
        self.check_domain(x)?;
        if self.family == Family::SquareRoot {
            if let Some(j) = x.iter().position(|&v| v == T::zero()) {
                return Err(Error::SingularPoint { coord: j });
            }
        }
        Ok(())
    }

    /// Density exponent `log p(x|θ) + a(θ)`.
    pub fn log_density_unnorm(&self, x: &[T]) -> Result<T> {
        self.check_domain(x)?;
        let m = self.dim();
        let two = T::of(2.0);
        let half = T::of(0.5);
        let mut acc = T::zero();
        match self.family {
            Family::SquareRoot => {
                let s: Vec<T> = x.iter().map(|v| v.sqrt()).collect();
                for i in 0..m {
                    acc -= self.theta[(i, i)] * x[i];
                    for j in (i + 1)..m {
                        acc += two * self.theta[(i, j)] * s[i] * s[j];
                    }
                    acc += two * self.eta[i] * s[i];
                }
            }
            Family::Gaussian => {
                for i in 0..m {
                    acc -= half * self.theta[(i, i)] * x[i] * x[i];
                    for j in (i + 1)..m {
                        acc -= self.theta[(i, j)] * x[i] * x[j];
                    }
                    acc += self.eta[i] * x[i];
                }
            }
        }
        Ok(acc)
    }

    /// Sufficient statistic `t(x)` in the flattened parameter order.
    pub fn sufficient_stats(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_domain(x)?;
        let layout = self.layout();
        let m = self.dim();
        let mut t = vec![T::zero(); layout.len()];
        let two = T::of(2.0);
        for i in 0..m {
            for j in i..m {
                t[layout.theta(i, j)] = match (self.family, i == j) {
                    (Family::SquareRoot, true) => -x[i],
                    (Family::SquareRoot, false) => two * (x[i] * x[j]).sqrt(),
                    (Family::Gaussian, true) => -T::of(0.5) * x[i] * x[i],
                    (Family::Gaussian, false) => -x[i] * x[j],
                };
            }
            t[layout.eta(i)] = match self.family {
                Family::SquareRoot => two * x[i].sqrt(),
                Family::Gaussian => x[i],
            };
        }
        Ok(t)
    }

    /// Sparse partials `∂_j t`, `∂_jj t` for one coordinate `j`.
    ///
    /// Exactly the `m + 1` parameters touching variable `j` are emitted, in
    /// ascending parameter order. `x` must already be known to be interior.
    pub fn column_partials_into(&self, x: &[T], j: usize, out: &mut Vec<PartialEntry<T>>) {
        out.clear();
        let layout = self.layout();
        let m = self.dim();
        match self.family {
            Family::SquareRoot => {
                let sj = x[j].sqrt();
                let xj32 = x[j] * sj;
                let half = T::of(0.5);
                for i in 0..m {
                    let (dt, ddt) = if i == j {
                        (-T::one(), T::zero())
                    } else {
                        let si = x[i].sqrt();
                        (si / sj, -half * si / xj32)
                    };
                    out.push(PartialEntry { param: layout.theta(i, j), dt, ddt });
                }
                out.push(PartialEntry { param: layout.eta(j), dt: T::one() / sj, ddt: -half / xj32 });
            }
            Family::Gaussian => {
                for i in 0..m {
                    let (dt, ddt) = if i == j { (-x[j], -T::one()) } else { (-x[i], T::zero()) };
                    out.push(PartialEntry { param: layout.theta(i, j), dt, ddt });
                }
                out.push(PartialEntry { param: layout.eta(j), dt: T::one(), ddt: T::zero() });
            }
        }
        out.sort_by_key(|e| e.param);
    }

    /// Dense partials: `dt[k][j] = ∂_j t_k(x)`, `ddt[k][j] = ∂_jj t_k(x)`, `db = ∇b = 0`.
    pub fn stat_partials(&self, x: &[T]) -> Result<StatPartials<T>> {
        self.check_interior(x)?;
        let (r, m) = (self.n_params(), self.dim());
        let mut dt = Matrix::zeros(r, m);
        let mut ddt = Matrix::zeros(r, m);
        let mut buf = Vec::with_capacity(m + 1);
        for j in 0..m {
            self.column_partials_into(x, j, &mut buf);
            for e in &buf {
                dt[(e.param, j)] = e.dt;
                ddt[(e.param, j)] = e.ddt;
            }
        }
        Ok(StatPartials { dt, ddt, db: vec![T::zero(); m] })
    }

    /// Weight functions `h_j(x)` and their derivatives `∂_j h_j(x)`.
    pub fn weight_h(&self, x: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        self.check_domain(x)?;
        let m = self.dim();
        match self.family {
            Family::Gaussian => Ok((vec![T::one(); m], vec![T::zero(); m])),
            Family::SquareRoot => {
                let e = self.weight_exponent;
                let h = x.iter().map(|&v| v.powf(e)).collect();
                let dh = x
                    .iter()
                    .map(|&v| if e == T::zero() { T::zero() } else { e * v.powf(e - T::one()) })
                    .collect();
                Ok((h, dh))
            }
        }
    }

    /// Sufficient conditions under which the samplers accept the model.
    ///
    /// Gaussian: `Θ` positive definite. Square root: positive diagonal and
    /// strict diagonal dominance `Σ_{j≠i} |Θ_ij| < Θ_ii`.
    pub fn check_normalizable(&self) -> Result<()> {
        match self.family {
            Family::Gaussian => self
                .theta
                .cholesky()
                .map(|_| ())
                .map_err(|_| Error::Model("Gaussian precision matrix is not positive definite".into())),
            Family::SquareRoot => {
                let m = self.dim();
                for i in 0..m {
                    let d = self.theta[(i, i)];
                    let off: T = (0..m).filter(|&j| j != i).map(|j| self.theta[(i, j)].abs()).sum();
                    if !(d > T::zero()) || !(off < d) {
                        return Err(Error::Model(format!(
                            "square-root model row {i} is not strictly diagonally dominant"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sqr2() -> PairwiseModel<f64> {
        let theta = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.5, 1.0]]);
        PairwiseModel::square_root(theta, vec![0.3, -0.2], 1.5).unwrap()
    }

    #[test]
    fn layout_indices_follow_upper_triangle_row_major() {
        let l = ParamLayout::new(3);
        let expect = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];
        for (k, &(i, j)) in expect.iter().enumerate() {
            assert_eq!(l.theta(i, j), k);
            assert_eq!(l.theta(j, i), k);
            assert_eq!(l.param(k), Param::Interaction(i, j));
        }
        assert_eq!(l.eta(0), 6);
        assert_eq!(l.len(), 9);
        assert_eq!(ParamLayout::from_len(9).unwrap().dim(), 3);
        assert!(ParamLayout::from_len(8).is_err());
    }

    #[test]
    fn layout_indices_large_m() {
        let l = ParamLayout::new(7);
        let mut k = 0;
        for i in 0..7 {
            for j in i..7 {
                assert_eq!(l.theta(i, j), k);
                k += 1;
            }
        }
    }

    #[test]
    fn log_density_examples() {
        let m1 = PairwiseModel::square_root(Matrix::identity(1), vec![0.0], 1.5).unwrap();
        assert_eq!(m1.log_density_unnorm(&[0.0]).unwrap(), 0.0);

        let g = PairwiseModel::gaussian(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(g.log_density_unnorm(&[1.0, 1.0]).unwrap(), -1.0);

        let v = sqr2().log_density_unnorm(&[4.0, 1.0]).unwrap();
        assert!((v - (-2.2)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn log_density_is_theta_dot_t() {
        let m = sqr2();
        let x = [2.5, 0.7];
        let t = m.sufficient_stats(&x).unwrap();
        let lin: f64 = m.params().iter().zip(&t).map(|(a, b)| a * b).sum();
        assert!((lin - m.log_density_unnorm(&x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn negative_coordinate_is_domain_error() {
        let err = sqr2().log_density_unnorm(&[1.0, -0.1]).unwrap_err();
        assert!(matches!(err, Error::Domain { col: 1, .. }));
    }

    #[test]
    fn partial_examples() {
        let g = PairwiseModel::gaussian(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let p = g.stat_partials(&[1.5, -0.5]).unwrap();
        let l = g.layout();
        assert_eq!(p.dt[(l.theta(0, 0), 0)], -1.5);
        assert_eq!(p.dt[(l.theta(1, 1), 1)], 0.5);

        let s = PairwiseModel::square_root(Matrix::identity(1), vec![0.0], 0.0).unwrap();
        let p = s.stat_partials(&[4.0]).unwrap();
        assert_eq!(p.dt[(1, 0)], 0.5);
        assert!(p.db.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_is_singular_for_square_root() {
        assert!(matches!(sqr2().stat_partials(&[0.0, 1.0]), Err(Error::SingularPoint { coord: 0 })));
    }

    #[test]
    fn weight_examples() {
        let g = PairwiseModel::gaussian(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        assert_eq!(g.weight_h(&[5.0, -3.0]).unwrap(), (vec![1.0, 1.0], vec![0.0, 0.0]));
        assert_eq!(sqr2().weight_h(&[4.0, 1.0]).unwrap(), (vec![8.0, 1.0], vec![3.0, 1.5]));
        let s0 = PairwiseModel::square_root(Matrix::identity(2), vec![0.0, 0.0], 0.0).unwrap();
        assert_eq!(s0.weight_h(&[4.0, 0.0]).unwrap(), (vec![1.0, 1.0], vec![0.0, 0.0]));
    }

    #[test]
    fn rejects_asymmetric_theta() {
        let theta = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]);
        assert!(PairwiseModel::gaussian(theta, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn normalizability_checks() {
        assert!(sqr2().check_normalizable().is_ok());
        let bad = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(PairwiseModel::square_root(bad.clone(), vec![0.0, 0.0], 1.0).unwrap().check_normalizable().is_err());
        assert!(PairwiseModel::gaussian(bad, vec![0.0, 0.0]).unwrap().check_normalizable().is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let m = sqr2();
        let back = PairwiseModel::from_params(Family::SquareRoot, &m.params(), 1.5).unwrap();
        assert_eq!(back, m);
    }
}
