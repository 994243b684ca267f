//! Rowwise contamination: a fixed fraction of whole observations is replaced
//! by draws from a corrupting law.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{sample_gaussian, Family, Support};
use crate::scalar::Scalar;
use crate::simulate::random_model;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContaminationKind {
    /// Independent Pareto draws per column with scale equal to the column's
    /// mean absolute value and shape `intensity`.
    ParetoCols,
    /// `N(0, intensity · diag(σ̂²))` with column variances of the input.
    GaussianScaled,
    /// Rows drawn from an independent random Gaussian graphical model.
    CrossModelGgm,
    /// Every coordinate of the row shifted by `intensity`.
    AdversarialShift,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationSpec {
    pub kind: ContaminationKind,
    pub epsilon: f64,
    pub intensity: f64,
    #[serde(default)]
    pub seed: u64,
    /// Edge count of the corrupting model for [`ContaminationKind::CrossModelGgm`];
    /// defaults to the dimension.
    #[serde(default)]
    pub cross_edges: Option<usize>,
}

impl ContaminationSpec {
    pub fn new(kind: ContaminationKind, epsilon: f64, intensity: f64, seed: u64) -> Self {
        Self { kind, epsilon, intensity, seed, cross_edges: None }
    }

    /// Shape-1 Pareto contamination of a fraction `epsilon` of rows.
    pub fn pareto(epsilon: f64, seed: u64) -> Self {
        Self::new(ContaminationKind::ParetoCols, epsilon, 1.0, seed)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::input(format!("epsilon must lie in [0, 1], got {}", self.epsilon)));
        }
        if !self.intensity.is_finite() {
            return Err(Error::input("contamination intensity must be finite"));
        }
        match self.kind {
            ContaminationKind::ParetoCols if self.intensity <= 0.0 => {
                Err(Error::input("Pareto shape must be positive"))
            }
            ContaminationKind::GaussianScaled if self.intensity < 0.0 => {
                Err(Error::input("Gaussian variance multiplier must be nonnegative"))
            }
            _ => Ok(()),
        }
    }

    /// Number of rows replaced out of `n`: `round(ε n)`.
    pub fn n_corrupted(&self, n: usize) -> usize {
        ((self.epsilon * n as f64).round() as usize).min(n)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Contaminated<T> {
    pub data: Matrix<T>,
    /// Sorted indices of replaced rows.
    pub corrupted_rows: Vec<usize>,
}

const POSITIVE_FLOOR: f64 = 1e-12;

/// Replaces exactly `round(ε n)` uniformly chosen rows of `data`.
pub fn contaminate<T: Scalar>(data: &Matrix<T>, spec: &ContaminationSpec, support: Support) -> Result<Contaminated<T>> {
    spec.validate()?;
    let (n, m) = (data.rows(), data.cols());
    let count = spec.n_corrupted(n);
    let mut out = data.clone();
    if count == 0 {
        return Ok(Contaminated { data: out, corrupted_rows: Vec::new() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = sample_indices(&mut rng, n, count).into_vec();
    rows.sort_unstable();
    let nonneg = support == Support::NonNegOrthant;

    match spec.kind {
        ContaminationKind::ParetoCols => {
            let scale: Vec<f64> = (0..m)
                .map(|j| (0..n).map(|i| data[(i, j)].to_f64_lossy().abs()).sum::<f64>() / n as f64)
                .collect();
            if let Some(j) = scale.iter().position(|s| !(*s > 0.0)) {
                return Err(Error::input(format!("column {j} has zero mean magnitude; Pareto scale undefined")));
            }
            for &i in &rows {
                for (j, s) in scale.iter().enumerate() {
                    let u = 1.0 - rng.random::<f64>();
                    out[(i, j)] = T::of(s * u.powf(-1.0 / spec.intensity));
                }
            }
        }
        ContaminationKind::GaussianScaled => {
            let sd: Vec<f64> = (0..m).map(|j| column_variance(data, j).sqrt() * spec.intensity.sqrt()).collect();
            for &i in &rows {
                for (j, s) in sd.iter().enumerate() {
                    let v = s * rng.sample::<f64, _>(StandardNormal);
                    out[(i, j)] = T::of(if nonneg { v.abs().max(POSITIVE_FLOOR) } else { v });
                }
            }
        }
        ContaminationKind::CrossModelGgm => {
            let kappa = spec.cross_edges.unwrap_or(m).min(m * (m - 1) / 2);
            let model = random_model::<f64, _>(m, kappa, Family::Gaussian, &mut rng)?;
            let draws = sample_gaussian(&model, count, &mut rng)?;
            for (k, &i) in rows.iter().enumerate() {
                for j in 0..m {
                    let v = draws[(k, j)];
                    out[(i, j)] = T::of(if nonneg { v.abs().max(POSITIVE_FLOOR) } else { v });
                }
            }
        }
        ContaminationKind::AdversarialShift => {
            for &i in &rows {
                for j in 0..m {
                    let v = data[(i, j)].to_f64_lossy() + spec.intensity;
                    out[(i, j)] = T::of(if nonneg { v.max(POSITIVE_FLOOR) } else { v });
                }
            }
        }
    }
    Ok(Contaminated { data: out, corrupted_rows: rows })
}

fn column_variance<T: Scalar>(data: &Matrix<T>, j: usize) -> f64 {
    let n = data.rows();
    if n < 2 {
        return 0.0;
    }
    let mean = (0..n).map(|i| data[(i, j)].to_f64_lossy()).sum::<f64>() / n as f64;
    (0..n).map(|i| (data[(i, j)].to_f64_lossy() - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}
