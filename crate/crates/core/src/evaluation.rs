//! Support-recovery and estimation-error summaries.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::EstimatorResult;
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::simulate::{run_experiment, ExperimentSpec, KPolicy, LambdaGrid, ResultRow};

/// `(TPR, FPR)` of the off-diagonal zero pattern of `theta_hat` against `theta0`.
pub fn support_metrics<T: Scalar>(theta_hat: &Matrix<T>, theta0: &Matrix<T>) -> Result<(f64, f64)> {
    let m = theta0.rows();
    if !theta0.is_square() || theta_hat.rows() != m || theta_hat.cols() != m {
        return Err(Error::input("estimate and truth have different dimensions"));
    }
    let (mut tp, mut pos, mut fp, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for i in 0..m {
        for j in (i + 1)..m {
            let est = theta_hat[(i, j)] != T::zero();
            if theta0[(i, j)] != T::zero() {
                pos += 1;
                tp += usize::from(est);
            } else {
                neg += 1;
                fp += usize::from(est);
            }
        }
    }
    if pos == 0 {
        return Err(Error::input("true graph has no edges; TPR undefined"));
    }
    let fpr = if neg == 0 { 0.0 } else { fp as f64 / neg as f64 };
    Ok((tp as f64 / pos as f64, fpr))
}

/// `‖Θ̂ − Θ‖²_F + ‖η̂ − η‖²`.
pub fn squared_error<T: Scalar>(theta_hat: &Matrix<T>, eta_hat: &[T], theta0: &Matrix<T>, eta0: &[T]) -> f64 {
    let a: f64 = theta_hat.as_slice().iter().zip(theta0.as_slice()).map(|(x, y)| (*x - *y).to_f64_lossy().powi(2)).sum();
    let b: f64 = eta_hat.iter().zip(eta0).map(|(x, y)| (*x - *y).to_f64_lossy().powi(2)).sum();
    a + b
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` sorted by fpr, then tpr, from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Curve through `points` plus the endpoints, area by the trapezoid rule.
    ///
    /// Points sharing an fpr are all kept so vertical segments stay vertical.
    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        if points.iter().any(|&(f, t)| !(0.0..=1.0).contains(&f) || !(0.0..=1.0).contains(&t)) {
            return Err(Error::input("ROC points must lie in [0, 1]²"));
        }
        let mut pts: Vec<(f64, f64)> = points.to_vec();
        pts.push((0.0, 0.0));
        pts.push((1.0, 1.0));
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts.dedup();
        let auc = pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum();
        Ok(Self { points: pts, auc })
    }

    /// Tpr at `fpr`, interpolating linearly across the gap containing it.
    pub fn tpr_at(&self, fpr: f64) -> f64 {
        let pts = &self.points;
        let after = pts.partition_point(|p| p.0 <= fpr);
        if after == 0 {
            return pts[0].1;
        }
        let (fa, ta) = pts[after - 1];
        if fa == fpr || after == pts.len() {
            return ta;
        }
        let (fb, tb) = pts[after];
        ta + (tb - ta) * (fpr - fa) / (fb - fa)
    }
}

/// ROC curve traced by the supports along a λ path.
pub fn roc_from_path<T: Scalar>(path: &[EstimatorResult<T>], theta0: &Matrix<T>) -> Result<RocCurve> {
    let mut pts = Vec::with_capacity(path.len());
    for res in path {
        let (theta_hat, _) = res.unflatten()?;
        let (tpr, fpr) = support_metrics(&theta_hat, theta0)?;
        pts.push((fpr, tpr));
    }
    RocCurve::from_points(&pts)
}

/// Vertically averaged ROC with a pointwise bootstrap percentile band.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AveragedRoc {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub tpr_lo: Vec<f64>,
    pub tpr_hi: Vec<f64>,
    pub auc: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BandConfig {
    pub level: f64,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { level: 0.95, resamples: 1000, seed: 0 }
    }
}

/// `count` evenly spaced values on `[0, 1]`.
pub fn unit_grid(count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|i| i as f64 / (count - 1) as f64).collect(),
    }
}

pub fn average_roc(curves: &[RocCurve], fpr_grid: &[f64], band: BandConfig) -> Result<AveragedRoc> {
    if curves.is_empty() {
        return Err(Error::input("no curves to average"));
    }
    if fpr_grid.is_empty() || fpr_grid.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::input("fpr grid must be nonempty and inside [0, 1]"));
    }
    if !(band.level > 0.0 && band.level < 1.0) {
        return Err(Error::input("band level must lie in (0, 1)"));
    }
    let values: Vec<Vec<f64>> = curves.iter().map(|c| fpr_grid.iter().map(|&f| c.tpr_at(f)).collect()).collect();
    let (tpr, (tpr_lo, tpr_hi)) = bootstrap_mean_band(&values, band);
    let auc = curves.iter().map(|c| c.auc).sum::<f64>() / curves.len() as f64;
    Ok(AveragedRoc { fpr: fpr_grid.to_vec(), tpr, tpr_lo, tpr_hi, auc })
}

/// Column means of `values` (one row per unit) and a percentile band for
/// each column mean from resampling rows.
pub fn bootstrap_mean_band(values: &[Vec<f64>], band: BandConfig) -> (Vec<f64>, (Vec<f64>, Vec<f64>)) {
    let n = values.len();
    let p = values[0].len();
    let mean = |rows: &mut dyn Iterator<Item = &Vec<f64>>| {
        let mut acc = vec![0.0; p];
        for r in rows {
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        acc
    };
    let center = mean(&mut values.iter());
    if band.resamples == 0 {
        return (center.clone(), (center.clone(), center));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(band.seed);
    let mut boots: Vec<Vec<f64>> = vec![Vec::with_capacity(band.resamples); p];
    for _ in 0..band.resamples {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let m = mean(&mut idx.iter().map(|&i| &values[i]));
        for (b, v) in boots.iter_mut().zip(m) {
            b.push(v);
        }
    }
    let alpha = (1.0 - band.level) / 2.0;
    let (lo, hi): (Vec<f64>, Vec<f64>) = boots
        .iter_mut()
        .map(|b| {
            b.sort_by(|x, y| x.partial_cmp(y).unwrap());
            (quantile(b, alpha), quantile(b, 1.0 - alpha))
        })
        .unzip();
    (center, (lo, hi))
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Fraction of `edges` that fall in `forbidden`; 0 for no edges.
pub fn forbidden_edge_fdr(edges: &[(usize, usize)], forbidden: &HashSet<(usize, usize)>) -> f64 {
    if edges.is_empty() {
        return 0.0;
    }
    let norm = |&(a, b): &(usize, usize)| (a.min(b), a.max(b));
    let forbidden: HashSet<(usize, usize)> = forbidden.iter().map(norm).collect();
    let bad = edges.iter().map(norm).filter(|e| forbidden.contains(e)).count();
    bad as f64 / edges.len() as f64
}

/// One row of a ROC table: averaged curve for block count `k` at one fpr.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub fpr: f64,
    pub tpr: f64,
    pub tpr_lo: f64,
    pub tpr_hi: f64,
}

pub const ROC_COLUMNS: [&str; 5] = ["K", "fpr", "tpr", "tpr_lo", "tpr_hi"];
pub const MSE_COLUMNS: [&str; 4] = ["K", "mean_se", "se_lo", "se_hi"];

/// Per-replication ROC curves for each `K` in `rows`.
pub fn curves_by_k(rows: &[ResultRow]) -> Result<BTreeMap<usize, Vec<RocCurve>>> {
    let mut grouped: BTreeMap<(usize, usize), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        grouped.entry((r.k, r.rep)).or_default().push((r.fpr, r.tpr));
    }
    let mut out: BTreeMap<usize, Vec<RocCurve>> = BTreeMap::new();
    for ((k, _), pts) in grouped {
        out.entry(k).or_default().push(RocCurve::from_points(&pts)?);
    }
    Ok(out)
}

/// Averaged ROC table for every `K` of an experiment, replications pooled.
pub fn roc_table(rows: &[ResultRow], fpr_grid: &[f64], band: BandConfig) -> Result<Vec<RocRow>> {
    let mut out = Vec::new();
    for (k, curves) in curves_by_k(rows)? {
        let avg = average_roc(&curves, fpr_grid, band)?;
        for i in 0..avg.fpr.len() {
            out.push(RocRow { k, fpr: avg.fpr[i], tpr: avg.tpr[i], tpr_lo: avg.tpr_lo[i], tpr_hi: avg.tpr_hi[i] });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MseRow {
    #[serde(rename = "K")]
    pub k: usize,
    pub mean_se: f64,
    pub se_lo: f64,
    pub se_hi: f64,
    /// Replications that produced an estimate.
    #[serde(skip)]
    pub count: usize,
}

/// Mean squared error of the unpenalized estimator for each `K` in `k_grid`.
pub fn mse_vs_k(spec: &ExperimentSpec, k_grid: &[usize], band: BandConfig) -> Result<Vec<MseRow>> {
    if k_grid.is_empty() {
        return Err(Error::Config("empty K grid".into()));
    }
    let mut spec = spec.clone();
    spec.k_policy = KPolicy::Sweep(k_grid.to_vec());
    spec.lambda_grid = LambdaGrid::Explicit(vec![0.0]);
    let out = run_experiment(&spec)?;
    mse_table(&out.rows, k_grid, band)
}

/// Summarizes `mse_theta` per `K` over replications.
pub fn mse_table(rows: &[ResultRow], k_grid: &[usize], band: BandConfig) -> Result<Vec<MseRow>> {
    let mut out = Vec::with_capacity(k_grid.len());
    for &k in k_grid {
        let se: Vec<Vec<f64>> = rows.iter().filter(|r| r.k == k).map(|r| vec![r.mse_theta]).collect();
        if se.is_empty() {
            return Err(Error::Degenerate(format!("no successful fits for K = {k}")));
        }
        let (mean, (lo, hi)) = bootstrap_mean_band(&se, band);
        out.push(MseRow { k, mean_se: mean[0], se_lo: lo[0], se_hi: hi[0], count: se.len() });
    }
    Ok(out)
}

pub fn write_csv_rows<W: std::io::Write, S: Serialize>(rows: &[S], header: &[&str], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(header)?;
    }
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
