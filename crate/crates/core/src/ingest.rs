//! Tabular data ingestion and graph fitting on real datasets.

use std::collections::HashMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimator::{inflate_diagonal, regularized_robust_sm, robust_sm, EstimatorConfig, EstimatorResult};
use crate::gmom::{gmom_moments, GmomConfig, RemainderPolicy};
use crate::linalg::{norm_inf, Matrix};
use crate::models::{DomainSpec, Family, PairwiseModel, Support};
use crate::scorestats::ScoreStats;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MissingPolicy {
    /// Skip rows with a missing or non-finite value.
    DropRow,
    #[default]
    Fail,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LoadOptions {
    pub missing: MissingPolicy,
    /// Replacement for exact zeros on the nonnegative orthant; zeros are an
    /// error when unset.
    pub zero_floor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub x: Matrix<f64>,
    pub domain: DomainSpec,
    /// `(lat, lon)` per column, when known.
    pub coordinates: Option<Vec<(f64, f64)>>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn m(&self) -> usize {
        self.x.cols()
    }
}

fn is_missing(field: &str) -> bool {
    matches!(field.to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

/// Reads a CSV with a header row of variable names and one observation per line.
pub fn load_csv(path: impl AsRef<Path>, support: Support, opts: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let m = columns.len();
    if m == 0 {
        return Err(Error::input(format!("{}: no columns", path.display())));
    }
    let mut data = Vec::new();
    let mut rows = 0;
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != m {
            return Err(Error::input(format!("row {line}: {} fields, expected {m}", rec.len())));
        }
        let mut vals = Vec::with_capacity(m);
        let mut missing = false;
        for (col, field) in rec.iter().enumerate() {
            if is_missing(field) {
                missing = true;
                break;
            }
            let v: f64 = field
                .parse()
                .map_err(|_| Error::input(format!("row {line}, column {col}: cannot parse {field:?}")))?;
            if !v.is_finite() {
                missing = true;
                break;
            }
            vals.push(v);
        }
        if missing {
            match opts.missing {
                MissingPolicy::DropRow => continue,
                MissingPolicy::Fail => return Err(Error::input(format!("row {line} has a missing or non-finite value"))),
            }
        }
        if support == Support::NonNegOrthant {
            for (col, v) in vals.iter_mut().enumerate() {
                if *v < 0.0 || (*v == 0.0 && opts.zero_floor.is_none()) {
                    return Err(Error::Domain { row: line, col, value: *v });
                }
                if *v == 0.0 {
                    *v = opts.zero_floor.unwrap();
                }
            }
        }
        data.extend(vals);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::input(format!("{}: no usable rows", path.display())));
    }
    Ok(Dataset { columns, x: Matrix::from_row_major(rows, m, data), domain: DomainSpec::new(support, m), coordinates: None })
}

/// Writes a dataset back out; values use the shortest exact representation.
pub fn write_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(&dataset.columns)?;
    for i in 0..dataset.n() {
        wtr.write_record(dataset.x.row(i).iter().map(|v| v.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

/// Attaches coordinates from a CSV with columns `name,lat,lon`.
pub fn load_coordinates(dataset: &mut Dataset, path: impl AsRef<Path>) -> Result<()> {
    #[derive(serde::Deserialize)]
    struct Row {
        name: String,
        lat: f64,
        lon: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut by_name = HashMap::new();
    for rec in rdr.deserialize() {
        let r: Row = rec?;
        by_name.insert(r.name, (r.lat, r.lon));
    }
    let coords = dataset
        .columns
        .iter()
        .map(|c| by_name.get(c).copied().ok_or_else(|| Error::input(format!("no coordinates for column {c:?}"))))
        .collect::<Result<Vec<_>>>()?;
    dataset.coordinates = Some(coords);
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Edge {
    pub node_a: String,
    pub node_b: String,
    pub weight: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lat_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lon_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lat_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lon_b: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitConfig {
    pub family: Family,
    pub weight_exponent: f64,
    pub estimator: EstimatorConfig<f64>,
    pub remainder: RemainderPolicy,
    pub target_edges: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitResult {
    pub k: usize,
    pub beta: f64,
    pub lambda: f64,
    pub n_edges: usize,
    pub estimate: EstimatorResult<f64>,
    /// `(i, j, Θ̂_ij)` for every selected pair `i < j`.
    pub edge_index: Vec<(usize, usize, f64)>,
}

/// Robust moments of a dataset under `family`.
pub fn dataset_moments(dataset: &Dataset, family: Family, weight_exponent: f64, k: usize, remainder: RemainderPolicy) -> Result<ScoreStats<f64>> {
    if family.domain() != dataset.domain.support {
        return Err(Error::Config(format!("{family:?} model does not match the dataset's support")));
    }
    let m = dataset.m();
    let exponent = if family == Family::SquareRoot { weight_exponent } else { 0.0 };
    let template = PairwiseModel::new(family, Matrix::identity(m), vec![0.0; m], exponent)?;
    gmom_moments(&template, &dataset.x, &GmomConfig::new(k).with_remainder(remainder))
}

fn solve(stats: &ScoreStats<f64>, cfg: &EstimatorConfig<f64>) -> Result<EstimatorResult<f64>> {
    if cfg.lambda == 0.0 {
        robust_sm(&inflate_diagonal(&stats.gamma, cfg.beta), &stats.g)
    } else {
        regularized_robust_sm(&stats.gamma, &stats.g, cfg)
    }
}

fn finish(cfg: &EstimatorConfig<f64>, lambda: f64, estimate: EstimatorResult<f64>) -> Result<FitResult> {
    let edge_index = estimate.edges()?;
    Ok(FitResult { k: cfg.k, beta: cfg.beta, lambda, n_edges: edge_index.len(), estimate, edge_index })
}

/// Fits a graph, tuning λ by bisection when a target edge count is given.
pub fn fit(dataset: &Dataset, cfg: &FitConfig) -> Result<FitResult> {
    cfg.estimator.validate()?;
    let stats = dataset_moments(dataset, cfg.family, cfg.weight_exponent, cfg.estimator.k, cfg.remainder)?;
    let Some(target) = cfg.target_edges else {
        let est = solve(&stats, &cfg.estimator)?;
        return finish(&cfg.estimator, cfg.estimator.lambda, est);
    };
    let with = |lambda: f64| EstimatorConfig { lambda, ..cfg.estimator };
    let edges_at = |lambda: f64| -> Result<(usize, EstimatorResult<f64>)> {
        let est = solve(&stats, &with(lambda))?;
        Ok((est.edges()?.len(), est))
    };

    // smallest probed λ giving no edges
    let mut hi = norm_inf(&stats.g).max(f64::MIN_POSITIVE);
    let (mut e_hi, mut est_hi) = edges_at(hi)?;
    let mut doublings = 0;
    while e_hi > 0 {
        hi *= 2.0;
        (e_hi, est_hi) = edges_at(hi)?;
        doublings += 1;
        if doublings > 60 {
            return Err(Error::Degenerate("no λ yields an empty graph".into()));
        }
    }
    if target == 0 {
        return finish(&cfg.estimator, hi, est_hi);
    }
    let mut lo = hi * 1e-8;
    let (e_lo, est_lo) = edges_at(lo)?;
    if e_lo + 1 < target {
        return Err(Error::TargetUnreachable { target, achieved: e_lo });
    }
    let mut best = (e_lo.abs_diff(target), lo, est_lo);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        let (e, est) = edges_at(mid)?;
        let gap = e.abs_diff(target);
        if gap < best.0 || (gap == best.0 && mid > best.1) {
            best = (gap, mid, est);
        }
        if gap == 0 {
            break;
        }
        if e > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (gap, lambda, est) = best;
    if gap > 1 {
        let achieved = est.edges()?.len();
        return Err(Error::TargetUnreachable { target, achieved });
    }
    finish(&cfg.estimator, lambda, est)
}

/// Named edges, with coordinates when the dataset has them.
pub fn edge_list(dataset: &Dataset, fit: &FitResult) -> Vec<Edge> {
    fit.edge_index
        .iter()
        .map(|&(i, j, w)| {
            let c = dataset.coordinates.as_ref();
            Edge {
                node_a: dataset.columns[i].clone(),
                node_b: dataset.columns[j].clone(),
                weight: w,
                lat_a: c.map(|c| c[i].0),
                lon_a: c.map(|c| c[i].1),
                lat_b: c.map(|c| c[j].0),
                lon_b: c.map(|c| c[j].1),
            }
        })
        .collect()
}

pub fn write_edges_csv<W: std::io::Write>(edges: &[Edge], with_coordinates: bool, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["node_a", "node_b", "weight"];
    if with_coordinates {
        header.extend(["lat_a", "lon_a", "lat_b", "lon_b"]);
    }
    wtr.write_record(&header)?;
    for e in edges {
        let mut rec = vec![e.node_a.clone(), e.node_b.clone(), e.weight.to_string()];
        if with_coordinates {
            for v in [e.lat_a, e.lon_a, e.lat_b, e.lon_b] {
                rec.push(v.map(|x| x.to_string()).unwrap_or_default());
            }
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}
