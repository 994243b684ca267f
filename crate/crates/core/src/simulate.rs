//! Random models and replicated simulation experiments.

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contamination::{contaminate, ContaminationKind, ContaminationSpec};
use crate::error::{Error, Result};
use crate::estimator::{beta_plugin, choose_k, inflate_diagonal, lambda_path, robust_sm, EstimatorConfig, EstimatorResult, Penalty};
use crate::evaluation::{squared_error, support_metrics};
use crate::gmom::{gmom_moments, GmomConfig, RemainderPolicy};
use crate::linalg::{norm_inf, Matrix};
use crate::models::{sample_gaussian, sample_sqr_gibbs, Family, GibbsConfig, PairwiseModel};
use crate::scalar::Scalar;

/// Knobs of [`random_model_with`] beyond the graph itself.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelOptions {
    /// Exponent `e` of the weights `h_j(x) = x_j^e` (square-root family only).
    pub weight_exponent: f64,
    /// Square-root family: `Θ_ii = Σ_{j≠i} |Θ_ij| + margin`.
    pub sqr_margin: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { weight_exponent: 1.5, sqr_margin: 1.0 }
    }
}

/// Random model on a uniformly drawn graph with exactly `kappa` edges.
pub fn random_model<T: Scalar, R: Rng + ?Sized>(m: usize, kappa: usize, family: Family, rng: &mut R) -> Result<PairwiseModel<T>> {
    random_model_with(m, kappa, family, ModelOptions::default(), rng)
}

/// As [`random_model`]: edge weights `±Unif(0.5, 1)`, `η_j` uniform on
/// `{0, 0.5, −0.5}`, and a diagonal that makes the model valid.
pub fn random_model_with<T: Scalar, R: Rng + ?Sized>(
    m: usize,
    kappa: usize,
    family: Family,
    opts: ModelOptions,
    rng: &mut R,
) -> Result<PairwiseModel<T>> {
    if m == 0 {
        return Err(Error::input("model dimension must be positive"));
    }
    let pairs = m * (m - 1) / 2;
    if kappa > pairs {
        return Err(Error::input(format!("{kappa} edges requested but only {pairs} pairs exist")));
    }
    let mut theta = Matrix::<f64>::zeros(m, m);
    let mut chosen = sample_indices(rng, pairs, kappa).into_vec();
    chosen.sort_unstable();
    for k in chosen {
        let (i, j) = pair_from_index(m, k);
        let mag = rng.random_range(0.5..=1.0);
        let w = if rng.random_bool(0.5) { mag } else { -mag };
        theta[(i, j)] = w;
        theta[(j, i)] = w;
    }
    let eta: Vec<f64> = (0..m).map(|_| [0.0, 0.5, -0.5][rng.random_range(0..3)]).collect();
    match family {
        Family::Gaussian => {
            let shift = 1.0 + (0.1 - theta.min_eigenvalue()).max(0.0);
            for i in 0..m {
                theta[(i, i)] = shift;
            }
        }
        Family::SquareRoot => {
            for i in 0..m {
                theta[(i, i)] = (0..m).filter(|&j| j != i).map(|j| theta[(i, j)].abs()).sum::<f64>() + opts.sqr_margin;
            }
        }
    }
    let conv = |v: &f64| T::of(*v);
    let theta_t = Matrix::from_row_major(m, m, theta.as_slice().iter().map(conv).collect());
    let eta_t = eta.iter().map(conv).collect();
    let exponent = if family == Family::SquareRoot { opts.weight_exponent } else { 0.0 };
    PairwiseModel::new(family, theta_t, eta_t, T::of(exponent))
}

/// The `k`-th pair `(i, j)`, `i < j`, in row-major upper-triangle order.
pub fn pair_from_index(m: usize, mut k: usize) -> (usize, usize) {
    for i in 0..m {
        let row = m - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    panic!("pair index out of range")
}

/// Draws `n` observations from `model` with the family's sampler.
pub fn sample_model<T: Scalar, R: Rng + ?Sized>(model: &PairwiseModel<T>, n: usize, gibbs: GibbsConfig, rng: &mut R) -> Result<Matrix<T>> {
    match model.family() {
        Family::Gaussian => sample_gaussian(model, n, rng),
        Family::SquareRoot => sample_sqr_gibbs(model, n, gibbs, rng),
    }
}

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPolicy {
    Fixed(usize),
    /// `round(4 ε n)`, clipped to `[1, n]`.
    Heuristic { epsilon: f64 },
    Sweep(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPolicy {
    Zero,
    Fixed(f64),
    /// Largest admissible multiplier with `Γ₀` plugged in from the
    /// uncontaminated sample of each replication.
    TheoremBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaGrid {
    Explicit(Vec<f64>),
    /// `count` values log-spaced from `‖ĝ‖∞` down to `min_ratio · ‖ĝ‖∞`,
    /// computed per fit.
    LogSpaced { count: usize, min_ratio: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContaminationConfig {
    pub kind: ContaminationKind,
    pub epsilon: f64,
    #[serde(default = "one")]
    pub intensity: f64,
    #[serde(default)]
    pub cross_edges: Option<usize>,
}

fn one() -> f64 {
    1.0
}
fn default_exponent() -> f64 {
    1.5
}
fn default_burn_in() -> usize {
    1000
}
fn default_margin() -> f64 {
    1.0
}

/// A replicated simulation, read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub schema_version: u32,
    pub m: usize,
    pub n: usize,
    /// Edge count; when absent, `round(n m / 200)`, which keeps `κ/n = ½` at
    /// `m = 100` and scales proportionally with `m`, capped at the complete graph.
    #[serde(default)]
    pub kappa: Option<usize>,
    pub family: Family,
    #[serde(default = "default_exponent")]
    pub weight_exponent: f64,
    #[serde(default = "default_margin")]
    pub sqr_margin: f64,
    #[serde(default)]
    pub contamination: Option<ContaminationConfig>,
    pub k_policy: KPolicy,
    #[serde(default = "BetaPolicy::zero")]
    pub beta_policy: BetaPolicy,
    pub lambda_grid: LambdaGrid,
    #[serde(default = "off_diagonal")]
    pub penalty: Penalty,
    #[serde(default)]
    pub remainder: RemainderPolicy,
    pub replications: usize,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "one_usize")]
    pub thin: usize,
    /// Fill `wall_ms`; off by default so that results are reproducible byte for byte.
    #[serde(default)]
    pub record_wall_time: bool,
}

fn off_diagonal() -> Penalty {
    Penalty::OffDiagonal
}

fn one_usize() -> usize {
    1
}

impl BetaPolicy {
    fn zero() -> Self {
        BetaPolicy::Zero
    }
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn kappa(&self) -> usize {
        let pairs = self.m * self.m.saturating_sub(1) / 2;
        self.kappa.unwrap_or_else(|| (((self.n * self.m) as f64 / 200.0).round() as usize).min(pairs))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {}, expected {SCHEMA_VERSION}", self.schema_version));
        }
        if self.m == 0 || self.n == 0 {
            return bad("m and n must be positive".into());
        }
        if self.kappa() > self.m * (self.m - 1) / 2 {
            return bad(format!("kappa = {} exceeds m(m-1)/2", self.kappa()));
        }
        if self.replications == 0 {
            return bad("replications must be positive".into());
        }
        for k in self.k_values() {
            if k == 0 || k > self.n {
                return bad(format!("block count {k} outside [1, n]"));
            }
        }
        match &self.k_policy {
            KPolicy::Sweep(ks) if ks.is_empty() => return bad("K sweep is empty".into()),
            KPolicy::Heuristic { epsilon } if !(0.0..=1.0).contains(epsilon) => {
                return bad("heuristic epsilon must lie in [0, 1]".into())
            }
            _ => {}
        }
        match &self.lambda_grid {
            LambdaGrid::Explicit(v) if v.is_empty() => return bad("lambda grid is empty".into()),
            LambdaGrid::Explicit(v) if v.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) => {
                return bad("lambda values must be finite and nonnegative".into())
            }
            LambdaGrid::LogSpaced { count, min_ratio } if *count == 0 || !(*min_ratio > 0.0 && *min_ratio <= 1.0) => {
                return bad("log-spaced grid needs count ≥ 1 and min_ratio in (0, 1]".into())
            }
            _ => {}
        }
        match self.beta_policy {
            BetaPolicy::Fixed(b) if !(b >= 0.0) => return bad("beta must be nonnegative".into()),
            _ => {}
        }
        if !(self.weight_exponent >= 0.0) || !(self.sqr_margin > 0.0) {
            return bad("weight_exponent must be ≥ 0 and sqr_margin > 0".into());
        }
        if let Some(c) = &self.contamination {
            self.contamination_spec(c, 0).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Block counts evaluated in every replication, in config order.
    pub fn k_values(&self) -> Vec<usize> {
        match &self.k_policy {
            KPolicy::Fixed(k) => vec![*k],
            KPolicy::Heuristic { epsilon } => vec![choose_k(*epsilon, self.n)],
            KPolicy::Sweep(ks) => ks.clone(),
        }
    }

    fn contamination_spec(&self, c: &ContaminationConfig, seed: u64) -> ContaminationSpec {
        ContaminationSpec { kind: c.kind, epsilon: c.epsilon, intensity: c.intensity, seed, cross_edges: c.cross_edges }
    }

    fn model_options(&self) -> ModelOptions {
        ModelOptions { weight_exponent: self.weight_exponent, sqr_margin: self.sqr_margin }
    }
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRow {
    pub rep: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub beta: f64,
    pub lambda: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub mse_theta: f64,
    pub n_corrupted: usize,
    pub wall_ms: Option<f64>,
}

pub const RESULT_COLUMNS: [&str; 9] = ["rep", "K", "beta", "lambda", "tpr", "fpr", "mse_theta", "n_corrupted", "wall_ms"];

#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub rep: usize,
    pub k: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    /// `(rep, row index)` of every corrupted observation.
    pub corrupted: Vec<(usize, usize)>,
    pub failures: Vec<Failure>,
}

/// Seed of replication `rep`: a distinct ChaCha stream under the root seed.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Runs every replication, in parallel, and collects results in replication order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    spec.validate()?;
    let per_rep: Vec<RepOutcome> = (0..spec.replications).into_par_iter().map(|rep| run_replication(spec, rep)).collect();
    let mut out = ExperimentOutput::default();
    for r in per_rep {
        out.rows.extend(r.rows);
        out.corrupted.extend(r.corrupted.into_iter().map(|i| (r.rep, i)));
        out.failures.extend(r.failures);
    }
    Ok(out)
}

struct RepOutcome {
    rep: usize,
    rows: Vec<ResultRow>,
    corrupted: Vec<usize>,
    failures: Vec<Failure>,
}

/// The data of one replication: true model, clean and observed samples.
pub struct ReplicationData {
    pub model: PairwiseModel<f64>,
    pub clean: Matrix<f64>,
    pub observed: Matrix<f64>,
    pub corrupted_rows: Vec<usize>,
}

pub fn replication_data(spec: &ExperimentSpec, rep: usize) -> Result<ReplicationData> {
    let mut rng = replication_rng(spec.seed, rep);
    let model = random_model_with::<f64, _>(spec.m, spec.kappa(), spec.family, spec.model_options(), &mut rng)?;
    let gibbs = GibbsConfig { burn_in: spec.burn_in, thin: spec.thin };
    let clean = sample_model(&model, spec.n, gibbs, &mut rng)?;
    let contamination_seed: u64 = rng.random();
    let (observed, corrupted_rows) = match &spec.contamination {
        Some(c) => {
            let cs = spec.contamination_spec(c, contamination_seed);
            let res = contaminate(&clean, &cs, spec.family.domain())?;
            (res.data, res.corrupted_rows)
        }
        None => (clean.clone(), Vec::new()),
    };
    Ok(ReplicationData { model, clean, observed, corrupted_rows })
}

fn run_replication(spec: &ExperimentSpec, rep: usize) -> RepOutcome {
    let mut outcome = RepOutcome { rep, rows: Vec::new(), corrupted: Vec::new(), failures: Vec::new() };
    let data = match replication_data(spec, rep) {
        Ok(d) => d,
        Err(e) => {
            outcome.failures.push(Failure { rep, k: None, message: e.to_string() });
            return outcome;
        }
    };
    outcome.corrupted = data.corrupted_rows.clone();
    for k in spec.k_values() {
        let start = Instant::now();
        match fit_path(spec, &data, k) {
            Ok((beta, path)) => {
                let wall = spec.record_wall_time.then(|| start.elapsed().as_secs_f64() * 1e3);
                for (lambda, res) in path {
                    match score(&data.model, &res) {
                        Ok((tpr, fpr, mse)) => outcome.rows.push(ResultRow {
                            rep,
                            k,
                            beta,
                            lambda,
                            tpr,
                            fpr,
                            mse_theta: mse,
                            n_corrupted: data.corrupted_rows.len(),
                            wall_ms: wall,
                        }),
                        Err(e) => outcome.failures.push(Failure { rep, k: Some(k), message: e.to_string() }),
                    }
                }
            }
            Err(e) => outcome.failures.push(Failure { rep, k: Some(k), message: e.to_string() }),
        }
    }
    outcome
}

fn score(model: &PairwiseModel<f64>, res: &EstimatorResult<f64>) -> Result<(f64, f64, f64)> {
    let (theta_hat, eta_hat) = res.unflatten()?;
    let (tpr, fpr) = support_metrics(&theta_hat, model.theta())?;
    let mse = squared_error(&theta_hat, &eta_hat, model.theta(), model.eta());
    Ok((tpr, fpr, mse))
}

/// Robust moments, diagonal multiplier and the full λ path for one `K`.
pub fn fit_path(spec: &ExperimentSpec, data: &ReplicationData, k: usize) -> Result<(f64, Vec<(f64, EstimatorResult<f64>)>)> {
    let cfg = GmomConfig::new(k).with_remainder(spec.remainder);
    let stats = gmom_moments(&data.model, &data.observed, &cfg)?;
    let beta = match spec.beta_policy {
        BetaPolicy::Zero => 0.0,
        BetaPolicy::Fixed(b) => b,
        BetaPolicy::TheoremBound => beta_plugin(&data.model, &data.clean, k)?,
    };
    let lambdas = lambda_values(&spec.lambda_grid, &stats.g);
    let est = EstimatorConfig { k, beta, penalty: spec.penalty, ..Default::default() };
    let positive: Vec<f64> = lambdas.iter().copied().filter(|l| *l > 0.0).collect();
    let mut path: Vec<(f64, EstimatorResult<f64>)> = Vec::with_capacity(lambdas.len());
    if !positive.is_empty() {
        path.extend(positive.iter().copied().zip(lambda_path(&stats.gamma, &stats.g, &est, &positive)?));
    }
    if lambdas.contains(&0.0) {
        path.push((0.0, robust_sm(&inflate_diagonal(&stats.gamma, beta), &stats.g)?));
    }
    Ok((beta, path))
}

/// Strictly decreasing λ values for a fit with linear term `g`.
pub fn lambda_values(grid: &LambdaGrid, g: &[f64]) -> Vec<f64> {
    let mut v = match grid {
        LambdaGrid::Explicit(v) => v.clone(),
        LambdaGrid::LogSpaced { count, min_ratio } => {
            let top = norm_inf(g);
            if *count == 1 {
                vec![top]
            } else {
                (0..*count)
                    .map(|i| top * min_ratio.powf(i as f64 / (*count - 1) as f64))
                    .collect()
            }
        }
    };
    v.sort_by(|a, b| b.partial_cmp(a).unwrap());
    v.dedup();
    v
}

/// Writes the results table; `wall_ms` is left empty when not recorded.
pub fn write_results_csv<W: std::io::Write>(rows: &[ResultRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row)?;
    }
    if rows.is_empty() {
        wtr.write_record(RESULT_COLUMNS)?;
    }
    wtr.flush()?;
    Ok(())
}
