//! The `rsm` command-line tool.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage or
//! configuration errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::estimator::{choose_k, EstimatorConfig, Penalty};
use crate::evaluation::{mse_table, roc_table, unit_grid, write_csv_rows, BandConfig, MSE_COLUMNS, ROC_COLUMNS};
use crate::gmom::{concentration_params, concentration_radius, RemainderPolicy};
use crate::ingest::{edge_list, fit, load_coordinates, load_csv, write_edges_csv, FitConfig, LoadOptions, MissingPolicy};
use crate::models::Family;
use crate::simulate::{run_experiment, write_results_csv, ExperimentSpec, KPolicy, LambdaGrid, RESULT_COLUMNS};

#[derive(Debug, Parser)]
#[command(name = "rsm", version, about = "Robust score matching for pairwise graphical models")]
pub struct Cli {
    /// Worker threads for replications (falls back to RSM_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation experiment and write its results table.
    Simulate(ConfigArgs),
    /// Fit a graph to a CSV dataset.
    Fit(FitArgs),
    /// Print block count and concentration constants as JSON.
    Constants(ConstantsArgs),
    /// Averaged ROC curves per block count.
    Roc(RocArgs),
    /// Squared error of the unpenalized estimator versus block count.
    MseK(MseArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's output path.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PenaltyArg {
    All,
    OffDiagonal,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub data: PathBuf,
    /// `gaussian` or `sqrt`.
    #[arg(long)]
    pub family: String,
    #[arg(long, conflicts_with = "target_edges")]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub target_edges: Option<usize>,
    /// Block count; chosen from --epsilon when absent.
    #[arg(long = "K", alias = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.5)]
    pub weight_exponent: f64,
    /// `off-diagonal` leaves `Θ_ii` and `η` unpenalized, which keeps the edge
    /// count close to monotone in λ.
    #[arg(long, value_enum, default_value_t = PenaltyArg::OffDiagonal)]
    pub penalty: PenaltyArg,
    /// Drop rows with missing values instead of failing.
    #[arg(long)]
    pub drop_missing: bool,
    /// Replace exact zeros by this value on the nonnegative orthant.
    #[arg(long)]
    pub zero_floor: Option<f64>,
    /// CSV with columns name,lat,lon.
    #[arg(long)]
    pub coords: Option<PathBuf>,
    /// Directory for estimate.json, edges.csv and manifest.json.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConstantsArgs {
    #[arg(long)]
    pub delta: f64,
    #[arg(long)]
    pub tau: f64,
    #[arg(long, requires = "trace_sigma")]
    pub n: Option<usize>,
    #[arg(long, requires = "n")]
    pub trace_sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BandArgs {
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
}

#[derive(Debug, Args)]
pub struct RocArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 101)]
    pub grid_points: usize,
    #[command(flatten)]
    pub band: BandArgs,
}

#[derive(Debug, Args)]
pub struct MseArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Comma-separated block counts; defaults to the config's K policy.
    #[arg(long, value_delimiter = ',')]
    pub k_grid: Option<Vec<usize>>,
    #[command(flatten)]
    pub band: BandArgs,
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl std::fmt::Display) -> Self {
        Self { code: 2, message: msg.to_string() }
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        Self { code: 1, message: msg.to_string() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Self::usage(e),
            _ => Self::runtime(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Provenance of a run, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: Option<String>,
    pub seed: Option<u64>,
    pub version: String,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub outputs: Vec<String>,
    pub failures: usize,
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Writes via a temporary sibling and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let io = |e: std::io::Error| CliError::runtime(format!("{}: {e}", path.display()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Checks that a CSV has exactly `columns` as header and rectangular records.
pub fn validate_csv(bytes: &[u8], columns: &[&str]) -> CliResult<()> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().map_err(CliError::runtime)?.clone();
    if header.iter().ne(columns.iter().copied()) {
        return Err(CliError::runtime(format!("output header {header:?} does not match {columns:?}")));
    }
    for rec in rdr.records() {
        let rec = rec.map_err(CliError::runtime)?;
        if rec.len() != columns.len() {
            return Err(CliError::runtime("output row has the wrong number of fields"));
        }
    }
    Ok(())
}

fn manifest_path(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

fn read_config(path: &Path) -> CliResult<(ExperimentSpec, String)> {
    let bytes = fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8(bytes.clone()).map_err(|_| CliError::usage("config is not UTF-8"))?;
    let spec = ExperimentSpec::from_json(&text)?;
    Ok((spec, hex::encode(Sha256::digest(&bytes))))
}

fn output_path(args: &ConfigArgs, spec: &ExperimentSpec, default: &str) -> PathBuf {
    args.output
        .clone()
        .or_else(|| spec.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(default))
}

fn finish_manifest(command: &str, hash: Option<String>, seed: Option<u64>, started: f64, outputs: &[&Path], failures: usize, path: &Path) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.into(),
        config_sha256: hash,
        seed,
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix: started,
        finished_unix: unix_now(),
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
        failures,
    };
    let json = serde_json::to_vec_pretty(&manifest).map_err(CliError::runtime)?;
    write_atomic(path, &json)
}

fn cmd_simulate(args: &ConfigArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = unix_now();
    let (spec, hash) = read_config(&args.config)?;
    let results = run_experiment(&spec)?;
    for f in &results.failures {
        eprintln!("replication {} (K = {:?}) failed: {}", f.rep, f.k, f.message);
    }
    let path = output_path(args, &spec, "results.csv");
    let bytes = csv_bytes(|b| write_results_csv(&results.rows, b))?;
    validate_csv(&bytes, &RESULT_COLUMNS)?;
    write_atomic(&path, &bytes)?;

    let mut corrupted_path = path.as_os_str().to_owned();
    corrupted_path.push(".corrupted.csv");
    let corrupted_path = PathBuf::from(corrupted_path);
    let mut buf = String::from("rep,row\n");
    for (rep, row) in &results.corrupted {
        buf.push_str(&format!("{rep},{row}\n"));
    }
    write_atomic(&corrupted_path, buf.as_bytes())?;

    let mpath = manifest_path(&path);
    finish_manifest("simulate", Some(hash), Some(spec.seed), started, &[&path, &corrupted_path], results.failures.len(), &mpath)?;
    writeln!(out, "{} rows written to {} ({} failures)", results.rows.len(), path.display(), results.failures.len())
        .map_err(CliError::runtime)?;
    if results.rows.is_empty() && !results.failures.is_empty() {
        return Err(CliError::runtime("every replication failed"));
    }
    Ok(())
}

fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = unix_now();
    let family: Family = args.family.parse().map_err(CliError::usage)?;
    if !args.data.is_file() {
        return Err(CliError::usage(format!("{}: no such file", args.data.display())));
    }
    let opts = LoadOptions {
        missing: if args.drop_missing { MissingPolicy::DropRow } else { MissingPolicy::Fail },
        zero_floor: args.zero_floor,
    };
    let mut dataset = load_csv(&args.data, family.domain(), opts)?;
    if let Some(c) = &args.coords {
        load_coordinates(&mut dataset, c)?;
    }
    let k = match (args.k, args.epsilon) {
        (Some(k), _) => k,
        (None, Some(eps)) if (0.0..=1.0).contains(&eps) => choose_k(eps, dataset.n()),
        (None, Some(eps)) => return Err(CliError::usage(format!("--epsilon must lie in [0, 1], got {eps}"))),
        (None, None) => 1,
    };
    if k == 0 || k > dataset.n() {
        return Err(CliError::usage(format!("--K must lie in [1, {}], got {k}", dataset.n())));
    }
    let estimator = EstimatorConfig {
        k,
        beta: args.beta,
        lambda: args.lambda.unwrap_or(0.0),
        penalty: match args.penalty {
            PenaltyArg::All => Penalty::All,
            PenaltyArg::OffDiagonal => Penalty::OffDiagonal,
        },
        ..Default::default()
    };
    estimator.validate()?;
    let cfg = FitConfig {
        family,
        weight_exponent: args.weight_exponent,
        estimator,
        remainder: RemainderPolicy::FoldIntoLast,
        target_edges: args.target_edges,
    };
    let result = fit(&dataset, &cfg)?;
    let edges = edge_list(&dataset, &result);

    let estimate_path = args.out_dir.join("estimate.json");
    let edges_path = args.out_dir.join("edges.csv");
    let (theta, eta) = result.estimate.unflatten()?;
    let json = serde_json::json!({
        "family": family,
        "columns": dataset.columns,
        "K": result.k,
        "beta": result.beta,
        "lambda": result.lambda,
        "n_edges": result.n_edges,
        "theta": result.estimate.theta_hat,
        "theta_matrix": theta,
        "eta": eta,
        "support": result.edge_index.iter().map(|&(i, j, _)| [i, j]).collect::<Vec<_>>(),
        "objective": result.estimate.objective,
        "sweeps": result.estimate.sweeps,
        "kkt_residual": result.estimate.kkt_residual,
        "gamma_condition": if result.estimate.gamma_condition.is_finite() { Some(result.estimate.gamma_condition) } else { None },
    });
    write_atomic(&estimate_path, &serde_json::to_vec_pretty(&json).map_err(CliError::runtime)?)?;
    let with_coords = dataset.coordinates.is_some();
    let bytes = csv_bytes(|b| write_edges_csv(&edges, with_coords, b))?;
    let mut cols = vec!["node_a", "node_b", "weight"];
    if with_coords {
        cols.extend(["lat_a", "lon_a", "lat_b", "lon_b"]);
    }
    validate_csv(&bytes, &cols)?;
    write_atomic(&edges_path, &bytes)?;
    finish_manifest("fit", None, None, started, &[&estimate_path, &edges_path], 0, &args.out_dir.join("manifest.json"))?;
    writeln!(out, "K = {}, lambda = {}, {} edges", result.k, result.lambda, result.n_edges).map_err(CliError::runtime)?;
    Ok(())
}

fn cmd_constants(args: &ConstantsArgs, out: &mut dyn Write) -> CliResult<()> {
    let params = concentration_params(args.delta, args.tau).map_err(CliError::usage)?;
    let mut json = serde_json::to_value(params).map_err(CliError::runtime)?;
    if let (Some(n), Some(tr)) = (args.n, args.trace_sigma) {
        let radius = concentration_radius(&params, n, tr).map_err(CliError::usage)?;
        json["radius"] = serde_json::json!(radius);
    }
    writeln!(out, "{}", serde_json::to_string_pretty(&json).map_err(CliError::runtime)?).map_err(CliError::runtime)
}

fn band(args: &BandArgs, seed: u64) -> CliResult<BandConfig> {
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(CliError::usage("--level must lie in (0, 1)"));
    }
    Ok(BandConfig { level: args.level, resamples: args.resamples, seed })
}

fn cmd_roc(args: &RocArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = unix_now();
    let (spec, hash) = read_config(&args.config.config)?;
    if args.grid_points < 2 {
        return Err(CliError::usage("--grid-points must be at least 2"));
    }
    let band = band(&args.band, spec.seed)?;
    let results = run_experiment(&spec)?;
    let table = roc_table(&results.rows, &unit_grid(args.grid_points), band)?;
    let path = output_path(&args.config, &spec, "roc.csv");
    let bytes = csv_bytes(|b| write_csv_rows(&table, &ROC_COLUMNS, b))?;
    validate_csv(&bytes, &ROC_COLUMNS)?;
    write_atomic(&path, &bytes)?;
    finish_manifest("roc", Some(hash), Some(spec.seed), started, &[&path], results.failures.len(), &manifest_path(&path))?;
    writeln!(out, "ROC table written to {}", path.display()).map_err(CliError::runtime)
}

fn cmd_mse_k(args: &MseArgs, out: &mut dyn Write) -> CliResult<()> {
    let started = unix_now();
    let (mut spec, hash) = read_config(&args.config.config)?;
    let k_grid = match &args.k_grid {
        Some(g) => g.clone(),
        None => spec.k_values(),
    };
    if k_grid.is_empty() || k_grid.iter().any(|&k| k == 0 || k > spec.n) {
        return Err(CliError::usage(format!("K grid must be nonempty with values in [1, {}]", spec.n)));
    }
    let band = band(&args.band, spec.seed)?;
    spec.k_policy = KPolicy::Sweep(k_grid.clone());
    spec.lambda_grid = LambdaGrid::Explicit(vec![0.0]);
    let results = run_experiment(&spec)?;
    let table = mse_table(&results.rows, &k_grid, band)?;
    let path = output_path(&args.config, &spec, "mse_k.csv");
    let bytes = csv_bytes(|b| write_csv_rows(&table, &MSE_COLUMNS, b))?;
    validate_csv(&bytes, &MSE_COLUMNS)?;
    write_atomic(&path, &bytes)?;
    finish_manifest("mse-k", Some(hash), Some(spec.seed), started, &[&path], results.failures.len(), &manifest_path(&path))?;
    writeln!(out, "MSE table written to {}", path.display()).map_err(CliError::runtime)
}

fn thread_count(flag: Option<usize>) -> CliResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("RSM_THREADS") {
        Ok(v) if !v.trim().is_empty() => {
            v.trim().parse().map(Some).map_err(|_| CliError::usage(format!("RSM_THREADS={v:?} is not a count")))
        }
        _ => Ok(None),
    }
}

/// Runs a parsed command, writing user-facing output to `out`.
pub fn execute(cli: &Cli, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let run = |out: &mut (dyn Write + Send)| match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Constants(a) => cmd_constants(a, out),
        Command::Roc(a) => cmd_roc(a, out),
        Command::MseK(a) => cmd_mse_k(a, out),
    };
    match thread_count(cli.threads)? {
        Some(0) => Err(CliError::usage("thread count must be positive")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(CliError::runtime)?;
            pool.install(|| run(out))
        }
        None => run(out),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
