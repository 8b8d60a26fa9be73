//! Command-line surface for the dkpca library: dataset synthesis, model
//! fitting, spectral reports, bound sweeps, reconstruction, latent
//! traversal, out-of-sample encoding, and a downstream predictor harness.
//!
//! Every command writes its outputs plus a `run_manifest.json` (resolved
//! configuration, its SHA-256, seed, package version, wall time) into the
//! output directory. Exit codes: 0 success, 2 validation error, 3 numerical
//! failure. Partial outputs are removed when a command fails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use dkpca::analysis::{bounds_lemma1, level_variance_report, variance_advantage, BoundsReport};
use dkpca::dataio::{
    gen_synth_complex, gen_synth_gaussian, gen_synth_square, load_csv, write_csv, DataMatrix,
};
use dkpca::downstream::{extract_features, fit_predict, metrics, PredictorSpec, Task};
use dkpca::generative::{
    encode_oos, reconstruct, reconstruction_error, traverse, FittedModel, TraversalBase,
    TraversalSpec,
};
use dkpca::kernels::{kernel_matrix, Kernel};
use dkpca::model::{
    analytic_two_level_linear_general, ArchitectureSpec, DeepState, FitReport, TrainConfig,
};
use dkpca::numerics::sym_eig_desc;
use dkpca::{Error, Result};

#[derive(Parser)]
#[command(name = "dkpca", version, about = "Deep kernel PCA: fit, analyze, generate, predict")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Fit a model from a JSON run configuration.
    Fit(FitArgs),
    /// Per-level explained-variance report for a fitted model.
    Variance(ModelOutArgs),
    /// Approximation-error bound sweep for a two-level model.
    Bounds(BoundsArgs),
    /// Cumulative explained-variance comparison (deep vs shallow) on a dataset.
    Lemma2(Lemma2Args),
    /// Reconstruct data rows through a fitted model and report the MSE.
    Reconstruct(ReconstructArgs),
    /// Latent traversal: sweep one component of one level over a grid.
    Traverse(TraverseArgs),
    /// Out-of-sample encoding of data rows into per-level latents.
    Oos(DataModelOutArgs),
    /// Fit a linear predictor on extracted deep features and report metrics.
    Downstream(DownstreamArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Uniform square in 2-D plus noise dimensions.
    Square,
    /// Four-cluster nonlinear structure.
    Complex,
    /// Correlated Gaussian with a seeded random covariance.
    Gaussian,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    /// Ambient dimension (gaussian kind only).
    #[arg(long)]
    d: Option<usize>,
    /// Noise standard deviation (square kind only).
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// JSON run configuration (data source + architecture + training).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the training seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelOutArgs {
    /// Fitted model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BoundsArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON sweep specification: {"eta2_grid": [...]}.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Lemma2Args {
    /// Data CSV.
    #[arg(long)]
    data: PathBuf,
    /// First CSV row is a header.
    #[arg(long, overrides_with = "no_header")]
    header: bool,
    #[arg(long = "no-header")]
    no_header: bool,
    /// Level-1 kernel bandwidth; omit for a linear kernel.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Second-level regularizer. Omit to use 1.01 * (-1 / smallest kernel
    /// eigenvalue), the regime with a guaranteed advantage.
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, overrides_with = "no_header")]
    header: bool,
    #[arg(long = "no-header")]
    no_header: bool,
    /// Decode from the stored training latents instead of re-encoding
    /// (requires one data row per training sample, in order).
    #[arg(long)]
    stored_latents: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TraverseArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON traversal specification:
    /// {"level": 1, "component": 0, "grid": [...], "base": {"train_index": 0}}
    /// or "base": {"latent": [...]}.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataModelOutArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, overrides_with = "no_header")]
    header: bool,
    #[arg(long = "no-header")]
    no_header: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

#[derive(Args)]
struct DownstreamArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training CSV including the target column.
    #[arg(long)]
    train: PathBuf,
    /// Test CSV including the target column.
    #[arg(long)]
    test: PathBuf,
    /// Target column: a header name (with --header) or a 0-based index.
    #[arg(long)]
    target_col: String,
    #[arg(long, overrides_with = "no_header")]
    header: bool,
    #[arg(long = "no-header")]
    no_header: bool,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    #[arg(long)]
    out: PathBuf,
}

// ---------------------------------------------------------------------------
// Run configuration (fit command)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    data: DataSource,
    architecture: ArchitectureSpec,
    #[serde(default)]
    train: TrainOverrides,
    /// Center the data (subtract the column means) before fitting.
    #[serde(default)]
    center: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataSource {
    #[serde(default)]
    path: Option<String>,
    #[serde(default)]
    header: bool,
    #[serde(default)]
    synth: Option<SynthSource>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SynthSource {
    /// "square", "complex", or "gaussian".
    kind: String,
    n: usize,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default)]
    noise_std: Option<f64>,
    #[serde(default)]
    seed: Option<u64>,
}

/// Optional overrides of the training defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shrink: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    armijo_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// "shallow_warm_start" or "random_orthonormal".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    init: Option<String>,
}

impl TrainOverrides {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = self.max_iters {
            c.max_iters = v;
        }
        if let Some(v) = self.alpha0 {
            c.alpha0 = v;
        }
        if let Some(v) = self.shrink {
            c.shrink = v;
        }
        if let Some(v) = self.armijo_c {
            c.armijo_c = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(init) = &self.init {
            c.init = match init.as_str() {
                "shallow_warm_start" => dkpca::model::InitStrategy::ShallowWarmStart,
                "random_orthonormal" => dkpca::model::InitStrategy::RandomOrthonormal,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown init strategy {other:?}; expected \"shallow_warm_start\" or \"random_orthonormal\""
                    )))
                }
            };
        }
        c.validate()?;
        Ok(c)
    }
}

// ---------------------------------------------------------------------------
// Model document (fit output / input of the analysis commands)
// ---------------------------------------------------------------------------

const MODEL_SCHEMA_VERSION: u32 = 1;

/// JSON-serializable snapshot of a fitted model: architecture, state, and
/// the training data the dual representation needs.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    schema_version: u32,
    arch: ArchitectureSpec,
    /// Per level: N x s_j hidden features, row-major.
    h: Vec<Vec<Vec<f64>>>,
    /// Per level: deep eigenvalues.
    lambda: Vec<Vec<f64>>,
    /// Training data rows.
    train_data: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    fit_report: Option<FitReport>,
}

impl ModelDocument {
    fn from_model(model: &FittedModel, fit_report: Option<FitReport>) -> Self {
        let mat_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        ModelDocument {
            schema_version: MODEL_SCHEMA_VERSION,
            arch: model.arch.clone(),
            h: model.state.h.iter().map(mat_rows).collect(),
            lambda: model
                .state
                .lambda
                .iter()
                .map(|l| l.iter().copied().collect())
                .collect(),
            train_data: mat_rows(model.train_data.matrix()),
            fit_report,
        }
    }

    fn into_model(self) -> Result<FittedModel> {
        if self.schema_version != MODEL_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model schema version {} (expected {MODEL_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let arch = ArchitectureSpec::new(self.arch.levels)?;
        let h = self
            .h
            .iter()
            .map(|rows| to_matrix(rows))
            .collect::<Result<Vec<_>>>()?;
        let lambda = self
            .lambda
            .into_iter()
            .map(DVector::from_vec)
            .collect::<Vec<_>>();
        let state = DeepState { h, lambda };
        let train_data = DataMatrix::from_rows(&self.train_data)?;
        FittedModel::new(arch, state, train_data)
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid("empty matrix in model document"));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid("ragged matrix in model document"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

// ---------------------------------------------------------------------------
// Output directory with cleanup-on-failure and the run manifest
// ---------------------------------------------------------------------------

struct OutDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        let text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::NumericalFailure(format!("JSON serialization failed: {e}")))?;
        std::fs::write(&path, text + "\n")?;
        self.written.push(path);
        Ok(())
    }

    fn write_matrix_csv(&mut self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        let path = self.path(name);
        write_csv(&path, m)?;
        self.written.push(path);
        Ok(())
    }

    fn write_records_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path)
            .map_err(|e| Error::invalid(format!("CSV write failed: {e}")))?;
        w.write_record(header)
            .and_then(|_| rows.iter().try_for_each(|r| w.write_record(r)))
            .and_then(|_| w.flush().map_err(csv::Error::from))
            .map_err(|e| Error::invalid(format!("CSV write failed: {e}")))?;
        self.written.push(path);
        Ok(())
    }

    fn outputs(&self) -> Vec<String> {
        self.written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect()
    }

    fn remove_partial(&self) {
        for p in &self.written {
            let _ = std::fs::remove_file(p);
        }
    }
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    /// Everything that determines the outputs: parsed configuration and
    /// resolved flag values.
    resolved_config: serde_json::Value,
    /// SHA-256 of the canonical JSON encoding of `resolved_config`.
    config_sha256: String,
    seed: Option<u64>,
    package_version: String,
    wall_time_seconds: f64,
    outputs: Vec<String>,
}

fn write_manifest(
    out: &mut OutDir,
    command: &str,
    resolved_config: serde_json::Value,
    seed: Option<u64>,
    started: Instant,
) -> Result<()> {
    let canonical = serde_json::to_string(&resolved_config)
        .map_err(|e| Error::NumericalFailure(format!("JSON serialization failed: {e}")))?;
    let sha = hex(&Sha256::digest(canonical.as_bytes()));
    let manifest = RunManifest {
        command: command.to_string(),
        resolved_config,
        config_sha256: sha,
        seed,
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        outputs: out.outputs(),
    };
    out.write_json("run_manifest.json", &manifest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

fn parse_json_file<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::invalid(format!(
            "{what} {}: {e} (line {}, column {})",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

fn load_model(path: &Path) -> Result<FittedModel> {
    let doc: ModelDocument = parse_json_file(path, "model file")?;
    doc.into_model()
}

fn load_data(path: &Path, header: bool) -> Result<DataMatrix> {
    load_csv(path, header)
}

fn fmt(v: f64) -> String {
    format!("{v:.17e}")
}

/// Caps the worker-thread pool from the DKPCA_THREADS environment variable.
#[cfg(feature = "parallel")]
fn init_thread_pool() {
    if let Ok(v) = std::env::var("DKPCA_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            _ => eprintln!("warning: ignoring invalid DKPCA_THREADS value {v:?}"),
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn init_thread_pool() {}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn synth_data(kind: &str, n: usize, d: Option<usize>, noise_std: f64, seed: u64) -> Result<DataMatrix> {
    match kind {
        "square" => gen_synth_square(n, noise_std, seed),
        "complex" => gen_synth_complex(n, seed),
        "gaussian" => {
            let d = d.ok_or_else(|| Error::invalid("gaussian synthesis needs --d"))?;
            gen_synth_gaussian(n, d, seed)
        }
        other => Err(Error::invalid(format!(
            "unknown synthetic kind {other:?}; expected square, complex, or gaussian"
        ))),
    }
}

fn cmd_synth(args: &SynthArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let kind = match args.kind {
        SynthKind::Square => "square",
        SynthKind::Complex => "complex",
        SynthKind::Gaussian => "gaussian",
    };
    let data = synth_data(kind, args.n, args.d, args.noise_std, args.seed)?;
    out.write_matrix_csv("data.csv", data.matrix())?;
    let resolved = serde_json::json!({
        "kind": kind,
        "n": args.n,
        "d": args.d,
        "noise_std": args.noise_std,
        "seed": args.seed,
    });
    write_manifest(out, "synth", resolved, Some(args.seed), started)
}

fn cmd_fit(args: &FitArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let mut config: RunConfig = parse_json_file(&args.config, "run configuration")?;
    if let Some(seed) = args.seed {
        config.train.seed = Some(seed);
    }
    let arch = ArchitectureSpec::new(config.architecture.levels.clone())?;
    let train = config.train.resolve()?;

    let raw = match (&config.data.path, &config.data.synth) {
        (Some(path), None) => load_data(Path::new(path), config.data.header)?,
        (None, Some(s)) => synth_data(
            &s.kind,
            s.n,
            s.d,
            s.noise_std.unwrap_or(0.0),
            s.seed.unwrap_or(0),
        )?,
        _ => {
            return Err(Error::invalid(
                "data source must set exactly one of \"path\" or \"synth\"",
            ))
        }
    };
    let data = if config.center { raw.centered().0 } else { raw };

    let (model, report) = FittedModel::from_fit(arch, data, &train)?;
    out.write_json("model.json", &ModelDocument::from_model(&model, Some(report.clone())))?;
    out.write_json("fit_report.json", &report)?;

    let resolved = serde_json::json!({
        "config": config,
        "train_resolved": train,
    });
    write_manifest(out, "fit", resolved, Some(train.seed), started)
}

fn cmd_variance(args: &ModelOutArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let model = load_model(&args.model)?;
    let k1 = kernel_matrix(
        model.arch.levels[0].kernel,
        model.train_data.matrix(),
        model.train_data.matrix(),
    )?;
    let mut reports = Vec::new();
    for level in 0..model.n_levels() {
        reports.push(level_variance_report(&model.arch, &model.state, &k1, level)?);
    }
    out.write_json("variance.json", &reports)?;

    let mut rows = Vec::new();
    for r in &reports {
        for c in 0..r.eigenvalues.len() {
            rows.push(vec![
                r.level.to_string(),
                c.to_string(),
                fmt(r.eigenvalues[c]),
                fmt(r.per_component_pct[c]),
                fmt(r.cumulative_pct[c]),
            ]);
        }
    }
    out.write_records_csv(
        "variance.csv",
        &["level", "component", "eigenvalue", "pct", "cumulative_pct"],
        &rows,
    )?;

    let resolved = serde_json::json!({ "model": args.model.display().to_string() });
    write_manifest(out, "variance", resolved, None, started)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsSweep {
    /// Second-level regularizers to sweep. For each value the two-level
    /// stationary solution is computed in closed form on the model's kernel
    /// matrix and bracketed.
    eta2_grid: Vec<f64>,
}

fn cmd_bounds(args: &BoundsArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let model = load_model(&args.model)?;
    let sweep: BoundsSweep = parse_json_file(&args.sweep, "sweep specification")?;
    if model.n_levels() != 2 {
        return Err(Error::invalid("bounds require a two-level model"));
    }
    if !model.arch.levels[1].kernel.is_linear() {
        return Err(Error::invalid(
            "bounds require a linear second-level kernel",
        ));
    }
    if model.arch.levels[0].eta != 1.0 {
        return Err(Error::invalid("bounds require eta_1 = 1"));
    }
    if sweep.eta2_grid.is_empty() {
        return Err(Error::invalid("eta2_grid must be nonempty"));
    }
    let k1 = kernel_matrix(
        model.arch.levels[0].kernel,
        model.train_data.matrix(),
        model.train_data.matrix(),
    )?;
    let (s1, s2) = (model.arch.levels[0].s, model.arch.levels[1].s);

    let mut reports: Vec<(f64, BoundsReport)> = Vec::new();
    let mut rows = Vec::new();
    for &eta2 in &sweep.eta2_grid {
        let state = analytic_two_level_linear_general(&k1, s1, s2, 1.0, eta2)?;
        let b = bounds_lemma1(&k1, &state, eta2)?;
        rows.push(vec![
            fmt(eta2),
            s1.to_string(),
            s2.to_string(),
            fmt(b.lower),
            fmt(b.actual),
            fmt(b.upper),
            b.r1.to_string(),
            b.regime.to_string(),
        ]);
        reports.push((eta2, b));
    }
    out.write_records_csv(
        "bounds.csv",
        &["eta2", "s1", "s2", "lower", "actual", "upper", "r1", "regime"],
        &rows,
    )?;
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|(eta2, b)| serde_json::json!({ "eta2": eta2, "bounds": b }))
        .collect();
    out.write_json("bounds.json", &json)?;

    let resolved = serde_json::json!({
        "model": args.model.display().to_string(),
        "sweep": sweep,
        "s1": s1,
        "s2": s2,
    });
    write_manifest(out, "bounds", resolved, None, started)
}

fn cmd_lemma2(args: &Lemma2Args, out: &mut OutDir, started: Instant) -> Result<()> {
    let data = load_data(&args.data, args.header)?;
    let kernel = match args.sigma2 {
        Some(sigma2) => Kernel::Rbf { sigma2 },
        None => Kernel::Linear,
    };
    kernel.validate()?;
    let k1 = kernel_matrix(kernel, data.matrix(), data.matrix())?;
    let spectrum = sym_eig_desc(&k1)?.values;
    let n_samples = k1.nrows();
    if n_samples < 2 {
        return Err(Error::invalid("need at least 2 samples"));
    }
    let lam_min = spectrum[n_samples - 1];
    let eta2 = match args.eta2 {
        Some(v) => v,
        None => {
            if lam_min <= 0.0 {
                return Err(Error::ConditionViolated(
                    "kernel matrix is not positive definite; pass --eta2 explicitly".into(),
                ));
            }
            1.01 * (-1.0 / lam_min)
        }
    };

    let mut rows = Vec::new();
    let mut holds_all = true;
    for n in 1..n_samples {
        let (deep, shallow, holds) = variance_advantage(&k1, eta2, n)?;
        holds_all &= holds;
        rows.push(vec![
            n.to_string(),
            fmt(deep),
            fmt(shallow),
            fmt(deep - shallow),
            holds.to_string(),
        ]);
    }
    out.write_records_csv(
        "lemma2.csv",
        &["n", "deep_cumulative", "shallow_cumulative", "gap", "holds"],
        &rows,
    )?;
    out.write_json(
        "lemma2_summary.json",
        &serde_json::json!({
            "eta2": eta2,
            "lambda_min": lam_min,
            "holds_all": holds_all,
            "n_samples": n_samples,
        }),
    )?;

    let resolved = serde_json::json!({
        "data": args.data.display().to_string(),
        "header": args.header,
        "kernel": kernel,
        "eta2": eta2,
    });
    write_manifest(out, "lemma2", resolved, None, started)
}

fn cmd_reconstruct(args: &ReconstructArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_data(&args.data, args.header)?;

    let top = model.n_levels() - 1;
    let mut rows = Vec::with_capacity(data.nrows());
    for i in 0..data.nrows() {
        let h_top = if args.stored_latents {
            if data.nrows() != model.train_data.nrows() {
                return Err(Error::invalid(
                    "--stored-latents needs one data row per training sample",
                ));
            }
            model.state.h[top].row(i).transpose()
        } else {
            encode_oos(&model, &data.row(i))?[top].clone()
        };
        let x_hat = reconstruct(&model, &h_top)?;
        rows.push(x_hat.iter().copied().collect::<Vec<f64>>());
    }
    let recon = DataMatrix::from_rows(&rows)?;
    out.write_matrix_csv("reconstructions.csv", recon.matrix())?;

    let mse = reconstruction_error(&model, &data, args.stored_latents)?;
    out.write_json(
        "reconstruction.json",
        &serde_json::json!({
            "mse": mse,
            "rows": data.nrows(),
            "stored_latents": args.stored_latents,
        }),
    )?;

    let resolved = serde_json::json!({
        "model": args.model.display().to_string(),
        "data": args.data.display().to_string(),
        "header": args.header,
        "stored_latents": args.stored_latents,
    });
    write_manifest(out, "reconstruct", resolved, None, started)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraversalFile {
    level: usize,
    component: usize,
    grid: Vec<f64>,
    base: TraversalBaseFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum TraversalBaseFile {
    TrainIndex(usize),
    Latent(Vec<f64>),
}

fn cmd_traverse(args: &TraverseArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let model = load_model(&args.model)?;
    let file: TraversalFile = parse_json_file(&args.spec, "traversal specification")?;
    let spec = TraversalSpec {
        level: file.level,
        component: file.component,
        grid: file.grid.clone(),
        base: match &file.base {
            TraversalBaseFile::TrainIndex(i) => TraversalBase::TrainIndex(*i),
            TraversalBaseFile::Latent(v) => TraversalBase::Latent(v.clone()),
        },
    };
    let samples = traverse(&model, &spec)?;
    out.write_matrix_csv("traversal.csv", samples.matrix())?;
    out.write_json(
        "traversal.json",
        &serde_json::json!({
            "level": file.level,
            "component": file.component,
            "grid": file.grid,
        }),
    )?;

    let resolved = serde_json::json!({
        "model": args.model.display().to_string(),
        "spec": file,
    });
    write_manifest(out, "traverse", resolved, None, started)
}

fn cmd_oos(args: &DataModelOutArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let model = load_model(&args.model)?;
    let data = load_data(&args.data, args.header)?;
    let features = extract_features(&model, &data, false)?;
    out.write_matrix_csv("latents.csv", &features.values)?;
    let widths: Vec<usize> = model.arch.levels.iter().map(|l| l.s).collect();
    out.write_json(
        "oos.json",
        &serde_json::json!({
            "rows": data.nrows(),
            "level_widths": widths,
            "columns": "per-level latents concatenated left to right",
        }),
    )?;

    let resolved = serde_json::json!({
        "model": args.model.display().to_string(),
        "data": args.data.display().to_string(),
        "header": args.header,
    });
    write_manifest(out, "oos", resolved, None, started)
}

/// Splits a CSV with a target column into (features, targets).
fn load_supervised(path: &Path, header: bool, target: &str) -> Result<(DataMatrix, DVector<f64>)> {
    let col = if header {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| Error::invalid(format!("cannot open {}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::invalid(format!("cannot read header of {}: {e}", path.display())))?;
        match headers.iter().position(|h| h == target) {
            Some(i) => i,
            None => target.parse::<usize>().map_err(|_| {
                Error::invalid(format!(
                    "target column {target:?} not found in header of {}",
                    path.display()
                ))
            })?,
        }
    } else {
        target.parse::<usize>().map_err(|_| {
            Error::invalid("without --header, --target-col must be a 0-based index")
        })?
    };
    let full = load_csv(path, header)?;
    if col >= full.ncols() {
        return Err(Error::invalid(format!(
            "target column index {col} out of range (file has {} columns)",
            full.ncols()
        )));
    }
    let m = full.matrix();
    let mut rows = Vec::with_capacity(m.nrows());
    let mut y = Vec::with_capacity(m.nrows());
    for i in 0..m.nrows() {
        let mut row = Vec::with_capacity(m.ncols() - 1);
        for j in 0..m.ncols() {
            if j == col {
                y.push(m[(i, j)]);
            } else {
                row.push(m[(i, j)]);
            }
        }
        rows.push(row);
    }
    Ok((DataMatrix::from_rows(&rows)?, DVector::from_vec(y)))
}

fn cmd_downstream(args: &DownstreamArgs, out: &mut OutDir, started: Instant) -> Result<()> {
    let model = load_model(&args.model)?;
    let (x_train, y_train) = load_supervised(&args.train, args.header, &args.target_col)?;
    let (x_test, y_test) = load_supervised(&args.test, args.header, &args.target_col)?;

    // Training rows identical to the stored training data can reuse the
    // stored latents; anything else is encoded out-of-sample.
    let is_training = x_train.nrows() == model.train_data.nrows()
        && x_train.ncols() == model.train_data.ncols()
        && x_train.matrix() == model.train_data.matrix();
    let f_train = extract_features(&model, &x_train, is_training)?;
    let f_test = extract_features(&model, &x_test, false)?;

    let task = match args.task {
        TaskArg::Regression => Task::Regression,
        TaskArg::Classification => Task::BinaryClassification,
    };
    let spec = PredictorSpec {
        task,
        ridge: args.ridge,
    };
    let pred_test = fit_predict(&f_train, &y_train, &f_test, &spec)?;
    let pred_train = fit_predict(&f_train, &y_train, &f_train, &spec)?;

    let metric_name = match task {
        Task::Regression => "rmse",
        Task::BinaryClassification => "acc_pct",
    };
    let test_metric = metrics(&pred_test, &y_test, task)?;
    let train_metric = metrics(&pred_train, &y_train, task)?;

    out.write_matrix_csv("predictions.csv", &DMatrix::from_fn(pred_test.len(), 2, |i, j| {
        if j == 0 {
            pred_test[i]
        } else {
            y_test[i]
        }
    }))?;
    out.write_json(
        "metrics.json",
        &serde_json::json!({
            "task": match task { Task::Regression => "regression", Task::BinaryClassification => "classification" },
            "metric": metric_name,
            "test": test_metric,
            "train": train_metric,
            "ridge": args.ridge,
            "train_rows_looked_up": is_training,
        }),
    )?;

    let resolved = serde_json::json!({
        "model": args.model.display().to_string(),
        "train": args.train.display().to_string(),
        "test": args.test.display().to_string(),
        "target_col": args.target_col,
        "header": args.header,
        "task": metric_name,
        "ridge": args.ridge,
    });
    write_manifest(out, "downstream", resolved, None, started)
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Parse { .. } | Error::Io(_) => 2,
        Error::DegenerateInput(_)
        | Error::ConditionViolated(_)
        | Error::NoSupport(_)
        | Error::NumericalFailure(_) => 3,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let out_path = match &cli.command {
        Command::Synth(a) => &a.out,
        Command::Fit(a) => &a.out,
        Command::Variance(a) => &a.out,
        Command::Bounds(a) => &a.out,
        Command::Lemma2(a) => &a.out,
        Command::Reconstruct(a) => &a.out,
        Command::Traverse(a) => &a.out,
        Command::Oos(a) => &a.out,
        Command::Downstream(a) => &a.out,
    }
    .clone();
    let mut out = OutDir::create(&out_path)?;
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &mut out, started),
        Command::Fit(a) => cmd_fit(a, &mut out, started),
        Command::Variance(a) => cmd_variance(a, &mut out, started),
        Command::Bounds(a) => cmd_bounds(a, &mut out, started),
        Command::Lemma2(a) => cmd_lemma2(a, &mut out, started),
        Command::Reconstruct(a) => cmd_reconstruct(a, &mut out, started),
        Command::Traverse(a) => cmd_traverse(a, &mut out, started),
        Command::Oos(a) => cmd_oos(a, &mut out, started),
        Command::Downstream(a) => cmd_downstream(a, &mut out, started),
    };
    if result.is_err() {
        out.remove_partial();
    }
    result
}

fn main() -> ExitCode {
    init_thread_pool();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
