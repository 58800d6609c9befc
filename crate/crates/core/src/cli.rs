//! The `ctl` command line: `synth`, `train`, `reconstruct`, `evaluate` and
//! `benchmark`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
//! `train` writes the model plus a sidecar manifest at `<model>.manifest`;
//! later commands read the sensing seed from it so that test measurements
//! are taken with the same matrix the model was trained on.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};

use crate::baseline::{dct_basis, select_gamma_factor, CsSolver, CsSolverConfig, GAMMA_GRID};
use crate::coupled::{self, CoupledModel, InitScheme, TrainConfig};
use crate::data::{
    self, column_nmse, column_rmse, error_stats, load_windows_csv, save_matrix_csv,
    synth_signals, ErrorStats, SignalKind,
};
use crate::manifest::Manifest;
use crate::sensing::{bernoulli_matrix, measurement_count, SensingMatrix};
use crate::{Error, Result};

/// Windows taken from the end of the training set to tune the baseline's γ.
const VALIDATION_WINDOWS: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "ctl", version, about = "Coupled transform learning for compressive signal reconstruction")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic signal windows as CSV (one window per row).
    Synth(SynthArgs),
    /// Train a coupled model on (signal, measurement) pairs.
    Train(TrainArgs),
    /// Reconstruct windows with a trained model.
    Reconstruct(ReconstructArgs),
    /// Score coupled and baseline reconstructions on a test set.
    Evaluate(EvaluateArgs),
    /// Time training and per-sample reconstruction.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Kind {
    Harmonic,
    PulseTrain,
}

impl From<Kind> for SignalKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Harmonic => SignalKind::Harmonic,
            Kind::PulseTrain => SignalKind::PulseTrain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Coupled,
    CsBaseline,
    Both,
}

impl Method {
    fn coupled(self) -> bool {
        matches!(self, Method::Coupled | Method::Both)
    }

    fn baseline(self) -> bool {
        matches!(self, Method::CsBaseline | Method::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    Identity,
    RandomOrthogonal,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "harmonic")]
    kind: Kind,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// Where signal windows come from: CSV files or the synthetic generator.
/// Synthetic training windows use `data_seed`, test windows `data_seed + 1`.
#[derive(Debug, Args, Clone)]
struct DataArgs {
    #[arg(long)]
    train_csv: Option<PathBuf>,
    #[arg(long)]
    test_csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "harmonic")]
    kind: Kind,
    #[arg(long, default_value_t = 2000)]
    train_count: usize,
    #[arg(long, default_value_t = 400)]
    test_count: usize,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,
    /// Zero-mean, unit-norm scaling of every window before use.
    #[arg(long)]
    normalize: bool,
}

#[derive(Debug, Args, Clone)]
struct SensingArgs {
    /// Window length; inferred from CSV input or the model when omitted.
    #[arg(long)]
    n: Option<usize>,
    /// Undersampling ratio m/n.
    #[arg(long)]
    ratio: Option<f64>,
    /// Sensing-matrix seed; must match the seed the model was trained with.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sensing: SensingArgs,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value = "identity")]
    init: Init,
    /// Model path; defaults to `<out>/model.ctl`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output directory for the model and objective trace.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input windows, one per row.
    #[arg(long = "test-csv")]
    input: PathBuf,
    /// Rows are length-m measurements rather than length-n signals.
    #[arg(long)]
    measurements: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV: one reconstructed window per row. A long-format trace is
    /// written next to it as `<out>.trace.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sensing: SensingArgs,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    method: Method,
    /// Relative l1 weight of the baseline; tuned on a validation slice of the
    /// training data when omitted.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 500)]
    cs_iters: usize,
    #[arg(long)]
    accelerated: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    sensing: SensingArgs,
    /// Trained model; a fresh model is trained (and timed) when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    mu: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, value_enum, default_value = "both")]
    method: Method,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, default_value_t = 500)]
    cs_iters: usize,
    /// Timed reconstructions per method.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Benchmark(a) => cmd_benchmark(&a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidArgument(_) => 1,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let x = synth_signals(a.kind.into(), a.count, a.n, a.seed, a.noise_std)?;
    save_matrix_csv(&a.out, &x)?;
    println!("wrote {} windows of length {} to {}", a.count, a.n, a.out.display());
    Ok(())
}

/// Sidecar manifest path of a model file.
pub fn model_manifest_path(model: &Path) -> PathBuf {
    let mut p = model.as_os_str().to_owned();
    p.push(".manifest");
    PathBuf::from(p)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

struct Dataset {
    x: DMatrix<f64>,
    source: String,
}

impl DataArgs {
    fn data_seed(&self, fallback: Option<u64>) -> u64 {
        self.data_seed.or(fallback).unwrap_or(0)
    }

    fn finish(&self, mut x: DMatrix<f64>, source: String) -> Dataset {
        if self.normalize {
            data::normalize_windows(&mut x);
        }
        Dataset { x, source }
    }

    fn train_set(&self, n: Option<usize>, seed_fallback: Option<u64>) -> Result<Dataset> {
        match &self.train_csv {
            Some(path) => {
                let x = load_windows_csv(path)?;
                Ok(self.finish(x, path.display().to_string()))
            }
            None => {
                let seed = self.data_seed(seed_fallback);
                let x = synth_signals(self.kind.into(), self.train_count, n.unwrap_or(512), seed, self.noise_std)?;
                Ok(self.finish(x, format!("synth:{}:seed={seed}", SignalKind::from(self.kind))))
            }
        }
    }

    fn test_set(&self, n: Option<usize>, seed_fallback: Option<u64>) -> Result<Dataset> {
        match &self.test_csv {
            Some(path) => {
                let x = load_windows_csv(path)?;
                Ok(self.finish(x, path.display().to_string()))
            }
            None => {
                let seed = self.data_seed(seed_fallback).wrapping_add(1);
                let x = synth_signals(self.kind.into(), self.test_count, n.unwrap_or(512), seed, self.noise_std)?;
                Ok(self.finish(x, format!("synth:{}:seed={seed}", SignalKind::from(self.kind))))
            }
        }
    }

    fn describe(&self, m: &mut Manifest) {
        if self.train_csv.is_none() || self.test_csv.is_none() {
            m.set("synth_kind", SignalKind::from(self.kind))
                .set("noise_std", self.noise_std);
        }
        m.set("normalize", self.normalize);
    }
}

fn check_window_len(data: &Dataset, n: usize) -> Result<()> {
    if data.x.nrows() != n {
        return Err(Error::dims("window length", n, data.x.nrows()));
    }
    Ok(())
}

/// Everything fixed about an experiment once a model (if any) is loaded.
struct Setup {
    model: Option<CoupledModel>,
    model_manifest: Option<Manifest>,
    phi: SensingMatrix,
}

impl Setup {
    fn n(&self) -> usize {
        self.phi.cols()
    }

    fn m(&self) -> usize {
        self.phi.rows()
    }
}

/// Resolves the model and the sensing matrix, rejecting flags that disagree
/// with what the model was trained with.
fn resolve_setup(model_path: Option<&Path>, sensing: &SensingArgs, data_n: Option<usize>) -> Result<Setup> {
    let (model, manifest) = match model_path {
        Some(path) => {
            let model = CoupledModel::load(path)?;
            let mpath = model_manifest_path(path);
            let manifest = if mpath.exists() {
                Some(Manifest::load(&mpath)?)
            } else {
                None
            };
            (Some(model), manifest)
        }
        None => (None, None),
    };

    let manifest_seed = match &manifest {
        Some(m) => m.parse::<u64>("seed")?,
        None => None,
    };
    let seed = match (sensing.seed, manifest_seed) {
        (Some(a), Some(b)) if a != b => {
            return Err(usage(format!(
                "--seed {a} differs from the sensing seed {b} the model was trained with"
            )))
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) if model.is_some() => {
            return Err(usage("model has no manifest; pass the sensing --seed it was trained with"))
        }
        (None, None) => 1,
    };

    let (n, m) = match &model {
        Some(model) => {
            let (n, m) = (model.signal_dim(), model.measurement_dim());
            if let Some(flag_n) = sensing.n {
                if flag_n != n {
                    return Err(Error::dims("--n vs model signal length", n, flag_n));
                }
            }
            if let Some(ratio) = sensing.ratio {
                let expected = measurement_count(ratio, n)?;
                if expected != m {
                    return Err(Error::dims("--ratio vs model measurement length", m, expected));
                }
            }
            (n, m)
        }
        None => {
            let n = sensing.n.or(data_n).unwrap_or(512);
            let m = measurement_count(sensing.ratio.unwrap_or(0.25), n)?;
            (n, m)
        }
    };
    let phi = bernoulli_matrix(m, n, seed)?;
    Ok(Setup {
        model,
        model_manifest: manifest,
        phi,
    })
}

fn sensing_manifest(m: &mut Manifest, phi: &SensingMatrix) {
    m.set("n", phi.cols())
        .set("m", phi.rows())
        .set("ratio", phi.ratio())
        .set("seed", phi.seed())
        .set("sensing", "bernoulli")
        .set("sensing_scale", phi.scale());
}

fn csv_window_len(path: Option<&PathBuf>) -> Result<Option<usize>> {
    path.map(|p| load_windows_csv(p).map(|x| x.nrows())).transpose()
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let config = TrainConfig {
        lambda: a.lambda,
        mu: a.mu,
        max_iters: a.max_iters,
        rel_tol: a.tol,
        seed: a.sensing.seed.unwrap_or(1),
        init: match a.init {
            Init::Identity => InitScheme::Identity,
            Init::RandomOrthogonal => InitScheme::RandomOrthogonal,
        },
    };
    config.validate()?;
    let train = a.data.train_set(a.sensing.n, a.sensing.seed)?;
    let n = train.x.nrows();
    if let Some(flag_n) = a.sensing.n {
        check_window_len(&train, flag_n)?;
    }
    let setup = resolve_setup(None, &a.sensing, Some(n))?;
    let y = setup.phi.compress(&train.x)?;

    let started = Instant::now();
    let (model, trace) = coupled::train(&train.x, &y, &config)?;
    let train_seconds = started.elapsed().as_secs_f64();

    create_dir(&a.out)?;
    let model_path = a.model.clone().unwrap_or_else(|| a.out.join("model.ctl"));
    let trace_path = a.out.join("trace.csv");
    let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    trace
        .write_csv(BufWriter::new(file))
        .map_err(|e| Error::io(&trace_path, e))?;

    let mut manifest = Manifest::new();
    manifest.set("command", "train");
    sensing_manifest(&mut manifest, &setup.phi);
    manifest
        .set("lambda", config.lambda)
        .set("mu", config.mu)
        .set("max_iters", config.max_iters)
        .set("tol", config.rel_tol)
        .set("init", format!("{:?}", config.init).to_lowercase())
        .set("train_source", &train.source)
        .set("train_windows", train.x.ncols());
    a.data.describe(&mut manifest);
    manifest
        .set("iterations", trace.iterations_run)
        .set("converged", trace.converged)
        .set("final_objective", trace.final_objective().unwrap_or(f64::NAN))
        .set("train_seconds", train_seconds)
        .set("trace", trace_path.display())
        .set("metric", "nmse");
    model.save(&model_path)?;
    manifest.save(model_manifest_path(&model_path))?;

    println!(
        "trained n={} m={} on {} windows: {} iterations (converged: {}), objective {:.6e}, {:.2} s",
        setup.n(),
        setup.m(),
        train.x.ncols(),
        trace.iterations_run,
        trace.converged,
        trace.final_objective().unwrap_or(f64::NAN),
        train_seconds
    );
    println!("model: {}", model_path.display());
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let sensing = SensingArgs {
        n: None,
        ratio: None,
        seed: a.seed,
    };
    let input = load_windows_csv(&a.input)?;
    let model = CoupledModel::load(&a.model)?;
    let (truth, y) = if a.measurements {
        if input.nrows() != model.measurement_dim() {
            return Err(Error::dims("measurement length", model.measurement_dim(), input.nrows()));
        }
        (None, input)
    } else {
        if input.nrows() != model.signal_dim() {
            return Err(Error::dims("window length", model.signal_dim(), input.nrows()));
        }
        let setup = resolve_setup(Some(&a.model), &sensing, None)?;
        let y = setup.phi.compress(&input)?;
        (Some(input), y)
    };
    let recon = model.reconstruct(&y)?;
    save_matrix_csv(&a.out, &recon)?;

    let mut trace_path = a.out.as_os_str().to_owned();
    trace_path.push(".trace.csv");
    let trace_path = PathBuf::from(trace_path);
    let file = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(&trace_path, e);
    match &truth {
        Some(_) => writeln!(w, "window,index,truth,reconstruction"),
        None => writeln!(w, "window,index,reconstruction"),
    }
    .map_err(io_err)?;
    for k in 0..recon.ncols() {
        for i in 0..recon.nrows() {
            match &truth {
                Some(t) => writeln!(w, "{k},{i},{:?},{:?}", t[(i, k)], recon[(i, k)]),
                None => writeln!(w, "{k},{i},{:?}", recon[(i, k)]),
            }
            .map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)?;
    println!("reconstructed {} windows -> {}", recon.ncols(), a.out.display());
    Ok(())
}

struct MethodResult {
    name: &'static str,
    nmse: Vec<f64>,
    rmse: Vec<f64>,
}

fn cs_config(iters: usize, accelerated: bool) -> CsSolverConfig {
    CsSolverConfig {
        max_iters: iters,
        accelerated,
        ..CsSolverConfig::new(1.0)
    }
}

/// Relative γ for the baseline: the flag, or the grid winner on the last
/// training windows.
fn baseline_gamma(
    gamma: Option<f64>,
    data: &DataArgs,
    setup: &Setup,
    solver: &CsSolver,
    config: &CsSolverConfig,
    seed_fallback: Option<u64>,
) -> Result<(f64, String)> {
    if let Some(g) = gamma {
        if !(g > 0.0 && g.is_finite()) {
            return Err(usage(format!("--gamma must be positive, got {g}")));
        }
        return Ok((g, "flag".into()));
    }
    if data.train_csv.is_none() && data.test_csv.is_some() {
        return Err(usage(
            "tuning gamma needs training data: pass --train-csv or --gamma",
        ));
    }
    let train = data.train_set(Some(setup.n()), seed_fallback)?;
    check_window_len(&train, setup.n())?;
    let take = VALIDATION_WINDOWS.min(train.x.ncols());
    let xv = train.x.columns(train.x.ncols() - take, take).into_owned();
    let yv = setup.phi.compress(&xv)?;
    let (factor, _) = select_gamma_factor(solver, &yv, &xv, &GAMMA_GRID, config)?;
    Ok((factor, format!("grid on {take} validation windows")))
}

fn data_seed_fallback(setup: &Setup, sensing: &SensingArgs) -> Option<u64> {
    sensing.seed.or_else(|| Some(setup.phi.seed()))
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    if a.method.coupled() && a.model.is_none() {
        return Err(usage("--model is required to evaluate the coupled method"));
    }
    let csv_n = csv_window_len(a.data.test_csv.as_ref())?;
    let setup = resolve_setup(a.model.as_deref(), &a.sensing, csv_n)?;
    let seed_fallback = data_seed_fallback(&setup, &a.sensing);
    let test = a.data.test_set(Some(setup.n()), seed_fallback)?;
    check_window_len(&test, setup.n())?;
    let y = setup.phi.compress(&test.x)?;

    let mut manifest = Manifest::new();
    manifest.set("command", "evaluate");
    sensing_manifest(&mut manifest, &setup.phi);
    manifest
        .set("test_source", &test.source)
        .set("test_windows", test.x.ncols())
        .set("metric", "nmse")
        .set("secondary_metric", "rmse");
    a.data.describe(&mut manifest);

    let mut results = Vec::new();
    if a.method.coupled() {
        let model = setup.model.as_ref().expect("checked above");
        let recon = model.reconstruct(&y)?;
        results.push(MethodResult {
            name: "coupled",
            nmse: column_nmse(&recon, &test.x)?,
            rmse: column_rmse(&recon, &test.x)?,
        });
        let path = a.model.as_ref().expect("checked above");
        manifest
            .set("coupled_model", path.display())
            .set("lambda", model.lambda())
            .set("mu", model.mu());
        if let Some(mm) = &setup.model_manifest {
            for key in ["train_source", "train_windows", "iterations"] {
                if let Some(v) = mm.get(key) {
                    manifest.set(&format!("coupled_{key}"), v);
                }
            }
        }
    }
    if a.method.baseline() {
        let config = cs_config(a.cs_iters, a.accelerated);
        let solver = CsSolver::new(&setup.phi, &dct_basis(setup.n()))?;
        let (gamma, how) = baseline_gamma(a.gamma, &a.data, &setup, &solver, &config, seed_fallback)?;
        let recon = solver.reconstruct_batch(&y, gamma, &config)?;
        results.push(MethodResult {
            name: "cs-baseline",
            nmse: column_nmse(&recon, &test.x)?,
            rmse: column_rmse(&recon, &test.x)?,
        });
        manifest
            .set("cs_basis", "dct-ii")
            .set("cs_gamma_factor", gamma)
            .set("cs_gamma_selection", how)
            .set("cs_max_iters", config.max_iters)
            .set("cs_rel_tol", config.rel_tol)
            .set("cs_accelerated", config.accelerated);
    }

    let stats: Vec<(ErrorStats, ErrorStats)> = results
        .iter()
        .map(|r| Ok((error_stats(&r.nmse)?, error_stats(&r.rmse)?)))
        .collect::<Result<_>>()?;

    create_dir(&a.out)?;
    let table_path = a.out.join("eval_table.csv");
    let mut table = String::from("ratio,method,metric,mean,std,max,min,count\n");
    for (r, (nm, rm)) in results.iter().zip(&stats) {
        for (metric, s) in [("nmse", nm), ("rmse", rm)] {
            writeln!(
                table,
                "{},{},{metric},{:?},{:?},{:?},{:?},{}",
                setup.phi.ratio(),
                r.name,
                s.mean,
                s.std,
                s.max,
                s.min,
                s.count
            )
            .unwrap();
        }
    }
    fs::write(&table_path, table).map_err(|e| Error::io(&table_path, e))?;

    let errors_path = a.out.join("eval_errors.csv");
    let mut errors = String::from("window,method,nmse,rmse\n");
    for r in &results {
        for (k, (e, q)) in r.nmse.iter().zip(&r.rmse).enumerate() {
            writeln!(errors, "{k},{},{e:?},{q:?}", r.name).unwrap();
        }
    }
    fs::write(&errors_path, errors).map_err(|e| Error::io(&errors_path, e))?;
    manifest
        .set("table", table_path.display())
        .set("errors", errors_path.display());
    manifest.save(a.out.join("eval.manifest"))?;

    print!("{}", render_error_table(setup.phi.ratio(), &results, &stats));
    Ok(())
}

fn render_error_table(ratio: f64, results: &[MethodResult], stats: &[(ErrorStats, ErrorStats)]) -> String {
    let mut out = String::new();
    let count = stats.first().map_or(0, |s| s.0.count);
    writeln!(out, "Error = NMSE over {count} test windows").unwrap();
    write!(out, "{:<8} {:<14}", "ratio", "error").unwrap();
    for r in results {
        write!(out, " {:>18}", r.name).unwrap();
    }
    out.push('\n');
    let rows: [(&str, fn(&ErrorStats) -> String); 3] = [
        ("mean, ±std", |s| format!("{:.4}, ±{:.4}", s.mean, s.std)),
        ("max", |s| format!("{:.4}", s.max)),
        ("min", |s| format!("{:.4}", s.min)),
    ];
    for (i, (label, cell)) in rows.iter().enumerate() {
        let lead = if i == 0 { format!("{ratio:.2}") } else { String::new() };
        write!(out, "{lead:<8} {label:<14}").unwrap();
        for (nm, _) in stats {
            write!(out, " {:>18}", cell(nm)).unwrap();
        }
        out.push('\n');
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median wall-clock seconds of `f` over `samples` calls cycling through the
/// columns of `y`, after a warm-up pass.
pub fn median_latency<F>(y: &DMatrix<f64>, samples: usize, mut f: F) -> Result<f64>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    if y.ncols() == 0 || samples == 0 {
        return Err(usage("timing needs at least one sample"));
    }
    let cols: Vec<DVector<f64>> = y.column_iter().map(|c| c.into_owned()).collect();
    let warmup = (samples / 10).clamp(1, 100);
    for k in 0..warmup {
        std::hint::black_box(f(&cols[k % cols.len()])?);
    }
    let mut times = Vec::with_capacity(samples);
    for k in 0..samples {
        let col = &cols[k % cols.len()];
        let start = Instant::now();
        std::hint::black_box(f(std::hint::black_box(col))?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

fn cmd_benchmark(a: &BenchmarkArgs) -> Result<()> {
    let csv_n = csv_window_len(a.data.test_csv.as_ref())?;
    let mut setup = resolve_setup(a.model.as_deref(), &a.sensing, csv_n)?;
    let seed_fallback = data_seed_fallback(&setup, &a.sensing);

    let mut train_seconds = None;
    if a.method.coupled() && setup.model.is_none() {
        let train = a.data.train_set(Some(setup.n()), seed_fallback)?;
        check_window_len(&train, setup.n())?;
        let config = TrainConfig {
            lambda: a.lambda,
            mu: a.mu,
            max_iters: a.max_iters,
            rel_tol: a.tol,
            ..TrainConfig::default()
        };
        let y = setup.phi.compress(&train.x)?;
        let started = Instant::now();
        let (model, _) = coupled::train(&train.x, &y, &config)?;
        train_seconds = Some(started.elapsed().as_secs_f64());
        setup.model = Some(model);
    } else if let Some(mm) = &setup.model_manifest {
        train_seconds = mm.parse::<f64>("train_seconds")?;
    }

    let test = a.data.test_set(Some(setup.n()), seed_fallback)?;
    check_window_len(&test, setup.n())?;
    let y = setup.phi.compress(&test.x)?;

    let mut rows: Vec<(&str, Option<f64>, f64)> = Vec::new();
    let mut manifest = Manifest::new();
    manifest.set("command", "benchmark");
    sensing_manifest(&mut manifest, &setup.phi);
    manifest
        .set("test_source", &test.source)
        .set("timed_samples", a.samples)
        .set("timing", "median per-sample wall clock after warm-up");

    if a.method.baseline() {
        let config = cs_config(a.cs_iters, false);
        let solver = CsSolver::new(&setup.phi, &dct_basis(setup.n()))?;
        let (gamma, _) = baseline_gamma(a.gamma, &a.data, &setup, &solver, &config, seed_fallback)?;
        let t = median_latency(&y, a.samples, |col| solver.solve_relative(col, gamma, &config))?;
        rows.push(("cs-baseline", None, t));
        manifest
            .set("cs_gamma_factor", gamma)
            .set("cs_max_iters", config.max_iters);
    }
    if a.method.coupled() {
        let model = setup.model.as_ref().expect("trained or loaded above");
        let t = median_latency(&y, a.samples, |col| model.reconstruct_vector(col))?;
        rows.push(("coupled", train_seconds, t));
        manifest
            .set("lambda", model.lambda())
            .set("mu", model.mu());
        if let Some(s) = train_seconds {
            manifest.set("train_seconds", s);
        }
    }

    create_dir(&a.out)?;
    let path = a.out.join("benchmark.csv");
    let mut csv = String::from("method,training_seconds,testing_seconds_per_sample\n");
    let mut text = format!(
        "{:<14} {:>18} {:>26}\n",
        "method", "training time (s)", "testing time (s)/sample"
    );
    for (name, train, test) in &rows {
        let train_cell = train.map_or("-".to_string(), |s| format!("{s:.3}"));
        writeln!(csv, "{name},{},{test:e}", train.map_or(String::new(), |s| s.to_string())).unwrap();
        writeln!(text, "{name:<14} {train_cell:>18} {test:>26.3e}").unwrap();
    }
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    manifest.set("table", path.display());
    manifest.save(a.out.join("benchmark.manifest"))?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&usage("x")), 1);
        assert_eq!(exit_code(&Error::Singular("t")), 3);
        assert_eq!(exit_code(&Error::ModelFormat("x".into())), 2);
        assert_eq!(run(["ctl", "--help"]), 0);
        assert_eq!(run(["ctl", "frobnicate"]), 1);
        assert_eq!(run(["ctl", "train"]), 1);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn sidecar_path() {
        assert_eq!(
            model_manifest_path(Path::new("out/model.ctl")),
            PathBuf::from("out/model.ctl.manifest")
        );
    }
}
