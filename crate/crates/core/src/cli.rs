//! Command-line front end.
//!
//! Every subcommand writes a JSON report tagged with [`REPORT_SCHEMA`] into
//! the output directory, next to any kernel files, traces or plot data it
//! produces. Reports are byte-identical across runs with the same arguments
//! unless `--timing` is given.

use std::fs;
use std::io::BufWriter;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::activation::ActivationKind;
use crate::analytic::{analytic_layer_kernels, NetworkShape};
use crate::data::{load_csv, standardize_fit_transform, CsvSchema, Dataset};
use crate::dynamics::{
    estimate_eta_critical, plot_csv, verify_equivalence, verify_lazy, verify_stability, EquivalenceOptions, SweepConfig,
};
use crate::error::{Result, WntkError};
use crate::io::{save_kernel, write_matrix_csv};
use crate::layers::LayerWeights;
use crate::linalg::{extreme_eigenvalues, KernelMatrix};
use crate::network::Parameterization;
use crate::protocol::{bundled_dataset, cross_validate, cross_validate_learned, EvalConfig, BUNDLED_DATASETS};
use crate::regression::{kernel_hash, ANALYTIC_RIDGE};
use crate::synthetic::{gaussian_blobs, planted_layer_dataset, sphere_regression};
use crate::weights::WeightLearnerConfig;

pub const REPORT_SCHEMA: &str = "wntk.report/v1";
pub const OUT_DIR_ENV: &str = "WNTK_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "wntk-out";

#[derive(Debug, Parser)]
#[command(name = "wntk", version, about = "Weighted neural tangent kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Analytic NTK, WNTK and per-layer kernels of a dataset.
    Kernel,
    /// k-fold kernel ridge classification with the NTK or a fixed WNTK.
    Fit,
    /// Learns layer weights per fold and compares WNTK with NTK accuracy.
    LearnWeights,
    /// Kernel drift during training across widths.
    VerifyStability,
    /// Network vs linearized-model gap across widths.
    VerifyLazy,
    /// Trained network vs corrected kernel regression across widths.
    VerifyEquivalence,
    /// Learned WNTK vs NTK on the bundled tabular datasets.
    Benchmark,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Kernel => "kernel",
            Command::Fit => "fit",
            Command::LearnWeights => "learn-weights",
            Command::VerifyStability => "verify-stability",
            Command::VerifyLazy => "verify-lazy",
            Command::VerifyEquivalence => "verify-equivalence",
            Command::Benchmark => "benchmark",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// CSV dataset; the label is the last column unless --label-column is given.
    #[arg(long, global = true, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// 0-based label column of the CSV.
    #[arg(long, global = true)]
    pub label_column: Option<usize>,
    /// CSV without a header row.
    #[arg(long, global = true)]
    pub no_header: bool,
    /// Synthetic dataset: blobs[:n], planted[:n] or sphere[:n].
    #[arg(long, global = true)]
    pub synthetic: Option<String>,
    /// Standardize features before computing kernels (kernel command).
    #[arg(long, global = true)]
    pub standardize: bool,
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    /// Comma-separated, strictly increasing widths for the sweeps.
    #[arg(long, global = true, value_delimiter = ',')]
    pub widths: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub activation: Option<String>,
    /// ntk or standard.
    #[arg(long, global = true)]
    pub parameterization: Option<String>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    /// Ridge λ.
    #[arg(long, global = true, default_value_t = ANALYTIC_RIDGE)]
    pub reg: f64,
    /// Comma-separated layer weights (kernel, fit) or initial weights (learn-weights).
    #[arg(long, global = true, value_delimiter = ',', allow_negative_numbers = true)]
    pub weights: Option<Vec<f64>>,
    #[arg(long = "eta-w", global = true, default_value_t = 0.01)]
    pub eta_w: f64,
    /// Validation fraction of the weight learner.
    #[arg(long, global = true, default_value_t = 0.2)]
    pub ratio: f64,
    /// Weight-learner iterations.
    #[arg(long, global = true, default_value_t = 50)]
    pub iters: usize,
    /// Weight-learner patience.
    #[arg(long, global = true, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, global = true, default_value_t = crate::protocol::DEFAULT_FOLDS)]
    pub folds: usize,
    /// Training steps per sweep cell.
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Network seeds per width in the sweeps.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = DEFAULT_OUT_DIR)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Record wall time in the report (makes it non-reproducible).
    #[arg(long, global = true)]
    #[serde(skip)]
    pub timing: bool,
}

#[derive(Serialize)]
struct Report<'a, C: Serialize, M: Serialize> {
    schema: &'static str,
    command: &'static str,
    version: &'static str,
    args: &'a CommonArgs,
    config: C,
    metrics: M,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_seconds: Option<f64>,
}

/// Files written by one subcommand, the report first.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            println!("{}", outcome.report.display());
            0
        }
        Err(e) => {
            eprintln!("wntk {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let started = Instant::now();
    let c = &cli.common;
    fs::create_dir_all(&c.out)?;
    let w = Writer {
        args: c,
        command: cli.command,
        files: Vec::new(),
        started,
    };
    match cli.command {
        Command::Kernel => cmd_kernel(w),
        Command::Fit => cmd_fit(w),
        Command::LearnWeights => cmd_learn_weights(w),
        Command::VerifyStability | Command::VerifyLazy | Command::VerifyEquivalence => cmd_verify(w),
        Command::Benchmark => cmd_benchmark(w),
    }
}

struct Writer<'a> {
    args: &'a CommonArgs,
    command: Command,
    files: Vec<PathBuf>,
    started: Instant,
}

impl Writer<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.args.out.join(name)
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, body)?;
        self.files.push(p);
        Ok(())
    }

    fn kernel(&mut self, stem: &str, m: &KernelMatrix) -> Result<()> {
        let bin = self.path(&format!("{stem}.wntk"));
        save_kernel(&bin, m)?;
        let csv = self.path(&format!("{stem}.csv"));
        write_matrix_csv(BufWriter::new(fs::File::create(&csv)?), m)?;
        self.files.push(bin);
        self.files.push(csv);
        Ok(())
    }

    fn finish<C: Serialize, M: Serialize>(mut self, config: C, metrics: M) -> Result<Outcome> {
        let report = Report {
            schema: REPORT_SCHEMA,
            command: self.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            args: self.args,
            config,
            metrics,
            wall_time_seconds: self.args.timing.then(|| self.started.elapsed().as_secs_f64()),
        };
        let mut body = serde_json::to_string_pretty(&report)?;
        body.push('\n');
        let p = self.path(&format!("{}.report.json", self.command.name()));
        fs::write(&p, body)?;
        let mut files = vec![p.clone()];
        files.append(&mut self.files);
        Ok(Outcome { report: p, files })
    }
}

fn config_error(msg: impl Into<String>) -> WntkError {
    WntkError::InvalidArgument(msg.into())
}

fn activation(c: &CommonArgs) -> Result<Option<ActivationKind>> {
    c.activation.as_deref().map(ActivationKind::parse).transpose()
}

fn layer_weights(c: &CommonArgs, depth: usize) -> Result<Option<LayerWeights>> {
    match &c.weights {
        None => Ok(None),
        Some(v) => {
            let w = LayerWeights::new(v.clone())?;
            crate::layers::check_depth(depth, &w)?;
            Ok(Some(w))
        }
    }
}

fn depth(c: &CommonArgs) -> Result<usize> {
    match c.depth.unwrap_or(crate::protocol::DEFAULT_DEPTH) {
        0 => Err(config_error("--depth must be at least 1")),
        d => Ok(d),
    }
}

/// Parses `name[:n]`.
fn synthetic_dataset(spec: &str, depth: usize, seed: u64) -> Result<Dataset> {
    let (name, n) = match spec.split_once(':') {
        Some((name, n)) => (
            name,
            Some(n.parse::<usize>().map_err(|_| config_error(format!("bad sample count in '{spec}'")))?),
        ),
        None => (spec, None),
    };
    match name {
        "blobs" => gaussian_blobs(n.unwrap_or(60) / 2, 2, 4, 6.0, seed),
        "planted" => {
            let shape = NetworkShape::new(8, depth.max(2), ActivationKind::Relu)?;
            planted_layer_dataset(n.unwrap_or(120), &shape, 2, seed)
        }
        "sphere" => {
            let n = n.unwrap_or(64);
            let (x, t) = sphere_regression(n, 8, seed);
            let y = t.iter().map(|&v| usize::from(v >= 0.0)).collect();
            Dataset::new(
                x,
                y,
                vec!["neg".into(), "pos".into()],
                (0..8).map(|j| format!("x{j}")).collect(),
                format!("synthetic:sphere(n={n},d=8,seed={seed})"),
            )
        }
        other => Err(config_error(format!(
            "unknown synthetic dataset '{other}' (expected blobs, planted or sphere)"
        ))),
    }
}

fn dataset(c: &CommonArgs, depth: usize) -> Result<Dataset> {
    match (&c.data, &c.synthetic) {
        (Some(path), None) => {
            let schema = CsvSchema {
                label_column: c.label_column,
                has_header: !c.no_header,
                ..CsvSchema::default()
            };
            load_csv(path, &schema)
        }
        (None, Some(spec)) => synthetic_dataset(spec, depth, c.seed),
        (None, None) => Err(config_error("one of --data or --synthetic is required")),
        (Some(_), Some(_)) => Err(config_error("--data and --synthetic are mutually exclusive")),
    }
}

#[derive(Serialize)]
struct DatasetSummary {
    provenance: String,
    rows: usize,
    features: usize,
    classes: usize,
}

impl From<&Dataset> for DatasetSummary {
    fn from(ds: &Dataset) -> Self {
        Self {
            provenance: ds.provenance.clone(),
            rows: ds.len(),
            features: ds.feature_count(),
            classes: ds.class_count(),
        }
    }
}

#[derive(Serialize)]
struct Spectrum {
    file: String,
    sha256: String,
    lambda_min: f64,
    lambda_max: f64,
    /// Absent when the kernel is not positive definite.
    eta_critical: Option<f64>,
}

fn spectrum(file: String, m: &KernelMatrix) -> Result<Spectrum> {
    let (lambda_min, lambda_max) = extreme_eigenvalues(m)?;
    let eta_critical = match estimate_eta_critical(m) {
        Ok(v) => Some(v),
        Err(WntkError::NonPositiveDefinite { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Spectrum {
        file,
        sha256: kernel_hash(m),
        lambda_min,
        lambda_max,
        eta_critical,
    })
}

fn cmd_kernel(mut w: Writer) -> Result<Outcome> {
    let c = w.args;
    let depth = depth(c)?;
    let act = activation(c)?.unwrap_or(ActivationKind::Relu);
    let ds = dataset(c, depth)?;
    let weights = layer_weights(c, depth)?.unwrap_or_else(|| LayerWeights::ones(depth));
    let x = if c.standardize {
        let all: Vec<usize> = (0..ds.len()).collect();
        standardize_fit_transform(&ds.x, &all)?.1
    } else {
        ds.x.clone()
    };
    let shape = NetworkShape::new(ds.feature_count(), depth, act)?;
    let stack = analytic_layer_kernels(&x, &x, &shape)?;
    let ntk = stack.sum();
    let wntk = stack.weighted_sum(&weights)?;
    w.kernel("ntk", &ntk)?;
    w.kernel("wntk", &wntk)?;
    let mut layers = Vec::with_capacity(depth);
    for l in 1..=depth {
        let stem = format!("layer{l}");
        w.kernel(&stem, stack.layer(l))?;
        layers.push(spectrum(format!("{stem}.wntk"), stack.layer(l))?);
    }

    #[derive(Serialize)]
    struct Config {
        shape: NetworkShape,
        weights: LayerWeights,
        standardized: bool,
    }
    #[derive(Serialize)]
    struct Metrics {
        dataset: DatasetSummary,
        ntk: Spectrum,
        wntk: Spectrum,
        layers: Vec<Spectrum>,
    }
    let metrics = Metrics {
        dataset: (&ds).into(),
        ntk: spectrum("ntk.wntk".into(), &ntk)?,
        wntk: spectrum("wntk.wntk".into(), &wntk)?,
        layers,
    };
    let config = Config {
        shape,
        weights,
        standardized: c.standardize,
    };
    w.finish(config, metrics)
}

fn eval_config(c: &CommonArgs, depth: usize, weights: Option<LayerWeights>) -> Result<EvalConfig> {
    Ok(EvalConfig {
        depth,
        activation: activation(c)?.unwrap_or(ActivationKind::Relu),
        ridge: c.reg,
        folds: c.folds,
        seed: c.seed,
        weights,
    })
}

fn cmd_fit(w: Writer) -> Result<Outcome> {
    let c = w.args;
    let depth = depth(c)?;
    let ds = dataset(c, depth)?;
    let cfg = eval_config(c, depth, layer_weights(c, depth)?)?;
    let report = cross_validate(&ds, &cfg)?;

    #[derive(Serialize)]
    struct Metrics {
        dataset: DatasetSummary,
        cv: crate::protocol::CvReport,
    }
    let metrics = Metrics {
        dataset: (&ds).into(),
        cv: report,
    };
    w.finish(cfg, metrics)
}

fn learner_config(c: &CommonArgs, depth: usize) -> Result<WeightLearnerConfig> {
    let mut lc = WeightLearnerConfig::new(depth);
    if let Some(init) = layer_weights(c, depth)? {
        lc.init_weights = init;
    }
    lc.eta_w = c.eta_w;
    lc.ratio = c.ratio;
    lc.ridge = c.reg;
    lc.max_iters = c.iters;
    lc.patience = c.patience;
    lc.seed = c.seed;
    Ok(lc)
}

fn cmd_learn_weights(mut w: Writer) -> Result<Outcome> {
    let c = w.args;
    let depth = depth(c)?;
    let ds = dataset(c, depth)?;
    let cfg = eval_config(c, depth, None)?;
    let learner = learner_config(c, depth)?;
    let (report, traces) = cross_validate_learned(&ds, &cfg, &learner)?;
    for (k, t) in traces.iter().enumerate() {
        let p = w.path(&format!("trace_fold{k}.jsonl"));
        t.write_jsonl(BufWriter::new(fs::File::create(&p)?))?;
        w.files.push(p);
    }

    #[derive(Serialize)]
    struct Config {
        eval: EvalConfig,
        learner: WeightLearnerConfig,
    }
    #[derive(Serialize)]
    struct Metrics {
        dataset: DatasetSummary,
        learn: crate::protocol::LearnReport,
    }
    let metrics = Metrics {
        dataset: (&ds).into(),
        learn: report,
    };
    w.finish(Config { eval: cfg, learner }, metrics)
}

fn sweep_config(c: &CommonArgs, command: Command) -> Result<SweepConfig> {
    let mut cfg = match command {
        Command::VerifyStability => SweepConfig::stability_default(),
        Command::VerifyLazy => SweepConfig::lazy_default(),
        _ => SweepConfig::equivalence_default(),
    };
    if let Some(v) = &c.widths {
        cfg.widths = v.clone();
    }
    if let Some(d) = c.depth {
        cfg.depth = d;
    }
    if let Some(a) = activation(c)? {
        cfg.activation = a;
    }
    if let Some(p) = &c.parameterization {
        cfg.parameterization = Parameterization::parse(p)?;
    }
    if let Some(k) = c.kappa {
        cfg.kappa = k;
    }
    if let Some(s) = c.steps {
        cfg.steps = s;
    }
    if let Some(s) = c.seeds {
        cfg.seeds = s;
    }
    if let Some(v) = &c.weights {
        cfg.rates = Some(LayerWeights::new(v.clone())?);
    }
    if c.data.is_some() || c.synthetic.is_some() {
        return Err(config_error("the verify commands generate their own sphere data"));
    }
    cfg.seed = c.seed;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_verify(mut w: Writer) -> Result<Outcome> {
    let cfg = sweep_config(w.args, w.command)?;
    match w.command {
        Command::VerifyStability => {
            let r = verify_stability(&cfg)?;
            w.text("stability_plot.csv", &plot_csv(&r.medians))?;
            w.finish(&r.config, &r)
        }
        Command::VerifyLazy => {
            let r = verify_lazy(&cfg)?;
            w.text("lazy_plot.csv", &plot_csv(&r.medians))?;
            w.finish(&r.config, &r)
        }
        _ => {
            let r = verify_equivalence(&cfg, &EquivalenceOptions::default())?;
            w.text("equivalence_plot.csv", &plot_csv(&r.medians))?;
            w.finish(&r.config, &r)
        }
    }
}

#[derive(Serialize)]
struct BenchmarkRow {
    dataset: String,
    rows: usize,
    ntk_mean: f64,
    wntk_mean: f64,
    delta: f64,
}

fn cmd_benchmark(w: Writer) -> Result<Outcome> {
    let c = w.args;
    let depth = depth(c)?;
    let cfg = eval_config(c, depth, None)?;
    let learner = learner_config(c, depth)?;
    let sets: Vec<Dataset> = match (&c.data, &c.synthetic) {
        (None, None) => BUNDLED_DATASETS
            .iter()
            .map(|(name, _)| bundled_dataset(name))
            .collect::<Result<_>>()?,
        _ => vec![dataset(c, depth)?],
    };
    let mut rows = Vec::with_capacity(sets.len());
    for ds in &sets {
        let (r, _) = cross_validate_learned(ds, &cfg, &learner)?;
        rows.push(BenchmarkRow {
            dataset: ds.provenance.clone(),
            rows: ds.len(),
            ntk_mean: r.ntk_mean,
            wntk_mean: r.wntk_mean,
            delta: r.delta,
        });
    }

    #[derive(Serialize)]
    struct Config {
        eval: EvalConfig,
        learner: WeightLearnerConfig,
    }
    #[derive(Serialize)]
    struct Metrics {
        datasets: Vec<BenchmarkRow>,
        /// No dataset loses more than half a point.
        wntk_not_worse: bool,
        wntk_strictly_better_somewhere: bool,
    }
    let metrics = Metrics {
        wntk_not_worse: rows.iter().all(|r| r.delta >= -0.005),
        wntk_strictly_better_somewhere: rows.iter().any(|r| r.delta > 0.0),
        datasets: rows,
    };
    w.finish(Config { eval: cfg, learner }, metrics)
}
