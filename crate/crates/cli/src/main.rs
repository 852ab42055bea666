//! `qi2`: compute, analyze, render and serve QI2 results.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 data error,
//! 3 internal error.

use std::ffi::OsString;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use qi2_core::analysis::{
    detect_homogeneous, detect_ood, detect_outliers, detect_simple_subsets, homogeneous_cluster_counts,
    DetectionReport, DetectorConfig,
};
use qi2_core::container::{load_results, save_results, Results};
use qi2_core::dataset::{load_csv, load_embedding, load_idx_mnist, parse_column_list, Dataset};
use qi2_core::error::{Error, ErrorKind};
use qi2_core::export::{export_counts_csv, export_report_csv, render_heatmap};
use qi2_core::knn::{build_index, NeighborIndex};
use qi2_core::metrics::{Metric, Metrics};
use qi2_core::parallel::{threads_from_env, with_threads};
use qi2_core::pipeline::{compute, ComputeOptions};
use qi2_core::qi2::{ColumnNorm, OverflowPolicy, DEFAULT_BINS, DEFAULT_EPSILON, DEFAULT_GAMMA};
use qi2_service::{AppState, ServiceConfig, Session, DEFAULT_PORT, DEFAULT_SELECT_LIMIT};

#[derive(Parser)]
#[command(name = "qi2", version, about = "Data-quality indicators over input/output neighborhoods")]
#[command(args_override_self = true)]
struct Cli {
    /// JSON object of flags (`{"kmax": 200}`), applied before the command line.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a dataset, build the neighbor index and write a result container.
    Compute(ComputeArgs),
    /// Run detectors over a container and write JSON and CSV reports.
    Analyze(AnalyzeArgs),
    /// Render the histogram grid of a container as a grayscale PNG.
    Render(RenderArgs),
    /// Serve a container and its dataset over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV dataset (comma separated, optional header row).
    #[arg(long, requires_all = ["input_cols", "output_cols"], conflicts_with = "mnist_images")]
    csv: Option<PathBuf>,
    /// Input columns, e.g. `0,2-4,price`.
    #[arg(long, requires = "csv")]
    input_cols: Option<String>,
    #[arg(long, requires = "csv")]
    output_cols: Option<String>,
    /// Column holding class labels; may also be an output column.
    #[arg(long, requires = "csv")]
    label_col: Option<String>,
    /// MNIST IDX3 image file.
    #[arg(long, requires = "mnist_labels")]
    mnist_images: Option<PathBuf>,
    #[arg(long, requires = "mnist_images")]
    mnist_labels: Option<PathBuf>,
}

impl DataArgs {
    fn given(&self) -> bool {
        self.csv.is_some() || self.mnist_images.is_some()
    }

    fn load(&self) -> Result<Dataset, Error> {
        if let (Some(images), Some(labels)) = (&self.mnist_images, &self.mnist_labels) {
            return load_idx_mnist(images, labels);
        }
        let (Some(csv), Some(ic), Some(oc)) = (&self.csv, &self.input_cols, &self.output_cols) else {
            return Err(Error::Config("a dataset is required: --csv with --input-cols/--output-cols, or --mnist-images with --mnist-labels".into()));
        };
        let label = self
            .label_col
            .as_deref()
            .map(parse_column_list)
            .transpose()?
            .map(|mut v| {
                if v.len() != 1 {
                    return Err(Error::Config("--label-col takes exactly one column".into()));
                }
                Ok(v.remove(0))
            })
            .transpose()?;
        load_csv(csv, &parse_column_list(ic)?, &parse_column_list(oc)?, label.as_ref())
    }
}

#[derive(Args)]
struct ComputeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Largest neighborhood size.
    #[arg(long, default_value_t = 100)]
    kmax: usize,
    #[arg(long, default_value = "euclidean")]
    input_metric: Metric,
    #[arg(long, default_value = "euclidean")]
    output_metric: Metric,
    /// Relative stabilizer, scaled by the mean pair distance.
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value_t = 0.0)]
    bin_min: f64,
    /// Defaults to covering [bin-min, max(2.5, largest score)].
    #[arg(long)]
    bin_width: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_GAMMA)]
    gamma: f64,
    #[arg(long, default_value = "max")]
    column_norm: ColumnNorm,
    #[arg(long, default_value = "clamp")]
    overflow: OverflowPolicy,
    /// Skip the whole-dataset score (quadratic in n).
    #[arg(long)]
    no_global: bool,
    /// JSON detector thresholds stored as the container defaults.
    #[arg(long, value_name = "FILE")]
    detector_config: Option<PathBuf>,
    /// Also save the neighbor index for later `analyze` or `serve` runs.
    #[arg(long, value_name = "FILE")]
    index_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DetectorName {
    Outliers,
    Homogeneous,
    Ood,
    SimpleSubsets,
    ClusterCounts,
}

impl DetectorName {
    fn name(self) -> &'static str {
        match self {
            Self::Outliers => "outliers",
            Self::Homogeneous => "homogeneous",
            Self::Ood => "ood",
            Self::SimpleSubsets => "simple-subsets",
            Self::ClusterCounts => "cluster-counts",
        }
    }

    fn needs_index(self) -> bool {
        matches!(self, Self::Outliers | Self::Ood | Self::ClusterCounts)
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    results: PathBuf,
    /// Dataset the container was computed from; needed for labels and
    /// neighbor-based detectors.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    #[arg(long = "detector", required = true)]
    detectors: Vec<DetectorName>,
    /// JSON thresholds overriding the container defaults.
    #[arg(long, value_name = "FILE")]
    detector_config: Option<PathBuf>,
    /// Neighborhood sizes for cluster-counts.
    #[arg(long, value_delimiter = ',', default_value = "100,200,300,500,1000")]
    k_list: Vec<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    scale: u32,
    /// Re-normalize the counts with this exponent instead of the stored one.
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    results: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_name = "FILE")]
    index: Option<PathBuf>,
    /// Precomputed 2-D coordinates (`x,y` or `id,x,y` rows).
    #[arg(long)]
    embedding: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    port: u16,
    #[arg(long)]
    ui_dir: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SELECT_LIMIT)]
    select_limit: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Config => 1,
            ErrorKind::Data => 2,
            ErrorKind::Internal => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_failure(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

/// Turns the `--config` JSON object into flags inserted right after the
/// subcommand, so explicit command-line flags win.
fn inject_config(mut args: Vec<OsString>) -> Result<Vec<OsString>, Failure> {
    let pos = args.iter().position(|a| a == "--config");
    let path = match pos {
        Some(p) => args.get(p + 1).map(PathBuf::from),
        None => args
            .iter()
            .find_map(|a| a.to_str().and_then(|s| s.strip_prefix("--config=")).map(PathBuf::from)),
    };
    let Some(path) = path else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| config_failure(format!("cannot read config {}: {e}", path.display())))?;
    let Value::Object(map) = serde_json::from_str::<Value>(&text)
        .map_err(|e| config_failure(format!("config {}: {e}", path.display())))?
    else {
        return Err(config_failure("config must be a JSON object"));
    };
    let mut extra = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        let mut push = |v: &Value| -> Result<(), Failure> {
            match v {
                Value::Bool(true) => extra.push(flag.clone().into()),
                Value::Bool(false) | Value::Null => {}
                Value::String(s) => extra.extend([flag.clone().into(), s.into()]),
                Value::Number(n) => extra.extend([flag.clone().into(), n.to_string().into()]),
                _ => return Err(config_failure(format!("config key '{key}' has an unsupported value"))),
            }
            Ok(())
        };
        match &value {
            Value::Array(items) => items.iter().try_for_each(&mut push)?,
            v => push(v)?,
        }
    }
    let sub = args
        .iter()
        .skip(1)
        .position(|a| ["compute", "analyze", "render", "serve"].iter().any(|s| a == s))
        .map_or(args.len(), |p| p + 2);
    args.splice(sub..sub, extra);
    Ok(args)
}

fn read_detector_config(path: &Path, base: &DetectorConfig) -> Result<DetectorConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let overrides: Value = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let Value::Object(overrides) = overrides else {
        return Err(Error::Config("detector config must be a JSON object".into()));
    };
    let Value::Object(mut merged) = serde_json::to_value(base)? else {
        unreachable!("config serializes to an object")
    };
    merged.extend(overrides);
    let cfg: DetectorConfig =
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_compute(a: ComputeArgs) -> Result<(), Failure> {
    if !a.data.given() {
        return Err(config_failure("compute needs --csv or --mnist-images"));
    }
    let detectors = match &a.detector_config {
        Some(p) => read_detector_config(p, &DetectorConfig::default())?,
        None => DetectorConfig::default(),
    };
    let t = Instant::now();
    let ds = a.data.load()?;
    println!("loaded {} points ({} in, {} out) in {:.2} s", ds.len(), ds.input_dim(), ds.output_dim(), t.elapsed().as_secs_f64());
    let opts = ComputeOptions {
        metrics: Metrics::new(a.input_metric, a.output_metric),
        k_max: a.kmax,
        epsilon: a.epsilon,
        bins: a.bins,
        bin_min: a.bin_min,
        bin_width: a.bin_width,
        gamma: a.gamma,
        column_norm: a.column_norm,
        overflow: a.overflow,
        global: !a.no_global,
        detectors,
    };
    let t = Instant::now();
    let c = compute(&ds, &opts, None)?;
    println!("computed mlqi2 for k=1..={} in {:.2} s", opts.k_max, t.elapsed().as_secs_f64());
    if let Some(g) = c.results.header.global_qi2r {
        println!("QI2R(global)={g}");
    }
    save_results(&c.results, &a.out)?;
    println!("wrote {}", a.out.display());
    if let Some(p) = &a.index_out {
        c.index.save(p)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

/// Loads or builds an index covering `k` neighbors.
fn index_for(ds: &Dataset, results: &Results, path: Option<&Path>, k: usize) -> Result<NeighborIndex, Error> {
    if let Some(p) = path {
        let idx = NeighborIndex::load(p)?;
        if idx.len() == ds.len() && idx.k_max() >= k {
            return Ok(idx);
        }
        eprintln!("index {} does not cover k={k}; rebuilding", p.display());
    }
    build_index(ds, results.header.metrics.input, k.min(ds.len().saturating_sub(1)))
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Failure> {
    let ds = if a.data.given() { Some(a.data.load()?) } else { None };
    let results = load_results(&a.results, ds.as_ref().map(|d| d.fingerprint()).as_deref())?;
    let cfg = match &a.detector_config {
        Some(p) => read_detector_config(p, &results.header.detector_defaults)?,
        None => results.header.detector_defaults.clone(),
    };
    cfg.validate()?;
    let needs = |d: &&DetectorName| d.needs_index();
    let index = match (a.detectors.iter().find(needs), &ds) {
        (None, _) => None,
        (Some(d), None) => {
            return Err(config_failure(format!("the {} detector needs the dataset (--csv or --mnist-images)", d.name())))
        }
        (Some(_), Some(ds)) => {
            let mut k = results.header.k_max;
            if a.detectors.contains(&DetectorName::ClusterCounts) {
                k = k.max(a.k_list.iter().copied().max().unwrap_or(0));
            }
            Some(index_for(ds, &results, a.index.as_deref(), k)?)
        }
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Failure {
        code: 2,
        message: format!("cannot create {}: {e}", a.out_dir.display()),
    })?;
    let labels = ds.as_ref().and_then(Dataset::labels);
    let m = &results.matrix;
    for d in &a.detectors {
        let json_path = a.out_dir.join(format!("{}.json", d.name()));
        let csv_path = a.out_dir.join(format!("{}.csv", d.name()));
        let write = |path: &Path, text: String| {
            std::fs::write(path, text).map_err(|e| Failure {
                code: 2,
                message: format!("cannot write {}: {e}", path.display()),
            })
        };
        if *d == DetectorName::ClusterCounts {
            let labels = labels.ok_or_else(|| config_failure("cluster-counts needs labels"))?;
            let counts = homogeneous_cluster_counts(labels, index.as_ref().expect("index built"), &a.k_list)?;
            write(&json_path, serde_json::to_string_pretty(&counts).map_err(Error::from)?)?;
            export_counts_csv(&counts, &csv_path)?;
            let shown: Vec<String> = counts.iter().map(|(k, c)| format!("k={k}: {c}")).collect();
            println!("cluster-counts: {} -> {}", shown.join(", "), json_path.display());
            continue;
        }
        let report: DetectionReport = match d {
            DetectorName::Homogeneous => detect_homogeneous(m, &cfg)?,
            DetectorName::SimpleSubsets => detect_simple_subsets(m, &cfg)?,
            DetectorName::Ood => detect_ood(m, labels, index.as_ref().expect("index built"), &cfg)?,
            DetectorName::Outliers => detect_outliers(m, labels, index.as_ref().expect("index built"), &cfg)?,
            DetectorName::ClusterCounts => unreachable!("handled above"),
        };
        write(&json_path, report.to_json()?)?;
        export_report_csv(&report, labels, &csv_path)?;
        println!("{}: {} flagged -> {}", d.name(), report.flagged.len(), json_path.display());
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<(), Failure> {
    let results = load_results(&a.results, None)?;
    let grid = match a.gamma {
        Some(g) => results.grid.regamma(g)?,
        None => results.grid,
    };
    render_heatmap(&grid, &a.out, a.scale)?;
    println!("wrote {} ({}x{} cells, scale {})", a.out.display(), grid.k_max, grid.bins(), a.scale);
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<(), Failure> {
    let Some(results_path) = &a.results else {
        return Err(config_failure("serve needs --results"));
    };
    if !a.data.given() {
        return Err(config_failure("serve needs the dataset (--csv or --mnist-images)"));
    }
    let ds = a.data.load()?;
    let results = load_results(results_path, Some(&ds.fingerprint()))?;
    let embedding = a.embedding.as_ref().map(|p| load_embedding(p, ds.len())).transpose()?;
    let index = match &a.index {
        Some(_) => Some(index_for(&ds, &results, a.index.as_deref(), results.header.k_max)?),
        None => None,
    };
    let mut session = Session::new(results, ds, embedding)?;
    if let Some(idx) = index {
        session = session.with_index(idx);
    }
    let state = AppState::loaded(
        session,
        ServiceConfig {
            select_limit: a.select_limit,
            ui_dir: a.ui_dir,
        },
    );
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure {
        code: 3,
        message: e.to_string(),
    })?;
    println!("serving on http://{addr}");
    rt.block_on(qi2_service::serve(state, addr)).map_err(|e| Failure {
        code: 3,
        message: format!("server on {addr}: {e}"),
    })
}

fn main() -> ExitCode {
    let args = match inject_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(f) => {
            eprintln!("error: {}", f.message);
            return ExitCode::from(f.code);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = with_threads(threads_from_env(), move || match cli.command {
        Command::Compute(a) => cmd_compute(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Render(a) => cmd_render(a),
        Command::Serve(a) => cmd_serve(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
