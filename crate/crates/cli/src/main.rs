//! `maxnet`: build max-approximating ReLU networks and run the error,
//! lower-bound, spectral and training experiments on them.

mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use maxnet::construct::{alpha_for_accuracy, deep_max, depth3_max, exact_max_tree, rescale_to_box};
use maxnet::lowerbound::{build_weight_graph, find_triangle, parallelotope_floor};
use maxnet::report::{spectral_csv, to_csv, write_rows, ErrorRow, SweepRow};
use maxnet::sampling::{mc_max_error, BaseSource, DistKind, DistributionSpec, NoiseKind};
use maxnet::spectral::{grid_axis, spectral_grid};
use maxnet::train::{width_sweep, SweepConfig};
use maxnet::FeedForwardNet;
use serde::Serialize;
use serde_json::json;

use output::{append_csv, deliver, RunManifest};

const EXIT_INPUT: u8 = 2;
const EXIT_USAGE: u8 = 64;
const EXIT_INTERNAL: u8 = 1;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Input(String),
    Internal(String),
}

impl CliError {
    pub fn internal(e: impl fmt::Display) -> Self {
        CliError::Internal(e.to_string())
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Input(_) => EXIT_INPUT,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<maxnet::Error> for CliError {
    fn from(e: maxnet::Error) -> Self {
        match e {
            maxnet::Error::Convergence { .. } => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "maxnet", version, about = "ReLU networks approximating the maximum function")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a network and write it as JSON.
    Construct(ConstructArgs),
    /// Append a Monte Carlo squared-error estimate for a saved network.
    Error(ErrorArgs),
    /// Weight-graph or kernel-floor analysis of a network's first layer.
    Analyze(AnalyzeArgs),
    /// Closed-form Fourier transform on a regular frequency grid.
    Spectral(SpectralArgs),
    /// Train networks of fixed depth over a list of widths.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Depth3,
    Deep,
    ExactTree,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Dist {
    Uniform,
    Gauss,
    /// Rademacher corners plus uniform noise.
    Noise,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
enum Analysis {
    WeightGraph,
    KernelFloor,
}

#[derive(Args, Serialize)]
struct ConstructArgs {
    #[arg(value_enum)]
    kind: Kind,
    #[arg(long)]
    d: usize,
    /// Weight scale. Alternatively give --epsilon.
    #[arg(long)]
    alpha: Option<f64>,
    /// Target mean squared error on the box; sets alpha.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Recursion depth of the deep construction.
    #[arg(long, default_value_t = 2)]
    k: u32,
    /// Rescale to the box [a, a+R]^d.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long = "R")]
    #[serde(rename = "R")]
    r: Option<f64>,
    /// Output file; defaults to `<kind>_d<d>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct DistArgs {
    #[arg(long, value_enum, default_value_t = Dist::Uniform)]
    dist: Dist,
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    #[arg(long = "R", default_value_t = 1.0)]
    #[serde(rename = "R")]
    r: f64,
    /// Half-width of the uniform noise for `--dist noise`.
    #[arg(long, default_value_t = 0.5)]
    noise_scale: f64,
}

impl DistArgs {
    fn spec(&self, d: usize, seed: u64) -> Result<DistributionSpec, CliError> {
        let kind = match self.dist {
            Dist::Uniform => DistKind::UniformBox { a: self.a, r: self.r, d },
            Dist::Gauss => DistKind::GaussianStd { d },
            Dist::Noise => DistKind::IidPlusNoise {
                d,
                base: BaseSource::Rademacher,
                noise: NoiseKind::Uniform,
                scale: self.noise_scale,
            },
        };
        let spec = DistributionSpec { kind, seed };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Args, Serialize)]
struct ErrorArgs {
    /// Network JSON file.
    net: PathBuf,
    /// Expected input dimension; checked against the network.
    #[arg(long)]
    d: Option<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    dist: DistArgs,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV file to append to; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct AnalyzeArgs {
    net: PathBuf,
    #[arg(value_enum)]
    analysis: Analysis,
    /// Samples for the empirical error of kernel-floor.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SpectralArgs {
    #[arg(long)]
    d: usize,
    /// Axis as start:stop:step, shared by every coordinate.
    #[arg(long)]
    grid: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct SweepArgs {
    #[arg(long)]
    depth: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, value_delimiter = ',', required = true)]
    widths: Vec<usize>,
    #[command(flatten)]
    #[serde(flatten)]
    dist: DistArgs,
    /// Held-out Monte Carlo samples per cell.
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Training seeds per width, starting at --seed.
    #[arg(long, default_value_t = 4)]
    restarts: u64,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0.5)]
    init_scale: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_net(path: &Path) -> Result<FeedForwardNet, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    FeedForwardNet::from_json(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn cmd_construct(args: &ConstructArgs) -> Result<(), CliError> {
    let alpha = match (args.alpha, args.epsilon) {
        (Some(_), Some(_)) => {
            return Err(CliError::Usage("give either --alpha or --epsilon, not both".into()))
        }
        (Some(a), None) => Some(a),
        (None, Some(eps)) => Some(alpha_for_accuracy(args.d, args.r.unwrap_or(1.0), eps)?),
        (None, None) => None,
    };
    let need_alpha = || CliError::Usage("--alpha or --epsilon is required for this construction".into());
    let mut net = match args.kind {
        Kind::Depth3 => depth3_max(args.d, alpha.ok_or_else(need_alpha)?)?,
        Kind::Deep => deep_max(args.d, alpha.ok_or_else(need_alpha)?, args.k)?,
        Kind::ExactTree => exact_max_tree(args.d)?,
    };
    if args.a.is_some() || args.r.is_some() {
        net = rescale_to_box(&net, args.a.unwrap_or(0.0), args.r.unwrap_or(1.0))?;
    }
    let name = match args.kind {
        Kind::Depth3 => "depth3",
        Kind::Deep => "deep",
        Kind::ExactTree => "exact_tree",
    };
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{name}_d{}.json", args.d)));
    let mut manifest = RunManifest::new("construct", args, None);
    deliver(Some(&out), &net.to_json(), &mut manifest)?;
    manifest.emit()?;
    let s = net.stats();
    println!(
        "depth={} width={} size={} max_abs_weight={}",
        s.depth, s.width, s.size, s.max_abs_weight
    );
    Ok(())
}

fn cmd_error(args: &ErrorArgs) -> Result<(), CliError> {
    let net = load_net(&args.net)?;
    if let Some(d) = args.d {
        if d != net.input_dim() {
            return Err(CliError::Input(format!(
                "--d {d} does not match network input dimension {}",
                net.input_dim()
            )));
        }
    }
    let dist = args.dist.spec(net.input_dim(), args.seed)?;
    let est = mc_max_error(&net, &dist, args.n)?;
    let row = [ErrorRow::new(&net, &dist, &est)];
    let mut manifest = RunManifest::new("error", args, Some(args.seed));
    match &args.out {
        Some(p) => {
            append_csv(p, &to_csv(&row)?, &write_rows(&row, false)?)?;
            manifest.outputs.push(p.clone());
        }
        None => deliver(None, &to_csv(&row)?, &mut manifest)?,
    }
    manifest.emit()
}

fn weight_graph_report(net: &FeedForwardNet) -> serde_json::Value {
    // vertices and neurons are numbered from 1
    let first = &net.layers()[0];
    let g = build_weight_graph(first);
    let d = net.input_dim();
    let removed: Vec<_> = g
        .removed_by()
        .iter()
        .map(|(&(i, j), ns)| {
            json!({
                "edge": [i + 1, j + 1],
                "neurons": ns.iter().map(|n| n + 1).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({
        "analysis": "weight-graph",
        "d": d,
        "first_layer_width": first.out_width(),
        "edge_count": g.edge_count(),
        "mantel_threshold": d * d / 4,
        "edges": g.edges().iter().map(|&(i, j)| [i + 1, j + 1]).collect::<Vec<_>>(),
        "removed": removed,
        "triangle": find_triangle(&g).map(|(i, j, k)| [i + 1, j + 1, k + 1]),
    })
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let net = load_net(&args.net)?;
    let (report, seed) = match args.analysis {
        Analysis::WeightGraph => (weight_graph_report(&net), None),
        Analysis::KernelFloor => {
            let r = parallelotope_floor(&net, args.n, args.seed)?;
            let report = json!({
                "analysis": "kernel-floor",
                "d": net.input_dim(),
                "first_layer_width": net.layers()[0].out_width(),
                "kernel": r.kernel,
                "parallelotope": r.parallelotope,
                "abs_det": r.parallelotope.abs_det(),
                "floor": r.floor,
                "empirical": r.empirical,
                "constancy_deviation": r.constancy_deviation,
                "constant_along_kernel": r.constant_along_kernel(),
                "floor_holds": r.floor_holds(),
            });
            (report, Some(args.seed))
        }
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(CliError::internal)?;
    text.push('\n');
    let mut manifest = RunManifest::new("analyze", args, seed);
    deliver(args.out.as_deref(), &text, &mut manifest)?;
    manifest.emit()
}

fn parse_grid(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CliError::Usage(format!("--grid expects start:stop:step, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse().map_err(|_| bad())?;
    }
    Ok((v[0], v[1], v[2]))
}

fn cmd_spectral(args: &SpectralArgs) -> Result<(), CliError> {
    let (start, stop, step) = parse_grid(&args.grid)?;
    let axis = grid_axis(start, stop, step)?;
    let points = spectral_grid(args.d, &axis)?;
    let mut manifest = RunManifest::new("spectral", args, None);
    deliver(args.out.as_deref(), &spectral_csv(&points)?, &mut manifest)?;
    manifest.emit()
}

fn cmd_sweep(args: &SweepArgs) -> Result<(), CliError> {
    let common = SweepConfig {
        dist: args.dist.spec(args.d, args.seed)?,
        lr: args.lr,
        batch: args.batch,
        steps: args.steps,
        init_scale: args.init_scale,
        seeds: (0..args.restarts).map(|i| args.seed.wrapping_add(i)).collect(),
        test_n: args.n,
        test_seed: args.seed ^ 0x7e57_0000_0000_0000,
    };
    let cells = width_sweep(args.depth, &args.widths, args.d, &common)?;
    for c in &cells {
        for f in &c.failures {
            eprintln!("width {}: {f}", c.width);
        }
    }
    let rows: Vec<SweepRow> = cells.iter().map(SweepRow::from).collect();
    let mut manifest = RunManifest::new("sweep", args, Some(args.seed));
    deliver(args.out.as_deref(), &to_csv(&rows)?, &mut manifest)?;
    manifest.emit()
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("MAXNET_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("MAXNET_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(CliError::internal)
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match &cli.command {
        Command::Construct(a) => cmd_construct(a),
        Command::Error(a) => cmd_error(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Spectral(a) => cmd_spectral(a),
        Command::Sweep(a) => cmd_sweep(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("maxnet: {e}");
            if matches!(e, CliError::Usage(_)) {
                eprintln!("run `maxnet --help` for usage");
            }
            ExitCode::from(e.code())
        }
    }
}
