//! `ajd`: loss measures and bounds for acyclic join dependencies.
//!
//! Exit codes: 0 success, 1 a verification or tightness check failed, 2 bad input.
//! Errors are printed to stdout as a JSON object `{"error": {"kind", "message"}}`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ajd_core::bounds::{self, BoundReport};
use ajd_core::randmodel::{self, RandomModelSpec, ScatterRow};
use ajd_core::{load_csv, verify, CsvOptions, JoinTree, LogBase, Node, Relation, Schema};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

const TOOL: &str = "ajd";
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "ajd", version, about = "Loss measures and bounds for acyclic join dependencies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report J, rho and every bound for a relation and a join tree.
    Analyze(AnalyzeArgs),
    /// Analyze the N-tuple diagonal relation, for which J = log(1 + rho).
    Tightness(TightnessArgs),
    /// Mutual information against log(1 + rho) for random relations of fixed rho.
    Scatter(ScatterArgs),
    /// Empirical coverage of the high-probability bounds under the random relation model.
    Montecarlo(MonteCarloArgs),
    /// Randomized self-checks against the brute-force reference implementations.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Relation as CSV with a header row.
    #[arg(long)]
    relation: PathBuf,
    /// Join tree as JSON.
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Unit of log-valued fields: `e` (nats) or `2` (bits).
    #[arg(long, default_value = "e")]
    base: LogBase,
    /// Root node of the depth-first order (default: the tree's root, else node 0).
    #[arg(long)]
    root: Option<u32>,
    /// Use the values observed in the relation as the domains of attributes the tree does not declare.
    #[arg(long)]
    infer_domains: bool,
    /// The CSV has no header; columns are named X1..Xn.
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TightnessArgs {
    /// Number of tuples, at least 2.
    #[arg(long)]
    n: u32,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value = "e")]
    base: LogBase,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScatterArgs {
    /// Domain sizes d = d_A = d_B, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    d: Vec<u32>,
    /// Target spurious ratios, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,3")]
    rho: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    /// CSV destination; a JSON header is written next to it as `<out>.json`.
    /// Without it the CSV goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MonteCarloArgs {
    #[arg(long)]
    d_a: u32,
    #[arg(long)]
    d_b: u32,
    #[arg(long, default_value_t = 1)]
    d_c: u32,
    /// Tuples per relation.
    #[arg(long)]
    n: u64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-trial CSV destination; the summary is also written to `<out>.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run a reduced number of cases.
    #[arg(long)]
    quick: bool,
    /// Replace the join counter with a known-wrong one; the run must then fail.
    #[arg(long)]
    inject_fault: bool,
}

#[derive(Debug)]
enum CliError {
    Core(ajd_core::Error),
    Io { path: PathBuf, message: String },
    Usage(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Io { .. } => "io",
            CliError::Usage(_) => "usage",
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Core(e) => e.to_string(),
            CliError::Io { path, message } => format!("{}: {message}", path.display()),
            CliError::Usage(m) => m.clone(),
        }
    }
}

impl From<ajd_core::Error> for CliError {
    fn from(e: ajd_core::Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Whether a command's own checks passed.
enum Outcome {
    Pass,
    Fail,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log_base: Option<LogBase>,
    delta: Option<f64>,
    #[serde(flatten)]
    body: T,
}

fn envelope<'a, T: Serialize>(command: &'a str, seed: Option<u64>, log_base: Option<LogBase>, delta: Option<f64>, body: T) -> Envelope<'a, T> {
    Envelope { tool: TOOL, version: VERSION, command, seed, log_base, delta, body }
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Core(e.into()))?;
    s.push('\n');
    Ok(s)
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

fn write(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

/// Writes to `out` if given, else to stdout.
fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[derive(Serialize)]
struct AnalyzeBody<'a> {
    relation: String,
    tree: String,
    report: &'a BoundReport,
}

fn analyze(args: &AnalyzeArgs) -> CliResult<Outcome> {
    let tree = JoinTree::from_json(&read(&args.tree)?)?;
    let options = CsvOptions { header: !args.no_header, domains: tree.domains().cloned(), ..CsvOptions::default() };
    let text = read(&args.relation)?;
    let mut relation = load_csv(text.as_bytes(), &options)?;
    if args.infer_domains {
        relation = relation.with_observed_domains();
    }
    let root = args.root.unwrap_or_else(|| tree.default_root());
    let order = tree.dfs_order(root)?;
    let report = bounds::schema_upper_bound(&tree, &relation, args.delta, &order)?.in_base(args.base);
    let body = AnalyzeBody {
        relation: args.relation.display().to_string(),
        tree: args.tree.display().to_string(),
        report: &report,
    };
    emit(args.out.as_deref(), &to_json(&envelope("analyze", None, Some(args.base), Some(args.delta), body))?)?;
    Ok(Outcome::Pass)
}

/// `{(i, i) : i < n}` over `A, B` with domains of size `n`, and the tree `{A} - {B}`.
fn diagonal(n: u32) -> CliResult<(Relation, JoinTree)> {
    let schema = Schema::with_sizes(&[("A", n), ("B", n)])?;
    let relation = Relation::from_rows(schema, (0..n).map(|i| [i, i]))?;
    let tree = JoinTree::new(vec![Node::new(0, &["A"]), Node::new(1, &["B"])], vec![(0, 1)])?;
    Ok((relation, tree))
}

#[derive(Serialize)]
struct TightnessBody<'a> {
    n: u32,
    /// `log(1 + ρ) - J` in the report's base.
    gap: f64,
    tolerance: f64,
    pass: bool,
    report: &'a BoundReport,
}

fn tightness(args: &TightnessArgs) -> CliResult<Outcome> {
    if args.n < 2 {
        return Err(CliError::Usage(format!("--n must be at least 2, got {}", args.n)));
    }
    let (relation, tree) = diagonal(args.n)?;
    let order = tree.default_order();
    let report = bounds::schema_upper_bound(&tree, &relation, args.delta, &order)?.in_base(args.base);
    let gap = report.log1p_rho - report.j;
    let tolerance = 1e-9;
    let pass = gap.abs() <= tolerance && report.rho == f64::from(args.n - 1);
    let body = TightnessBody { n: args.n, gap, tolerance, pass, report: &report };
    emit(args.out.as_deref(), &to_json(&envelope("tightness", None, Some(args.base), Some(args.delta), body))?)?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

#[derive(Serialize)]
struct ScatterConfig {
    d: u32,
    rho_target: f64,
    n: u64,
    seed: u64,
    trials: usize,
    /// Median of `log(1 + ρ_target) - I` over trials, nats.
    median_gap: f64,
    mean_rho: f64,
}

#[derive(Serialize)]
struct ScatterBody {
    trials: usize,
    d: Vec<u32>,
    rho: Vec<f64>,
    columns: Vec<&'static str>,
    configs: Vec<ScatterConfig>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        (xs[m - 1] + xs[m]) / 2.0
    }
}

fn scatter(args: &ScatterArgs) -> CliResult<Outcome> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let mut rows: Vec<ScatterRow> = Vec::new();
    let mut configs = Vec::new();
    for &d in &args.d {
        let batch = randmodel::scatter_experiment(d, &args.rho, args.trials, args.seed, args.delta)?;
        for (k, chunk) in batch.chunks(args.trials).enumerate() {
            configs.push(ScatterConfig {
                d,
                rho_target: args.rho[k],
                n: chunk[0].result.n,
                seed: randmodel::scatter_seed(args.seed, d, k),
                trials: chunk.len(),
                median_gap: median(chunk.iter().map(ScatterRow::gap).collect()),
                mean_rho: chunk.iter().map(|r| r.result.rho).sum::<f64>() / chunk.len() as f64,
            });
        }
        rows.extend(batch);
    }
    let mut csv = Vec::new();
    randmodel::write_scatter_csv(&mut csv, &rows)?;
    match &args.out {
        Some(out) => {
            write(out, &csv)?;
            let mut columns = randmodel::TRIAL_COLUMNS.to_vec();
            columns.extend(["rho_target", "log1p_rho_target"]);
            let body = ScatterBody { trials: args.trials, d: args.d.clone(), rho: args.rho.clone(), columns, configs };
            let json = to_json(&envelope("scatter", Some(args.seed), Some(LogBase::E), Some(args.delta), body))?;
            write(&sidecar(out), json.as_bytes())?;
            print!("{json}");
        }
        None => emit(None, &String::from_utf8_lossy(&csv))?,
    }
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct MonteCarloBody<'a> {
    trials_csv: Option<String>,
    columns: Vec<&'static str>,
    summary: &'a randmodel::MonteCarloSummary,
}

fn montecarlo(args: &MonteCarloArgs) -> CliResult<Outcome> {
    let spec = RandomModelSpec::mvd(args.d_a, args.d_b, args.d_c, args.n, args.seed, args.trials)?;
    let results = randmodel::run_mvd_trials(&spec, args.delta)?;
    let summary = randmodel::summarize(&spec, args.delta, &results);
    let body = MonteCarloBody {
        trials_csv: args.out.as_ref().map(|p| p.display().to_string()),
        columns: randmodel::TRIAL_COLUMNS.to_vec(),
        summary: &summary,
    };
    let json = to_json(&envelope("montecarlo", Some(args.seed), Some(LogBase::E), Some(args.delta), body))?;
    if let Some(out) = &args.out {
        let mut csv = Vec::new();
        randmodel::write_trials_csv(&mut csv, &results)?;
        write(out, &csv)?;
        write(&sidecar(out), json.as_bytes())?;
    }
    print!("{json}");
    Ok(Outcome::Pass)
}

#[derive(Serialize)]
struct VerifyBody<'a> {
    report: &'a verify::VerifyReport,
}

fn run_verify(args: &VerifyArgs) -> CliResult<Outcome> {
    let report = verify::run(verify::VerifyOptions { seed: args.seed, quick: args.quick, inject_fault: args.inject_fault });
    print!("{}", to_json(&envelope("verify", Some(args.seed), None, None, VerifyBody { report: &report }))?);
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var("AJD_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("AJD_THREADS must be a positive integer, got `{value}`")))?;
    // Fails only if a global pool already exists, which is harmless.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn error_json(e: &CliError) -> String {
    let v = serde_json::json!({ "error": { "kind": e.kind(), "message": e.message() }, "tool": TOOL, "version": VERSION });
    format!("{}\n", serde_json::to_string_pretty(&v).unwrap_or_default())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let text = e.to_string();
            let first = text.lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            print!("{}", error_json(&CliError::Usage(first)));
            return ExitCode::from(2);
        }
    };
    let result = configure_threads().and_then(|()| match &cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Tightness(a) => tightness(a),
        Command::Scatter(a) => scatter(a),
        Command::Montecarlo(a) => montecarlo(a),
        Command::Verify(a) => run_verify(a),
    });
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(1),
        Err(e) => {
            print!("{}", error_json(&e));
            ExitCode::from(2)
        }
    }
}
