//! Command-line front end: run forecasting games, verify the inequalities a
//! log claims, produce calibration reports, and describe kernels.
//!
//! Exit codes: 0 on success (and all checks satisfied), 1 when a theorem
//! check fails, 2 on input or configuration errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use k29::diagnostics::{
    self, binned_calibration, check_eq4, check_lemma1, check_theorem1, check_theorem2_trapezoid,
    check_theorem3, lil_ratio, soft_calibration_report, theorem4_witness, Neighborhood,
    TheoremReport, TrapezoidFn,
};
use k29::kernel::psd_spot_check;
use k29::opponents::{Reality1Spec, Reality2Spec};
use k29::{play_game, GameConfig, KernelSpec, OpponentSpec, RunLog, SkepticSpec, Strategy};

#[derive(Parser)]
#[command(name = "k29", about = "Defensive forecasting: runs, verification, and reports", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play a forecasting game and write its JSONL log.
    Run(RunArgs),
    /// Recompute theorem inequalities from a log; exit 1 if any fails.
    Verify(VerifyArgs),
    /// Calibration/resolution report plus reliability plot data.
    Report(ReportArgs),
    /// Describe a kernel: norm bound, domain, and a PSD spot check.
    KernelInfo(KernelInfoArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Kernel as inline JSON or a path to a JSON file.
    #[arg(long)]
    kernel: String,
    /// Forecasting algorithm.
    #[arg(long, value_enum, default_value_t = AlgorithmArg::K29star)]
    algorithm: AlgorithmArg,
    /// Opponent as inline JSON or a path to a JSON file.
    #[arg(long)]
    opponent: String,
    /// Number of rounds to play.
    #[arg(long)]
    rounds: usize,
    /// Seed overriding the opponent components' seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Initial Skeptic capital.
    #[arg(long, default_value_t = 0.0)]
    initial_capital: f64,
    /// Output path for the JSONL log.
    #[arg(long)]
    out: PathBuf,
    /// Run this many independently seeded repetitions concurrently.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Replay CSV files start with a header line to skip.
    #[arg(long)]
    header: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Path to a JSONL run log.
    log: PathBuf,
    /// Comma-separated subset of t1,eq4,t2-trapezoid,t4-witness,t3,lemma1.
    #[arg(long, value_delimiter = ',')]
    checks: Vec<String>,
    /// Write the report JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Path to a JSONL run log.
    log: PathBuf,
    /// Number of equal-width forecast bins.
    #[arg(long, default_value_t = 10)]
    bins: usize,
    /// JSON file with a list of trapezoid neighborhoods, each either
    /// [p_minus, p_plus, eps] or {"p_minus":..,"p_plus":..,"eps":..}.
    #[arg(long)]
    neighborhoods: Option<PathBuf>,
    /// Write report JSON here (plot CSV goes next to it); stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelInfoArgs {
    /// Kernel as inline JSON or a path to a JSON file.
    #[arg(long)]
    kernel: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    K29star,
    K29,
    BaselinePrevY,
    ConstantHalf,
}

impl From<AlgorithmArg> for Strategy {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::K29star => Strategy::K29Star,
            AlgorithmArg::K29 => Strategy::K29,
            AlgorithmArg::BaselinePrevY => Strategy::BaselinePrevY,
            AlgorithmArg::ConstantHalf => Strategy::ConstantHalf,
        }
    }
}

fn main() {
    process::exit(run());
}

fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Report(args) => cmd_report(args),
        Command::KernelInfo(args) => cmd_kernel_info(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            2
        }
    }
}

/// Inline JSON (starts with '{') or the contents of a file.
fn json_or_file(input: &str) -> Result<String, k29::Error> {
    if input.trim_start().starts_with('{') {
        Ok(input.to_string())
    } else {
        Ok(fs::read_to_string(input)?)
    }
}

fn parse_kernel(input: &str) -> Result<KernelSpec, k29::Error> {
    let text = json_or_file(input)?;
    let spec: KernelSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

fn parse_opponent(input: &str) -> Result<OpponentSpec, k29::Error> {
    let text = json_or_file(input)?;
    let spec: OpponentSpec = serde_json::from_str(&text)?;
    spec.validate()?;
    Ok(spec)
}

/// Stamps the run seed into the opponent's stochastic components (distinct
/// streams per component) so the written header fully determines the run.
fn apply_seed(opponent: &mut OpponentSpec, seed: u64) {
    const STREAM2: u64 = 0x9e37_79b9_7f4a_7c15;
    match &mut opponent.reality1 {
        Reality1Spec::IidUniform { seed: s, .. } | Reality1Spec::ParityFeature { seed: s } => {
            *s = seed;
        }
        Reality1Spec::Replay { .. } => {}
    }
    match &mut opponent.reality2 {
        Reality2Spec::Bernoulli { seed: s, .. } | Reality2Spec::Logistic { seed: s, .. } => {
            *s = seed ^ STREAM2;
        }
        Reality2Spec::Replay { .. } | Reality2Spec::Adversary => {}
    }
}

fn apply_header_flag(opponent: &mut OpponentSpec) {
    if let Reality1Spec::Replay { header, .. } = &mut opponent.reality1 {
        *header = true;
    }
    if let Reality2Spec::Replay { header, .. } = &mut opponent.reality2 {
        *header = true;
    }
}

/// Inserts `.rN` before the extension for repeat batches.
fn repeat_path(base: &Path, i: usize) -> PathBuf {
    match base.extension() {
        Some(ext) => base.with_extension(format!("r{i}.{}", ext.to_string_lossy())),
        None => base.with_extension(format!("r{i}")),
    }
}

struct RunSummary {
    rounds: usize,
    drift_sq: f64,
    variance_budget: f64,
    capital_gain: f64,
}

fn execute_run(config: &GameConfig, out: &Path) -> Result<RunSummary, k29::Error> {
    let (log, trace) = play_game(config)?;
    log.save(out)?;
    Ok(RunSummary {
        rounds: log.len(),
        drift_sq: diagnostics::gram_drift_sq(&log)?,
        variance_budget: diagnostics::gram_variance_budget(&log)?,
        capital_gain: trace.values[trace.values.len() - 1] - trace.initial,
    })
}

fn cmd_run(args: RunArgs) -> Result<i32, k29::Error> {
    let kernel = parse_kernel(&args.kernel)?;
    let mut opponent = parse_opponent(&args.opponent)?;
    if args.header {
        apply_header_flag(&mut opponent);
    }
    if args.repeat == 0 {
        return Err(k29::Error::Config("--repeat must be at least 1".into()));
    }

    let base_config = GameConfig {
        kernel,
        algorithm: args.algorithm.into(),
        skeptic: SkepticSpec::K29StarEq25,
        opponent,
        rounds: args.rounds,
        initial_capital: args.initial_capital,
    };

    if args.repeat == 1 {
        let mut config = base_config;
        if let Some(seed) = args.seed {
            apply_seed(&mut config.opponent, seed);
        }
        let summary = execute_run(&config, &args.out)?;
        print_summary(&args.out, &summary);
        return Ok(0);
    }

    // Independent seeds, isolated state; only summaries are merged.
    let base_seed = args.seed.unwrap_or(0);
    let mut results: Vec<Option<Result<(PathBuf, RunSummary), k29::Error>>> =
        (0..args.repeat).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for i in 0..args.repeat {
            let mut config = base_config.clone();
            apply_seed(&mut config.opponent, base_seed.wrapping_add(i as u64));
            let out = repeat_path(&args.out, i);
            handles.push(scope.spawn(move || execute_run(&config, &out).map(|s| (out, s))));
        }
        for (slot, handle) in results.iter_mut().zip(handles) {
            *slot = Some(handle.join().expect("run thread panicked"));
        }
    });

    let mut mean_drift = 0.0;
    let mut mean_budget = 0.0;
    for slot in results {
        let (out, summary) = slot.expect("all slots filled")?;
        print_summary(&out, &summary);
        mean_drift += summary.drift_sq / args.repeat as f64;
        mean_budget += summary.variance_budget / args.repeat as f64;
    }
    println!("mean over {} runs: drift_sq {mean_drift:.6} variance_budget {mean_budget:.6}", args.repeat);
    Ok(0)
}

fn print_summary(out: &Path, s: &RunSummary) {
    println!(
        "wrote {} rounds to {} (drift_sq {:.6}, variance_budget {:.6}, capital gain {:.6})",
        s.rounds,
        out.display(),
        s.drift_sq,
        s.variance_budget,
        s.capital_gain
    );
}

const ALL_CHECKS: &[&str] = &["t1", "eq4", "t2-trapezoid", "t4-witness", "t3", "lemma1"];

/// The default trapezoid for `t2-trapezoid`: the canonical (0.4, 0.6, 0.05)
/// forecast neighborhood.
fn default_trapezoid() -> TrapezoidFn {
    TrapezoidFn::new(0.4, 0.6, 0.05).expect("canonical trapezoid is valid")
}

#[derive(Serialize)]
struct VerifyReport {
    checks: Vec<TheoremReport>,
    all_satisfied: bool,
}

fn cmd_verify(args: VerifyArgs) -> Result<i32, k29::Error> {
    let log = RunLog::load(&args.log)?;
    let selected: Vec<String> = if args.checks.is_empty() {
        ALL_CHECKS.iter().map(|s| s.to_string()).collect()
    } else {
        args.checks.clone()
    };

    let mut checks = Vec::new();
    for name in &selected {
        let report = match name.as_str() {
            "t1" => check_theorem1(&log)?,
            "eq4" => check_eq4(&log)?,
            "t2-trapezoid" => check_theorem2_trapezoid(&log, &default_trapezoid())?,
            "t4-witness" => {
                if log.is_empty() {
                    // Vacuous on an empty log: there is nothing to witness.
                    TheoremReport {
                        theorem_id: "t4".into(),
                        lhs: 0.0,
                        rhs: 0.0,
                        slack_budget: 0.0,
                        satisfied: true,
                        per_round_margins: Vec::new(),
                    }
                } else {
                    theorem4_witness(&log)?.1
                }
            }
            "t3" => check_theorem3(&log)?,
            "lemma1" => check_lemma1(&log)?,
            other => {
                return Err(k29::Error::Config(format!(
                    "unknown check {other:?}; expected a subset of {ALL_CHECKS:?}"
                )))
            }
        };
        checks.push(report);
    }

    let all_satisfied = checks.iter().all(|c| c.satisfied);
    for c in &checks {
        println!(
            "{}: {} (lhs {:.9}, rhs {:.9}, slack {:.3e})",
            c.theorem_id,
            if c.satisfied { "satisfied" } else { "FAILED" },
            c.lhs,
            c.rhs,
            c.slack_budget
        );
    }
    let report = VerifyReport { checks, all_satisfied };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(if all_satisfied { 0 } else { 1 })
}

fn parse_neighborhoods(path: &Path) -> Result<Vec<Neighborhood>, k29::Error> {
    let text = fs::read_to_string(path)?;
    let values: Vec<serde_json::Value> = serde_json::from_str(&text)?;
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.into_iter().enumerate() {
        let t: TrapezoidFn = match &v {
            serde_json::Value::Array(a) if a.len() == 3 => {
                let nums: Vec<f64> = a
                    .iter()
                    .map(|x| x.as_f64())
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| k29::Error::Input {
                        location: format!("neighborhood {i}"),
                        message: "triple entries must be numbers".into(),
                    })?;
                TrapezoidFn::new(nums[0], nums[1], nums[2])?
            }
            _ => {
                let t: TrapezoidFn = serde_json::from_value(v)?;
                TrapezoidFn::new(t.p_minus, t.p_plus, t.eps)?
            }
        };
        out.push(Neighborhood::forecast_only(t));
    }
    Ok(out)
}

#[derive(Serialize)]
struct CalibrationReport {
    rounds: usize,
    bins: Vec<diagnostics::BinRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    soft: Option<Vec<diagnostics::SoftRow>>,
    lil_ratio: Option<f64>,
}

fn cmd_report(args: ReportArgs) -> Result<i32, k29::Error> {
    let log = RunLog::load(&args.log)?;
    let bins = binned_calibration(&log, args.bins)?;
    let soft = match &args.neighborhoods {
        Some(path) => Some(soft_calibration_report(&log, &parse_neighborhoods(path)?)?),
        None => None,
    };
    let report = CalibrationReport {
        rounds: log.len(),
        bins,
        soft,
        lil_ratio: lil_ratio(&log),
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            fs::write(path, json + "\n")?;
            let mut csv = String::from("bin_center,mean_p,mean_y,count\n");
            for row in &report.bins {
                let center = (row.bin as f64 + 0.5) / args.bins as f64;
                csv.push_str(&format!("{center},{},{},{}\n", row.mean_p, row.mean_y, row.count));
            }
            let csv_path = path.with_extension("plot.csv");
            fs::write(&csv_path, csv)?;
            println!("wrote {} and {}", path.display(), csv_path.display());
        }
        None => println!("{json}"),
    }
    Ok(0)
}

fn cmd_kernel_info(args: KernelInfoArgs) -> Result<i32, k29::Error> {
    let kernel = parse_kernel(&args.kernel)?;
    let domain = match kernel.arity() {
        Some(0) => "any".to_string(),
        Some(n) => format!("[0,1] x [0,1]^{} ({} coordinates)", n - 1, n),
        None => "[0,1] x R^k (any data dimension)".to_string(),
    };
    println!("kernel: {}", serde_json::to_string(&kernel)?);
    println!("domain: {domain}");
    if let Some(n) = kernel.arity() {
        println!("dims: {n}");
    }
    println!("c_K: {:.12}", kernel.diag_sup());
    println!("c_K^2 (diagonal sup): {:.12}", kernel.diag_sup_sq());
    let psd = psd_spot_check(&kernel, 25, 20_250_801)?;
    println!("psd spot check (25 random points, tol 1e-9): {}", if psd { "pass" } else { "FAIL" });
    Ok(if psd { 0 } else { 1 })
}
