//! `sottac` command-line front end: multi-seed runs, matched-batch
//! benchmarks, and the oracle check suite.
//!
//! Effective configuration is built as preset ← JSON file ← flags. Every
//! run writes one CSV per seed plus a manifest carrying the effective config
//! and cross-seed aggregates.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sottac::curvature::Weighting;
use sottac::env::ENV_NAMES;
use sottac::oracle::{run_check, CheckConfig, CheckName};
use sottac::trainer::{bench_matched, train, BenchRow, Method, RunResult, TrainConfig};

pub const DEFAULT_SEEDS: [u64; 5] = [42, 100, 2026, 777, 1234];
pub const CSV_HEADER: [&str; 6] = ["episode", "return", "critic_loss", "grad_norm", "screening", "wall_ns"];
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Usage errors: unknown names, unreadable config.
pub const EXIT_USAGE: i32 = 2;
/// At least one worker or check failed.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(name = "sottac", version, about = "Second-order two-timescale actor-critic experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one method on one environment for every seed.
    Run(RunArgs),
    /// Time every method on identical batches.
    Bench(RunArgs),
    /// Run the oracle invariant suite.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "cartpole")]
    pub env: String,
    /// For `bench`, a comma-separated list (default: all methods).
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    #[arg(long, value_parser = ["advantage", "q"])]
    pub weighting: Option<String>,
    #[arg(long)]
    pub normalize_adv: bool,
    #[arg(long)]
    pub enforce_step_bound: bool,
    /// Batches per seed for `bench`.
    #[arg(long, default_value_t = 50)]
    pub batches: usize,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[arg(long)]
    pub only: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Check(a) => cmd_check(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn usage_error(msg: impl std::fmt::Display) -> i32 {
    eprintln!("error: {msg}");
    eprintln!("usage: sottac run|bench|check [--env {}] [--method reinforce|natural|acgn1|acgn2] [--seeds a,b,c] ...", ENV_NAMES.join("|"));
    EXIT_USAGE
}

/// Preset for `(env, method)`, overlaid with the JSON file, then the flags.
pub fn effective_config(args: &RunArgs, method: Method) -> anyhow::Result<TrainConfig> {
    let mut value = serde_json::to_value(TrainConfig::preset(&args.env, method))?;
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let overlay: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let Some(fields) = overlay.as_object() else {
            bail!("{} must contain a JSON object", path.display());
        };
        merge(&mut value, fields);
    }
    let mut config: TrainConfig = serde_json::from_value(value).context("invalid configuration")?;
    // The file may not switch the experiment the flags name.
    config.env = args.env.clone();
    config.method = method;
    if let Some(n) = args.episodes {
        config.total_episodes = n;
    }
    if let Some(a) = args.alpha {
        config.alpha = a;
    }
    if let Some(l) = args.lambda {
        config.damping = l;
    }
    if let Some(g) = args.gamma {
        config.gamma = g;
    }
    if let Some(w) = &args.weighting {
        config.weighting = if w == "q" { Weighting::Q } else { Weighting::Advantage };
    }
    config.normalize_advantages |= args.normalize_adv;
    config.diagnostics.enforce_step_bound |= args.enforce_step_bound;
    Ok(config)
}

fn merge(base: &mut serde_json::Value, overlay: &serde_json::Map<String, serde_json::Value>) {
    for (k, v) in overlay {
        match (base.get_mut(k), v) {
            (Some(b @ serde_json::Value::Object(_)), serde_json::Value::Object(o)) => merge(b, o),
            _ => base[k] = v.clone(),
        }
    }
}

fn check_names(args: &RunArgs) -> Result<(), i32> {
    if !ENV_NAMES.contains(&args.env.as_str()) {
        return Err(usage_error(format!("unknown environment {:?}", args.env)));
    }
    if args.seeds.is_empty() {
        return Err(usage_error("at least one seed is required"));
    }
    Ok(())
}

fn worker_count(jobs: usize) -> usize {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("SOTTAC_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    jobs.min(cores).min(cap.unwrap_or(usize::MAX)).max(1)
}

fn pool(jobs: usize) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(worker_count(jobs)).build()?)
}

pub fn csv_name(method: Method, env: &str, seed: u64) -> String {
    format!("returns_{}_{env}_{seed}.csv", method.as_str())
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

pub fn write_returns_csv(path: &Path, result: &RunResult) -> anyhow::Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CSV_HEADER)?;
    for (episode, ret, batch) in result.episode_rows() {
        w.write_record([
            episode.to_string(),
            ret.to_string(),
            batch.critic_loss.to_string(),
            batch.report.grad_norm.to_string(),
            u8::from(batch.report.screening_triggered).to_string(),
            batch.report.wall_clock_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub csv: String,
    pub status: String,
    pub error: Option<String>,
    pub episodes: usize,
    pub final_mean_return: Option<f64>,
    pub episodes_to_threshold: Option<usize>,
    pub wall_seconds: f64,
    pub mean_step_ns: f64,
    pub screening_events: usize,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Aggregates {
    /// Per-episode mean return across seeds, over the episodes every seed completed.
    pub mean_return: Vec<f64>,
    pub std_return: Vec<f64>,
    pub wall_seconds_mean: f64,
    pub wall_seconds_std: f64,
    pub mean_step_ns_mean: f64,
    pub mean_step_ns_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub env: String,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub started_at: String,
    pub finished_at: String,
    /// Effective configuration; `seed` is replaced per worker.
    pub config: TrainConfig,
    pub runs: Vec<SeedRecord>,
    pub aggregates: Aggregates,
}

pub fn manifest_name(method: Method, env: &str) -> String {
    format!("manifest_{}_{env}.json", method.as_str())
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(results: &[&RunResult]) -> Aggregates {
    let mut agg = Aggregates::default();
    if results.is_empty() {
        return agg;
    }
    let len = results.iter().map(|r| r.returns.len()).min().unwrap_or(0);
    for i in 0..len {
        let column: Vec<f64> = results.iter().map(|r| r.returns[i]).collect();
        let (m, s) = mean_std(&column);
        agg.mean_return.push(m);
        agg.std_return.push(s);
    }
    let walls: Vec<f64> = results.iter().map(|r| r.summary.total_wall_ns as f64 * 1e-9).collect();
    (agg.wall_seconds_mean, agg.wall_seconds_std) = mean_std(&walls);
    let steps: Vec<f64> = results.iter().map(|r| r.summary.mean_step_ns).collect();
    (agg.mean_step_ns_mean, agg.mean_step_ns_std) = mean_std(&steps);
    agg
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

pub fn cmd_run(args: &RunArgs) -> anyhow::Result<i32> {
    if let Err(code) = check_names(args) {
        return Ok(code);
    }
    let method_name = args.method.as_deref().unwrap_or("acgn2");
    let method = match Method::parse(method_name) {
        Ok(m) => m,
        Err(e) => return Ok(usage_error(e)),
    };
    let config = match effective_config(args, method) {
        Ok(c) => c,
        Err(e) => return Ok(usage_error(format!("{e:#}"))),
    };
    if let Err(e) = config.validate() {
        return Ok(usage_error(e));
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let started_at = timestamp();

    let outcomes: Vec<(u64, Result<RunResult, sottac::trainer::TrainError>)> = pool(args.seeds.len())?.install(|| {
        args.seeds
            .par_iter()
            .map(|&seed| {
                let mut c = config.clone();
                c.seed = seed;
                (seed, train(&c))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(outcomes.len());
    let mut completed = Vec::new();
    let mut failed = false;
    for (seed, outcome) in &outcomes {
        let csv = csv_name(method, &config.env, *seed);
        let (result, error) = match outcome {
            Ok(r) => (r, None),
            Err(e) => {
                failed = true;
                log::error!("seed {seed}: {e}");
                (&*e.partial, Some(e.to_string()))
            }
        };
        write_returns_csv(&args.out.join(&csv), result)?;
        if error.is_none() {
            completed.push(result);
        }
        runs.push(SeedRecord {
            seed: *seed,
            csv,
            status: if error.is_none() { "ok" } else { "failed" }.to_string(),
            error,
            episodes: result.returns.len(),
            final_mean_return: result.summary.final_mean_return,
            episodes_to_threshold: result.summary.episodes_to_threshold,
            wall_seconds: result.summary.total_wall_ns as f64 * 1e-9,
            mean_step_ns: result.summary.mean_step_ns,
            screening_events: result.summary.screening_events,
        });
        println!(
            "{} {} seed {seed}: {} episodes, final-50 mean {}, episodes to threshold {}",
            method.as_str(),
            config.env,
            result.returns.len(),
            result.summary.final_mean_return.map_or("n/a".into(), |m| format!("{m:.2}")),
            result.summary.episodes_to_threshold.map_or("none".into(), |n| n.to_string()),
        );
    }
    let manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        env: config.env.clone(),
        method,
        seeds: args.seeds.clone(),
        started_at,
        finished_at: timestamp(),
        config: config.clone(),
        runs,
        aggregates: aggregate(&completed),
    };
    let path = args.out.join(manifest_name(method, &config.env));
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(if failed { EXIT_FAILURE } else { 0 })
}

/// Median of a non-empty slice.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn bench_name(env: &str) -> String {
    format!("bench_{env}.csv")
}

pub fn cmd_bench(args: &RunArgs) -> anyhow::Result<i32> {
    if let Err(code) = check_names(args) {
        return Ok(code);
    }
    let methods: Vec<Method> = match &args.method {
        None => Method::ALL.to_vec(),
        Some(list) => match list.split(',').map(Method::parse).collect() {
            Ok(m) => m,
            Err(e) => return Ok(usage_error(e)),
        },
    };
    let mut configs = Vec::new();
    for &m in &methods {
        match effective_config(args, m).and_then(|c| c.validate().map(|_| c).map_err(Into::into)) {
            Ok(c) => configs.push(c),
            Err(e) => return Ok(usage_error(format!("{e:#}"))),
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let per_seed: Vec<sottac::Result<Vec<BenchRow>>> = pool(args.seeds.len())?.install(|| {
        args.seeds
            .par_iter()
            .map(|&seed| {
                let seeded: Vec<TrainConfig> = configs
                    .iter()
                    .map(|c| TrainConfig { seed, ..c.clone() })
                    .collect();
                bench_matched(&seeded, args.batches)
            })
            .collect()
    });
    let mut rows = Vec::new();
    let mut failed = false;
    for (seed, r) in args.seeds.iter().zip(per_seed) {
        match r {
            Ok(mut r) => rows.append(&mut r),
            Err(e) => {
                failed = true;
                eprintln!("seed {seed}: {e}");
            }
        }
    }
    let path = args.out.join(bench_name(&args.env));
    let mut w = csv_writer(&path)?;
    w.write_record(["method", "seed", "total_seconds", "mean_step_ns"])?;
    for r in &rows {
        w.write_record([
            r.method.as_str().to_string(),
            r.seed.to_string(),
            r.total_seconds.to_string(),
            r.mean_step_ns.to_string(),
        ])?;
    }
    w.flush()?;

    let mut order: Vec<(Method, f64)> = methods
        .iter()
        .map(|&m| {
            let v: Vec<f64> = rows.iter().filter(|r| r.method == m).map(|r| r.mean_step_ns).collect();
            (m, if v.is_empty() { f64::NAN } else { median(&v) })
        })
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let ordering: Vec<String> = order
        .iter()
        .map(|(m, ns)| format!("{} ({:.3} ms)", m.as_str(), ns * 1e-6))
        .collect();
    println!("median per-update cost on {}: {}", args.env, ordering.join(" < "));
    Ok(if failed { EXIT_FAILURE } else { 0 })
}

pub fn cmd_check(args: &CheckArgs) -> anyhow::Result<i32> {
    let names: Vec<CheckName> = match &args.only {
        None => CheckName::ALL.to_vec(),
        Some(list) => match list.split(',').map(str::parse).collect::<Result<Vec<CheckName>, _>>() {
            Ok(n) => n,
            Err(e) => return Ok(usage_error(e)),
        },
    };
    let cfg = CheckConfig {
        d: args.d,
        trials: args.trials,
        seed: args.seed,
    };
    let mut all_passed = true;
    for name in names {
        match run_check(name, &cfg) {
            Ok(outcome) => {
                all_passed &= outcome.passed;
                println!("{outcome}");
            }
            Err(e) => {
                all_passed = false;
                println!("[FAIL] {name}: {e}");
            }
        }
    }
    Ok(if all_passed { 0 } else { EXIT_FAILURE })
}
