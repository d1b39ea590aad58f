use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::bounds::{
    covering_transfer_bound, gaussian_transfer_bound, kway_sshot_bound, surrogate_multimargin_bound, vc_transfer_bound,
    BoundInputs, BoundReport,
};
use crate::complexity::{
    dudley_bound, entropy_integral, gaussian_complexity_mc, greedy_epsilon_cover, massart_bound, rademacher_complexity_mc,
    ComplexityEstimate, FunctionValueMatrix,
};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::experiment::{bound_validity_experiment, results_to_csv_string, sweep, write_rows, SweepAxis};

pub const SEED_ENV: &str = "METAMARGIN_SEED";
pub const OUTPUT_DIR_ENV: &str = "METAMARGIN_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "metamargin", version, about = "Margin-based transfer bounds and their Monte Carlo validation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate one bound from its inputs and print the report as JSON.
    Bound(BoundArgs),
    /// Complexity estimates for a function-value matrix stored as CSV.
    Estimate(EstimateArgs),
    /// Run a bound-validity experiment and write one CSV row per trial.
    Simulate(SimulateArgs),
    /// Run one experiment per value of an axis and write one CSV row per value.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CliBoundKind {
    Vc,
    Gaussian,
    Covering,
    Surrogate,
    KwaySshot,
}

#[derive(Debug, Args)]
struct BoundArgs {
    #[arg(long)]
    k: usize,
    #[arg(long)]
    rho: f64,
    #[arg(long)]
    m: usize,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    v: usize,
    #[arg(long)]
    b: f64,
    #[arg(long)]
    delta: f64,
    /// Average empirical margin loss, or multi-margin loss for `surrogate`.
    #[arg(long)]
    avg_loss: f64,
    #[arg(long, default_value_t = std::f64::consts::E)]
    c0: f64,
    #[arg(long, value_enum, default_value = "vc")]
    kind: CliBoundKind,
    #[arg(long)]
    gamma_meta: Option<f64>,
    #[arg(long)]
    gamma_task: Option<f64>,
    #[arg(long)]
    integral_meta: Option<f64>,
    #[arg(long)]
    integral_task: Option<f64>,
    #[arg(long)]
    s: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Matrix CSV: `# b=<bound>`, a header row, then `label,v1,..,vM` rows.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = crate::complexity::DEFAULT_DRAWS)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 12)]
    levels: usize,
    /// Also report the greedy cover size at this radius.
    #[arg(long)]
    cover_eps: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_enum)]
    axis: SweepAxis,
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    values: Vec<f64>,
}

#[derive(Debug, Serialize)]
struct EstimateReport {
    rows: usize,
    cols: usize,
    b: f64,
    gaussian: ComplexityEstimate,
    rademacher: ComplexityEstimate,
    massart: f64,
    entropy_integral: f64,
    dudley_bound: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    cover_size: Option<usize>,
}

/// Runs the command line and returns the process exit code.
///
/// 0 on success, 2 for bad flags or configs, 3 for numeric failures and
/// infeasible inputs, 1 for I/O errors.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Bound(args) => run_bound(&args),
        Command::Estimate(args) => run_estimate(&args),
        Command::Simulate(args) => run_simulate(&args),
        Command::Sweep(args) => run_sweep(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidParameter(_) | Error::Config(_) | Error::Json(_) | Error::Csv(_) => EXIT_USAGE,
        Error::NumericFailure(_) | Error::Infeasible(_) | Error::MissingClass { .. } => EXIT_NUMERIC,
        Error::Io(_) => EXIT_IO,
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn required(value: Option<f64>, flag: &str, kind: &str) -> Result<f64> {
    value.ok_or_else(|| Error::InvalidParameter(format!("--{flag} is required for --kind {kind}")))
}

fn run_bound(args: &BoundArgs) -> Result<()> {
    let inputs = BoundInputs::new(args.k, args.rho, args.delta, args.m, args.n, args.v, args.b)?.with_c0(args.c0)?;
    let report: BoundReport<f64> = match args.kind {
        CliBoundKind::Vc => vc_transfer_bound(&inputs, args.avg_loss)?,
        CliBoundKind::Gaussian => gaussian_transfer_bound(
            &inputs,
            args.avg_loss,
            required(args.gamma_meta, "gamma-meta", "gaussian")?,
            required(args.gamma_task, "gamma-task", "gaussian")?,
        )?,
        CliBoundKind::Covering => covering_transfer_bound(
            &inputs,
            args.avg_loss,
            required(args.integral_meta, "integral-meta", "covering")?,
            required(args.integral_task, "integral-task", "covering")?,
        )?,
        CliBoundKind::Surrogate => surrogate_multimargin_bound(&inputs, args.avg_loss)?,
        CliBoundKind::KwaySshot => {
            let (Some(s), Some(q)) = (args.s, args.q) else {
                return Err(Error::InvalidParameter("--s and --q are required for --kind kway-sshot".into()));
            };
            kway_sshot_bound(&inputs, args.avg_loss, s, q)?
        }
    };
    print_json(&report)
}

fn run_estimate(args: &EstimateArgs) -> Result<()> {
    let a = FunctionValueMatrix::<f64>::read_csv(&args.input)?;
    let report = EstimateReport {
        rows: a.n_rows(),
        cols: a.n_cols(),
        b: a.bound(),
        gaussian: gaussian_complexity_mc(&a, args.draws, args.seed)?,
        rademacher: rademacher_complexity_mc(&a, args.draws, args.seed)?,
        massart: massart_bound(&a),
        entropy_integral: entropy_integral(&a, args.levels)?,
        dudley_bound: dudley_bound(&a, args.levels)?,
        cover_size: args.cover_eps.map(|eps| greedy_epsilon_cover(&a, eps)).transpose()?.map(|c| c.size()),
    };
    print_json(&report)
}

/// Loads the config and applies overrides: flags, then config, then environment.
fn resolve(run: &RunArgs, default_file: &str) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::from_path(&run.config)?;
    let env_seed = match std::env::var(SEED_ENV) {
        Ok(text) => Some(
            text.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer (got {text:?})")))?,
        ),
        Err(_) => None,
    };
    config.seed = run.seed.or(config.seed).or(env_seed);
    let output = run
        .output
        .clone()
        .or_else(|| config.output.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(|dir| Path::new(&dir).join(default_file)))
        .unwrap_or_else(|| PathBuf::from(default_file));
    config.output = Some(output.clone());
    Ok((config, output))
}

fn with_threads<T: Send>(threads: Option<usize>, job: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match threads {
        None => job(),
        Some(0) => Err(Error::InvalidParameter("--threads must be positive".into())),
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(job),
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let (config, output) = resolve(&args.run, "results.csv")?;
    let outcome = with_threads(args.run.threads, || bound_validity_experiment(&config))?;
    std::fs::write(&output, results_to_csv_string(&outcome.rows())?)?;
    for f in &outcome.failures {
        eprintln!("trial {} failed: {}", f.trial, f.error);
    }
    print_json(&outcome.summary)?;
    if outcome.summary.completed == 0 {
        return Err(Error::NumericFailure("every trial failed".into()));
    }
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let (config, output) = resolve(&args.run, "sweep.csv")?;
    let rows = with_threads(args.run.threads, || sweep(&config, args.axis, &args.values))?;
    let mut buf = Vec::new();
    write_rows(&rows, &mut buf)?;
    std::fs::write(&output, buf)?;
    for r in rows.iter().filter(|r| r.status != "ok") {
        eprintln!("{} = {} failed: {}", r.axis, r.value, r.error);
    }
    print_json(&rows)
}
