//! `corrmat` command line: `predict`, `validate-kernel`, `sample`, `run`, `report`.
//!
//! Exit codes: 0 success, 2 unreadable or invalid input, 3 `theta <= 0`,
//! 4 kernel failed validation, 5 a verdict failed, 6 solver failure budget exceeded.

use clap::{Parser, Subcommand};
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::kernel::{min_embed_size, validate_kernel, FieldParams, KernelError, KernelSpec};
use crate::montecarlo::{
    fmt_f64, qq_table, read_records_csv, run_experiment, summarize, write_records_csv, RunConfig,
    RunError, SummaryReport,
};
use crate::sampler::{PreparedSampler, RngStream, SamplerKind};
use crate::theory::{exact_mean_w2, exact_var_quad, predict};

/// Overrides the worker thread count.
pub const THREADS_ENV: &str = "CORRMAT_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_THETA: i32 = 3;
pub const EXIT_INVALID_KERNEL: i32 = 4;
pub const EXIT_VERDICT: i32 = 5;
pub const EXIT_SOLVER: i32 = 6;

#[derive(Debug, Parser)]
#[command(
    name = "corrmat",
    version,
    about = "Largest eigenvalue of positive-mean correlated Gaussian matrices"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the limiting law and exact finite-n moments as JSON.
    Predict {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long)]
        n: usize,
    },
    /// Check that a kernel is a valid covariance on a torus embedding.
    ValidateKernel {
        kernel: PathBuf,
        /// Torus side (power of two); defaults to max(64, minimal admissible side).
        #[arg(long)]
        embed_size: Option<usize>,
    },
    /// Dump one field sample as text.
    Sample {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long, allow_negative_numbers = true)]
        theta: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        rep: u64,
        #[arg(long, value_enum, default_value_t = SamplerArg::Ma)]
        sampler: SamplerArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment: writes records.csv, qq.csv and summary.json.
    Run {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Recompute the summary from an existing records CSV.
    Report {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        records: PathBuf,
        /// Write summary.json here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SamplerArg {
    Ma,
    Cholesky,
    Circulant,
}

impl From<SamplerArg> for SamplerKind {
    fn from(s: SamplerArg) -> Self {
        match s {
            SamplerArg::Ma => SamplerKind::Ma,
            SamplerArg::Cholesky => SamplerKind::Cholesky,
            SamplerArg::Circulant => SamplerKind::Circulant,
        }
    }
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::new(EXIT_INPUT, e.to_string())
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn load_kernel_spec(path: &Path) -> Result<KernelSpec, CliError> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))
}

fn theta_checked(theta: f64) -> Result<f64, CliError> {
    if theta.is_finite() && theta > 0.0 {
        Ok(theta)
    } else {
        Err(CliError::new(
            EXIT_THETA,
            format!("theta must be positive, got {theta}"),
        ))
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize")
}

/// Worker count from `CORRMAT_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&k| k > 0)
}

#[derive(Debug, Serialize)]
struct PredictOutput {
    center: f64,
    alpha: f64,
    sigma2: f64,
    degenerate: bool,
    exact_var_quad: f64,
    exact_mean_w2: f64,
}

pub fn cmd_predict(kernel: &Path, theta: f64, n: usize) -> Result<String, CliError> {
    let spec = load_kernel_spec(kernel)?;
    let (kernel, _) = spec.resolve().map_err(input_err)?;
    let theta = theta_checked(theta)?;
    let p = predict(&kernel, theta, n).map_err(|e| CliError::new(EXIT_THETA, e.to_string()))?;
    Ok(to_json(&PredictOutput {
        center: p.center,
        alpha: p.alpha,
        sigma2: p.sigma2,
        degenerate: p.degenerate,
        exact_var_quad: exact_var_quad(&kernel, n),
        exact_mean_w2: exact_mean_w2(&kernel, n),
    }))
}

/// Returns the JSON report and whether the kernel is valid.
pub fn cmd_validate(kernel: &Path, embed_size: Option<usize>) -> Result<(String, bool), CliError> {
    let spec = load_kernel_spec(kernel)?;
    let (kernel, _) = spec.resolve().map_err(input_err)?;
    let size = embed_size.unwrap_or_else(|| min_embed_size(&kernel).max(64));
    let report = validate_kernel(&kernel, size).map_err(input_err)?;
    Ok((to_json(&report), report.valid))
}

pub fn cmd_sample(
    kernel: &Path,
    theta: f64,
    n: usize,
    seed: u64,
    rep: u64,
    sampler: SamplerKind,
) -> Result<String, CliError> {
    let spec = load_kernel_spec(kernel)?;
    let theta = theta_checked(theta)?;
    let params = FieldParams::from_spec(theta, &spec).map_err(|e| match e {
        KernelError::BadTheta(_) => CliError::new(EXIT_THETA, e.to_string()),
        other => input_err(other),
    })?;
    let prepared = PreparedSampler::new(sampler, &params, n).map_err(input_err)?;
    let sample = prepared.sample(&RngStream::new(seed, n, rep));
    Ok(sample.to_text(seed))
}

fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let config = RunConfig::from_json(&read_text(path)?).map_err(input_err)?;
    if !(config.theta.is_finite() && config.theta > 0.0) {
        return Err(CliError::new(
            EXIT_THETA,
            format!("theta must be positive, got {}", config.theta),
        ));
    }
    Ok(config)
}

fn qq_csv(summary: &SummaryReport, records: &[crate::montecarlo::RepRecord]) -> String {
    let mut out = String::from("n,theoretical,empirical\n");
    for (n, t, e) in qq_table(summary, records) {
        out.push_str(&format!("{n},{},{}\n", fmt_f64(t), fmt_f64(e)));
    }
    out
}

fn map_run_error(e: RunError) -> CliError {
    match e {
        RunError::FailureBudget { .. } => CliError::new(EXIT_SOLVER, e.to_string()),
        RunError::InvalidKernel(_) => CliError::new(EXIT_INVALID_KERNEL, e.to_string()),
        RunError::Kernel(KernelError::BadTheta(_)) => CliError::new(EXIT_THETA, e.to_string()),
        other => input_err(other),
    }
}

/// Runs the experiment and writes its three files into `out_dir`. Returns the summary.
pub fn cmd_run(
    config: &Path,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<SummaryReport, CliError> {
    let config = load_config(config)?;
    let output = run_experiment(&config, threads).map_err(map_run_error)?;
    fs::create_dir_all(out_dir).map_err(input_err)?;
    let mut csv = Vec::new();
    write_records_csv(&output.records, &mut csv).map_err(input_err)?;
    write_atomic(&out_dir.join("records.csv"), &csv).map_err(input_err)?;
    write_atomic(
        &out_dir.join("qq.csv"),
        qq_csv(&output.summary, &output.records).as_bytes(),
    )
    .map_err(input_err)?;
    write_atomic(
        &out_dir.join("summary.json"),
        to_json(&output.summary).as_bytes(),
    )
    .map_err(input_err)?;
    Ok(output.summary)
}

pub fn cmd_report(config: &Path, records: &Path) -> Result<SummaryReport, CliError> {
    let config = load_config(config)?;
    let file =
        fs::File::open(records).map_err(|e| input_err(format!("{}: {e}", records.display())))?;
    let records = read_records_csv(std::io::BufReader::new(file)).map_err(input_err)?;
    summarize(&config, &records).map_err(map_run_error)
}

fn verdict_code(summary: &SummaryReport) -> i32 {
    if summary.all_passed {
        EXIT_OK
    } else {
        EXIT_VERDICT
    }
}

fn print_verdicts(summary: &SummaryReport) {
    for s in &summary.sizes {
        for v in &s.verdicts {
            eprintln!(
                "[{}] n={} {}: observed {} expected {} tol {}",
                if v.passed { "pass" } else { "FAIL" },
                s.n,
                v.name,
                v.observed,
                v.expected,
                v.tolerance
            );
        }
    }
    for v in &summary.cross_size {
        eprintln!(
            "[{}] {}: observed {} expected {}",
            if v.passed { "pass" } else { "FAIL" },
            v.name,
            v.observed,
            v.expected
        );
    }
}

/// Executes a parsed command, printing to stdout/stderr; returns the exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Predict { kernel, theta, n } => cmd_predict(&kernel, theta, n).map(|json| {
            println!("{json}");
            EXIT_OK
        }),
        Command::ValidateKernel { kernel, embed_size } => {
            cmd_validate(&kernel, embed_size).map(|(json, valid)| {
                println!("{json}");
                if valid {
                    EXIT_OK
                } else {
                    EXIT_INVALID_KERNEL
                }
            })
        }
        Command::Sample {
            kernel,
            theta,
            n,
            seed,
            rep,
            sampler,
            out,
        } => cmd_sample(&kernel, theta, n, seed, rep, sampler.into()).and_then(|text| match out {
            Some(path) => write_atomic(&path, text.as_bytes())
                .map(|_| EXIT_OK)
                .map_err(input_err),
            None => {
                print!("{text}");
                Ok(EXIT_OK)
            }
        }),
        Command::Run { config, out } => cmd_run(&config, &out, threads_from_env()).map(|summary| {
            print_verdicts(&summary);
            verdict_code(&summary)
        }),
        Command::Report {
            config,
            records,
            out,
        } => cmd_report(&config, &records).and_then(|summary| {
            let json = to_json(&summary);
            match out {
                Some(path) => write_atomic(&path, json.as_bytes()).map_err(input_err)?,
                None => println!("{json}"),
            }
            print_verdicts(&summary);
            Ok(verdict_code(&summary))
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Parses `args` (including the program name) and executes.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}
