//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 refusal or regime
//! warning under `--strict`, 4 validation failure, 1 anything else.

pub mod commands;
pub mod config;
pub mod report;
pub mod svg;

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};

use crate::acceptance;
use crate::error::Error;
use crate::tailindex::tolerance_override;
use config::ExperimentConfig;
use report::render_csv;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REFUSAL: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    TailIndex,
    Sweep,
    Simulate,
    Estimate,
    Validate,
}

#[derive(Debug, Parser)]
#[command(name = "tailscope", version, about = "Tail indices of SGD iterates under stepsize schedules")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// experiment config (key = value with [section] headers)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// overrides compute.seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// size of the worker pool
    #[arg(long)]
    pub workers: Option<usize>,
    /// treat regime warnings as failures
    #[arg(long)]
    pub strict: bool,
    /// exit 0 even when some rows are refused
    #[arg(long)]
    pub allow_refusals: bool,
    /// validate: list criteria without running them
    #[arg(long)]
    pub list: bool,
    /// validate: run only these criteria
    #[arg(long, value_delimiter = ',')]
    pub criteria: Vec<usize>,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::InvalidGrid(_) => EXIT_CONFIG,
        _ => EXIT_ERROR,
    }
}

fn fail(e: Error) -> i32 {
    eprintln!("tailscope: {e}");
    exit_code(&e)
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn validate(args: &Args) -> i32 {
    let list = acceptance::criteria();
    if args.list {
        for c in list {
            println!("{}\t{}", c.id, c.name);
        }
        return EXIT_OK;
    }
    let seed = match (&args.seed, &args.config) {
        (Some(s), _) => *s,
        (None, Some(p)) => match ExperimentConfig::load(p, None) {
            Ok(c) => c.compute.seed,
            Err(e) => return fail(e),
        },
        (None, None) => acceptance::DEFAULT_SEED,
    };
    println!("# tailscope validate seed={seed}");
    if let Some(t) = tolerance_override() {
        println!("# TAILSCOPE_TOL={t}");
    }
    let mut all = true;
    for c in list.iter().filter(|c| args.criteria.is_empty() || args.criteria.contains(&c.id)) {
        let out = c.run(seed);
        println!("{}", out.line());
        all &= out.passed;
    }
    if all {
        EXIT_OK
    } else {
        EXIT_VALIDATION
    }
}

fn run_command(args: &Args) -> i32 {
    if args.command == Command::Validate {
        return validate(args);
    }
    let Some(path) = &args.config else {
        return fail(Error::Config("--config FILE is required".into()));
    };
    let mut cfg = match ExperimentConfig::load(path, args.seed) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(w) = args.workers {
        cfg.compute.workers = Some(w);
    }
    let result = match args.command {
        Command::TailIndex => commands::tail_index(&cfg),
        Command::Sweep => commands::sweep(&cfg),
        Command::Simulate => commands::simulate(&cfg),
        Command::Estimate => commands::estimate(&cfg),
        Command::Validate => unreachable!(),
    };
    let report = match result {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    for w in &report.warnings {
        eprintln!("tailscope: {w}");
    }
    let csv = render_csv(&report.rows, tolerance_override());
    if let Err(e) = write_out(cfg.output.csv.as_ref(), &csv) {
        return fail(e);
    }
    if let Some(svg_path) = &cfg.output.svg {
        let label = match args.command {
            Command::Sweep => "swept value",
            _ => "eta_hat",
        };
        if let Err(e) = svg::svg_from_csv(&csv, label).and_then(|s| Ok(std::fs::write(svg_path, s)?)) {
            return fail(e);
        }
    }
    if report.refusals() > 0 && !args.allow_refusals {
        eprintln!("tailscope: {} row(s) refused", report.refusals());
        return EXIT_REFUSAL;
    }
    if report.regime_warning && args.strict {
        return EXIT_REFUSAL;
    }
    EXIT_OK
}

/// Parses `argv`, sizes the worker pool and runs the command.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let workers = args.workers.or_else(|| {
        args.config
            .as_ref()
            .and_then(|p| ExperimentConfig::load(p, args.seed.or(Some(0))).ok())
            .and_then(|c| c.compute.workers)
    });
    match workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| run_command(&args)),
            Err(e) => fail(Error::Config(format!("cannot build worker pool: {e}"))),
        },
        None => run_command(&args),
    }
}
