//! `tvreg run | solve | check`.
//!
//! Exit codes: 0 on success, 2 when a certified bound is violated, 1 on any
//! operational error (bad configuration, failed parameter search, I/O).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::experiment::output::{write_atomic, write_records_csv, write_trace_csv};
use crate::experiment::{
    load_config, run_experiment, solve_single, BoundStatus, ExperimentError, LoadedConfig, RateRecord, RateReport,
    BOUND_NAMES,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_VIOLATED: i32 = 2;

pub const RECORDS_FILE: &str = "records.csv";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const SOLUTION_FILE: &str = "solution.csv";
pub const SOLVE_REPORT_FILE: &str = "solve.json";

#[derive(Debug, Parser)]
#[command(name = "tvreg", version, about = "Smoothed-TV regularization experiments with certified convergence bounds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the noise-level sweep, certify bounds, write records CSV and JSON report.
    Run(RunArgs),
    /// Choose alpha and solve for a single noise level; write the solution field.
    Solve(RunArgs),
    /// Validate the configuration and print the effective settings.
    Check(CheckArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Dotted-path override applied after parsing, e.g. `--set solver.grad_tol=1e-9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Also write the alpha-search trace as CSV.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Parses `args` (program name first) and executes, returning the exit code.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, out, err),
        Command::Solve(a) => cmd_solve(&a, out, err),
        Command::Check(a) => cmd_check(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_ERROR
        }
    }
}

fn load(config: &Path, overrides: &[String]) -> Result<LoadedConfig, String> {
    load_config(config, overrides).map_err(|e| e.to_string())
}

fn output_dir(args: &RunArgs, loaded: &LoadedConfig) -> Result<PathBuf, String> {
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&loaded.config.output_dir));
    fs::create_dir_all(&dir).map_err(|e| format!("cannot create output directory {}: {e}", dir.display()))?;
    Ok(dir)
}

fn warn_injectivity(loaded: &LoadedConfig, err: &mut dyn Write) -> Result<(), String> {
    let grid = loaded.config.build_grid().map_err(|e| e.to_string())?;
    let op = loaded.config.build_operator(&grid).map_err(|e| e.to_string())?;
    if let Some(d) = op.injectivity_diagnostic().map_err(|e| e.to_string())? {
        if d.warn {
            let _ = writeln!(
                err,
                "warning: forward operator is numerically non-injective (smallest singular value {:e})",
                d.smallest_singular_value
            );
        }
    }
    Ok(())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> crate::error::Result<()>) -> Result<Vec<u8>, String> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| e.to_string())?;
    Ok(buf)
}

fn json_bytes<S: serde::Serialize>(value: &S) -> Result<Vec<u8>, String> {
    let mut buf = serde_json::to_vec_pretty(value).map_err(|e| e.to_string())?;
    buf.push(b'\n');
    Ok(buf)
}

fn write_all(files: &[(PathBuf, Vec<u8>)]) -> Result<(), String> {
    for (path, bytes) in files {
        write_atomic(path, bytes).map_err(|e: Error| e.to_string())?;
    }
    Ok(())
}

fn mark(s: BoundStatus) -> &'static str {
    match s {
        BoundStatus::Satisfied => "ok",
        BoundStatus::Violated => "FAIL",
        BoundStatus::Skipped => "-",
    }
}

fn print_table(records: &[RateRecord], out: &mut dyn Write) {
    let _ = write!(out, "{:>10} {:>11} {:>6} {:>9} {:>5}", "delta", "alpha", "rule", "disc/delta", "band");
    for b in BOUND_NAMES {
        let _ = write!(out, " {b:>16}");
    }
    let _ = writeln!(out);
    for r in records {
        let _ = write!(
            out,
            "{:>10.4e} {:>11.4e} {:>6} {:>9.4} {:>5}",
            r.delta,
            r.alpha,
            r.strategy.to_string(),
            r.discrepancy / r.delta,
            if r.in_band { "yes" } else { "no" }
        );
        for b in BOUND_NAMES {
            let s = r
                .bound_checks
                .iter()
                .find(|c| c.name == b)
                .map_or("-", |c| mark(c.status));
            let _ = write!(out, " {s:>16}");
        }
        let _ = writeln!(out);
    }
}

fn print_fit(report: &RateReport, out: &mut dyn Write) {
    let target = serde_json::to_value(report.fit_target).unwrap_or_default();
    let target = target.as_str().unwrap_or("target");
    match (report.fitted_kappa, report.fitted_c) {
        (Some(k), Some(c)) => {
            let _ = writeln!(out, "fit: {target} ~ {c:.4e} * delta^{k:.4}");
        }
        _ => {
            let _ = writeln!(out, "fit: unavailable ({})", report.fit_error.as_deref().unwrap_or("no data"));
        }
    }
}

fn cmd_run(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    let loaded = load(&args.config, &args.overrides)?;
    warn_injectivity(&loaded, err)?;
    let report = match run_experiment(&loaded) {
        Ok(r) => r,
        Err(ExperimentError::Delta {
            delta,
            source,
            partial,
        }) => {
            if !partial.records.is_empty() {
                let _ = writeln!(err, "completed noise levels before the failure:");
                print_table(&partial.records, err);
            }
            if args.trace && !source.trace().is_empty() {
                let _ = writeln!(err, "alpha search trace for delta = {delta}:");
                for p in source.trace() {
                    let _ = writeln!(err, "  alpha = {:e}  discrepancy = {:e}", p.alpha, p.discrepancy);
                }
            }
            return Err(format!("delta = {delta}: {source}"));
        }
        Err(e) => return Err(e.to_string()),
    };
    let dir = output_dir(args, &loaded)?;
    let mut files = vec![
        (dir.join(RECORDS_FILE), csv_bytes(|b| write_records_csv(&report.records, b))?),
        (dir.join(REPORT_FILE), json_bytes(&report)?),
    ];
    if args.trace {
        files.push((dir.join(TRACE_FILE), csv_bytes(|b| write_trace_csv(&report.records, b))?));
    }
    write_all(&files)?;

    print_table(&report.records, out);
    print_fit(&report, out);
    let _ = writeln!(out, "wrote {}", files.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>().join(", "));
    if report.all_satisfied() {
        let _ = writeln!(out, "all applicable bounds satisfied");
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(out, "{} bound check(s) violated", report.violations);
        Ok(EXIT_VIOLATED)
    }
}

fn cmd_solve(args: &RunArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    let loaded = load(&args.config, &args.overrides)?;
    warn_injectivity(&loaded, err)?;
    let solved = solve_single(&loaded).map_err(|e| e.to_string())?;
    let dir = output_dir(args, &loaded)?;
    let summary = solved.summary(&loaded);
    let mut files = vec![
        (
            dir.join(SOLUTION_FILE),
            csv_bytes(|b| solved.chosen.solution.phi.write_csv(b))?,
        ),
        (dir.join(SOLVE_REPORT_FILE), json_bytes(&summary)?),
    ];
    if args.trace {
        let mut buf = Vec::new();
        let mut w = csv::Writer::from_writer(&mut buf);
        let rows = std::iter::once(["step", "alpha", "discrepancy", "iterations", "converged"].map(String::from))
            .chain(solved.chosen.trace.iter().enumerate().map(|(k, p)| {
                [
                    k.to_string(),
                    p.alpha.to_string(),
                    p.discrepancy.to_string(),
                    p.iterations.to_string(),
                    p.converged.to_string(),
                ]
            }));
        for row in rows {
            w.write_record(&row).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())?;
        drop(w);
        files.push((dir.join(TRACE_FILE), buf));
    }
    write_all(&files)?;
    let _ = writeln!(
        out,
        "delta = {:e}  rule = {}  alpha = {:e}  discrepancy = {:e}  in band = {}  optimality residual = {:e}",
        summary.delta, summary.strategy, summary.alpha, summary.discrepancy, summary.in_band, summary.optimality_residual
    );
    if !summary.converged {
        let _ = writeln!(err, "warning: solver stopped at the iteration limit before reaching grad_tol");
    }
    let _ = writeln!(out, "wrote {}", files.iter().map(|(p, _)| p.display().to_string()).collect::<Vec<_>>().join(", "));
    Ok(EXIT_OK)
}

fn cmd_check(args: &CheckArgs, out: &mut dyn Write) -> Result<i32, String> {
    let loaded = load(&args.config, &args.overrides)?;
    let text = serde_json::to_string_pretty(&loaded.echo()).map_err(|e| e.to_string())?;
    let _ = writeln!(out, "{text}");
    let _ = writeln!(out, "configuration ok: {}", loaded.path.display());
    Ok(EXIT_OK)
}
