//! `drivest` command-line driver.
//!
//! Exit codes: 0 success, 1 estimation error (reported in PREFIX.json),
//! 2 usage or configuration error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use drivest::simulate::presets;

use config::{Command, Flags, RunConfig};

#[derive(Parser)]
#[command(name = "drivest", version, about = "Doubly robust IV estimation with a continuous treatment")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate effects from a CSV file.
    Estimate(Flags),
    /// First-stage diagnostics for a CSV file.
    Diagnose(Flags),
    /// Draw a dataset from a design and compute its oracle values.
    Simulate(Flags),
    /// Monte Carlo study of estimators against oracle values.
    Mc(Flags),
    /// List the shipped designs, or print one as TOML.
    Presets { name: Option<String> },
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_outputs(cfg: &RunConfig, out: &commands::Outcome) -> Result<()> {
    if let Some(dir) = cfg.output.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let write = |suffix: &str, body: &str| {
        let p = with_suffix(&cfg.output, suffix);
        std::fs::write(&p, body).with_context(|| format!("writing {}", p.display()))
    };
    write("resolved.toml", &cfg.to_toml()?)?;
    write("json", &(serde_json::to_string_pretty(&out.document)? + "\n"))?;
    write("txt", &out.text)?;
    for (suffix, body) in &out.extra {
        write(suffix, body)?;
    }
    Ok(())
}

fn execute(cfg: &RunConfig) -> Result<commands::Outcome> {
    match cfg.command {
        Command::Estimate => commands::run_estimate(cfg),
        Command::Diagnose => commands::run_diagnose(cfg),
        Command::Simulate => commands::run_simulate(cfg),
        Command::Mc => commands::run_mc(cfg),
    }
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T: Send>(_workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(f())
}

fn presets_command(name: Option<String>) -> ExitCode {
    match name {
        None => {
            for n in presets::NAMES {
                println!("{n}");
            }
            ExitCode::SUCCESS
        }
        Some(n) => match presets::preset_source(&n) {
            Ok(src) => {
                print!("{}", src.trim_start());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (command, flags) = match cli.command {
        Sub::Estimate(f) => (Command::Estimate, f),
        Sub::Diagnose(f) => (Command::Diagnose, f),
        Sub::Simulate(f) => (Command::Simulate, f),
        Sub::Mc(f) => (Command::Mc, f),
        Sub::Presets { name } => return presets_command(name),
    };
    let cfg = match config::resolve(command, &flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let outcome = match with_workers(cfg.workers, || execute(&cfg)).and_then(|r| r) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = write_outputs(&cfg, &outcome) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    print!("{}", outcome.text);
    if outcome.success {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
