// Copyright 2026 The snapsafe Authors
// SPDX-License-Identifier: Apache-2.0

//! `snapsafe` command-line front end.
//!
//! Exit codes: 0 success, 2 usage/parse/IO error, 3 outcome failure
//! (scenario verdict differs from its expectation, or duplicates found by
//! `check`).

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use snapsafe::harness::{self, BenchConfig, EntropyChoice, Scenario, Verdict, Workload};
use snapsafe::vm_sim::EventLog;

const EXIT_USAGE: u8 = 2;
const EXIT_FAILED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "snapsafe", version, about = "Clone-safe randomness simulator and harness")]
struct Cli {
    /// Seed for the simulation and the test entropy source.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file (or a packaged scenario by name) and check the
    /// uniqueness of everything it emitted.
    Run {
        scenario: String,
        /// Write the event log to this file (`-` for standard output).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Check an event log for duplicate emitted values.
    Check { log_file: PathBuf },
    /// Measure guard-check overhead or reseed cost.
    Bench {
        workload: Workload,
        /// Only run the unguarded variant.
        #[arg(long)]
        no_guard: bool,
        /// Timed operations per variant.
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long, default_value = "test")]
        entropy: EntropyChoice,
        #[arg(long, default_value_t = harness::bench::DEFAULT_BATCHES)]
        batches: usize,
        /// Bytes per generate call for the drbg workload.
        #[arg(long, default_value_t = harness::bench::DRBG_REQUEST_BYTES)]
        request_bytes: usize,
    },
    /// Print the mechanism/feature matrix.
    Matrix,
    /// List packaged scenarios.
    Scenarios,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("snapsafe: {msg}");
    ExitCode::from(code)
}

fn load_scenario(arg: &str) -> Result<(String, String), String> {
    match fs::read_to_string(arg) {
        Ok(text) => Ok((arg.to_string(), text)),
        Err(e) => match harness::packaged(arg) {
            Some(text) => Ok((format!("packaged:{arg}"), text.to_string())),
            None => Err(format!("cannot read scenario `{arg}`: {e}")),
        },
    }
}

fn run(arg: &str, log_path: Option<PathBuf>, seed: Option<u64>) -> ExitCode {
    let (source, text) = match load_scenario(arg) {
        Ok(v) => v,
        Err(e) => return fail(EXIT_USAGE, e),
    };
    let scenario = match Scenario::parse(&text) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_USAGE, format!("{source}: {e}")),
    };
    let run = harness::run_scenario(&scenario, seed);
    let to_stdout = log_path.as_deref().is_some_and(|p| p.as_os_str() == "-");
    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    match &log_path {
        Some(_) if to_stdout => {
            if let Err(e) = run.log.write_to(&mut out) {
                return fail(EXIT_USAGE, format!("writing log: {e}"));
            }
        }
        Some(path) => {
            let written = fs::File::create(path)
                .and_then(|f| run.log.write_to(io::BufWriter::new(f)));
            if let Err(e) = written {
                return fail(EXIT_USAGE, format!("{}: {e}", path.display()));
            }
        }
        None => {}
    }
    // Keep the report parseable as log comments when the log shares stdout.
    let prefix = if to_stdout { "# " } else { "" };
    for line in run.to_string().lines() {
        let _ = writeln!(out, "{prefix}{line}");
    }
    let _ = out.flush();
    if run.matches_expectation() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_FAILED)
    }
}

fn check(path: &PathBuf) -> ExitCode {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    let log = match EventLog::parse(&text) {
        Ok(l) => l,
        Err(e) => return fail(EXIT_USAGE, format!("{}: {e}", path.display())),
    };
    let report = harness::check_uniqueness(&log.emissions());
    print!("{report}");
    match report.verdict() {
        Verdict::Unique => ExitCode::SUCCESS,
        Verdict::Duplicates => ExitCode::from(EXIT_FAILED),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run { scenario, log } => run(&scenario, log, cli.seed),
        Command::Check { log_file } => check(&log_file),
        Command::Bench {
            workload,
            no_guard,
            iters,
            entropy,
            batches,
            request_bytes,
        } => {
            let mut config = BenchConfig::new(workload);
            config.guard = !no_guard;
            config.entropy = entropy;
            config.batches = batches;
            config.request_bytes = request_bytes;
            config.seed = cli.seed.unwrap_or(0);
            if let Some(n) = iters {
                config.iters = n;
            }
            match harness::bench(&config) {
                Ok(report) => {
                    print!("{report}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_USAGE, e),
            }
        }
        Command::Matrix => {
            print!("{}", harness::feature_matrix());
            ExitCode::SUCCESS
        }
        Command::Scenarios => {
            for (name, text) in harness::PACKAGED {
                let title = Scenario::parse(text).map(|s| s.name).unwrap_or_default();
                println!("{name}\t{title}");
            }
            ExitCode::SUCCESS
        }
    }
}
