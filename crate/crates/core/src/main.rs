use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use polydual::cli::config::{load, Command};
use polydual::cli::report::to_json;
use polydual::cli::{exit_code, run, EXIT_CONFIG};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    SolveCompressible,
    SolveIncompressible,
    Vsf,
    LimitSweep,
    Check,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::SolveCompressible => Command::SolveCompressible,
            Sub::SolveIncompressible => Command::SolveIncompressible,
            Sub::Vsf => Command::Vsf,
            Sub::LimitSweep => Command::LimitSweep,
            Sub::Check => Command::Check,
        }
    }
}

/// Dual solvers, primal recovery and limit sweeps for relaxed polyconvex problems.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    command: Sub,
    /// TOML config file; see docs/config.md.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a key, e.g. `--set domain.n_cells=128` (repeatable).
    #[arg(short = 's', long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// JSON report path (same as `output.report`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker thread cap (same as `run.threads`).
    #[arg(long)]
    threads: Option<usize>,
    /// Print the report JSON to stdout.
    #[arg(long)]
    print: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command: Command = args.command.into();
    let mut overrides = args.overrides.clone();
    if let Some(p) = &args.output {
        overrides.push(format!("output.report={}", toml_string(&p.to_string_lossy())));
    }
    if let Some(t) = args.threads {
        overrides.push(format!("run.threads={t}"));
    }
    overrides.push(format!("run.command={}", toml_string(command.as_str())));
    let cfg = match load(command, args.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            report_error(&e);
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    if let Some(t) = cfg.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = run(&cfg);
    match &result {
        Ok(rep) => {
            if args.print {
                match to_json(rep) {
                    Ok(s) => print!("{s}"),
                    Err(e) => report_error(&e),
                }
            }
            let status = if rep.converged { "converged" } else { "not converged" };
            eprintln!("{status} ({:.3} s)", rep.wall_clock_seconds);
            if let Some(c) = &rep.checks {
                for i in c {
                    eprintln!("{} {}: {}", if i.passed { "PASS" } else { "FAIL" }, i.name, i.detail);
                }
            }
        }
        Err(e) => report_error(e),
    }
    ExitCode::from(exit_code(&result) as u8)
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn report_error(e: &polydual::Error) {
    match e {
        polydual::Error::Config(list) => {
            eprintln!("configuration errors:");
            for m in list {
                eprintln!("  - {m}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}
