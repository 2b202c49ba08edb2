//! Orchestration behind the `polydual` binary.

pub mod check;
pub mod config;
pub mod report;

use std::path::Path;
use std::time::Instant;

use crate::dualsolver::{solve_dual, DualMode};
use crate::error::{Error, Result};
use crate::geometry::make_domain;
use crate::integrands::Entropy;
use crate::limitflow::{limit_sweep, SweepOptions};
use crate::pseudograd::{vsf_with, Displacement};
use crate::testspace::build_space;

use config::{Command, DisplacementTag, RunConfig};
use report::{
    emit_report, version_hash, write_cells_csv, write_sweep_csv, write_trace_csv, DualSummary, PrimalSummary,
    RunReport, SweepSummary, VsfSummary, SCHEMA_VERSION,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

/// Runs the configured pipeline and writes the requested artifacts.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    for p in [&cfg.output.report, &cfg.output.trace_csv, &cfg.output.cells_csv, &cfg.output.sweep_csv]
        .into_iter()
        .flatten()
    {
        check_parent(p)?;
    }
    let start = Instant::now();
    let domain = make_domain(cfg.domain.clone())?;
    let mut rep = RunReport {
        schema_version: SCHEMA_VERSION,
        version_hash: version_hash(),
        config: cfg.clone(),
        converged: true,
        validation_errors: Vec::new(),
        growth: cfg.integrand.growth(),
        dual: None,
        primal: None,
        vsf: None,
        sweep: None,
        checks: None,
        wall_clock_seconds: 0.0,
    };
    match cfg.command {
        Command::SolveCompressible | Command::SolveIncompressible => {
            let space = build_space(&domain, cfg.space_kind, cfg.level)?;
            let forcing = cfg.forcing.build(&domain);
            let mode = if cfg.command == Command::SolveCompressible {
                DualMode::compressible(Entropy::penalized(cfg.entropy_penalty))
            } else {
                DualMode::Incompressible
            };
            let out = solve_dual(mode, &forcing, &domain, &space, &cfg.integrand, &cfg.solver)?;
            if let Some(p) = &cfg.output.trace_csv {
                write_trace_csv(p, &out.trace)?;
            }
            if let Some(p) = &cfg.output.cells_csv {
                write_cells_csv(p, &domain, &out.primal)?;
            }
            rep.converged = out.converged;
            rep.dual = Some(DualSummary::from_outcome(&out, &domain));
            rep.primal = Some(PrimalSummary::from_field(&out.primal));
        }
        Command::Vsf => {
            let u = match cfg.vsf.displacement {
                DisplacementTag::Identity => Displacement::identity(&domain),
                DisplacementTag::Square => Displacement::analytic(&domain, |x| [x[0] * x[0], x[1] * x[1]]),
                DisplacementTag::Constant => Displacement::constant(&domain, [0.0, 0.0]),
            };
            let opts = cfg.vsf_options();
            let mut levels = Vec::new();
            for level in 1..=cfg.level {
                let space = build_space(&domain, cfg.space_kind, level)?;
                levels.push((level, vsf_with(&u, &space, &cfg.integrand, &domain, &opts)?.value));
            }
            let space = build_space(&domain, cfg.space_kind, cfg.level)?;
            let r = vsf_with(&u, &space, &cfg.integrand, &domain, &opts)?;
            rep.converged = r.converged;
            rep.vsf = Some(VsfSummary {
                value: r.value,
                iterations: r.iterations,
                first_order_residual: r.first_order_residual,
                converged: r.converged,
                levels,
            });
        }
        Command::LimitSweep => {
            let space = build_space(&domain, cfg.space_kind, cfg.level)?;
            let forcing = cfg.forcing.build(&domain);
            let opts = SweepOptions {
                n_values: cfg.sweep.n_values.clone(),
                solver: cfg.solver.clone(),
                warm_start: cfg.sweep.warm_start,
            };
            let res = limit_sweep(&forcing, &domain, &space, &cfg.integrand, &opts)?;
            if let Some(p) = &cfg.output.sweep_csv {
                write_sweep_csv(p, &res)?;
            }
            rep.converged = res.all_converged;
            rep.sweep = Some(SweepSummary::from_result(&res));
        }
        Command::Check => {
            let items = check::run_checks(cfg)?;
            rep.converged = items.iter().all(|i| i.passed);
            rep.checks = Some(items);
        }
    }
    rep.wall_clock_seconds = start.elapsed().as_secs_f64();
    if let Some(p) = &cfg.output.report {
        emit_report(&rep, p)?;
    }
    Ok(rep)
}

fn check_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "output directory does not exist"),
        }),
        _ => Ok(()),
    }
}

/// Process exit code for a run result.
pub fn exit_code(result: &Result<RunReport>) -> i32 {
    match result {
        Ok(r) if r.converged => EXIT_OK,
        Ok(_) => EXIT_NOT_CONVERGED,
        Err(Error::Config(_)) => EXIT_CONFIG,
        Err(_) => EXIT_CONFIG,
    }
}
