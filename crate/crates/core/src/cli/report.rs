//! Run reports: JSON with floats at 17 significant digits, plus CSV traces.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::dualsolver::{SolveOutcome, TraceRow};
use crate::error::{Error, Result};
use crate::geometry::Domain;
use crate::integrands::Growth;
use crate::limitflow::{sweep_csv, BetaBound, SweepResult};
use crate::linalg::Point;
use crate::primal::{PrimalField, Selection};

pub const SCHEMA_VERSION: u32 = 1;

const SOURCES: &[&str] = &[
    include_str!("../dualsolver.rs"),
    include_str!("../envelope.rs"),
    include_str!("../geometry.rs"),
    include_str!("../integrands.rs"),
    include_str!("../limitflow.rs"),
    include_str!("../linalg.rs"),
    include_str!("../primal.rs"),
    include_str!("../pseudograd.rs"),
    include_str!("../testspace.rs"),
    include_str!("../transforms.rs"),
];

/// SHA-256 of the package version and the numerical sources, hex encoded.
pub fn version_hash() -> String {
    let mut h = Sha256::new();
    h.update(env!("CARGO_PKG_VERSION").as_bytes());
    for s in SOURCES {
        h.update(s.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSummary {
    pub j_value: f64,
    pub iterations: usize,
    pub relative_gap: f64,
    pub converged: bool,
    pub trace_rows: usize,
    pub final_trace_j: Option<f64>,
    pub s_l_min: f64,
    pub s_l_max: f64,
    pub lipschitz: f64,
    pub r_star: f64,
    pub tightening_increase: f64,
    pub lower_bound_margin: f64,
    pub temperature_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrimalSummary {
    pub i_value: f64,
    pub vsf_value: f64,
    pub gap: f64,
    pub mass_defect: f64,
    /// `gap >= -mass_defect - 1e-6`.
    pub weak_duality_ok: bool,
    pub pushforward_errors: Vec<(String, f64)>,
    pub max_pushforward_error: f64,
    pub tie_count: usize,
    pub tie_fraction: f64,
    pub min_beta: f64,
    pub selection: Selection,
    pub u: Vec<Point>,
    pub beta: Option<Vec<f64>>,
}

impl PrimalSummary {
    pub fn from_field(p: &PrimalField) -> Self {
        Self {
            i_value: p.i_value,
            vsf_value: p.vsf_value,
            gap: p.gap,
            mass_defect: p.mass_defect,
            weak_duality_ok: p.gap >= -p.mass_defect - 1e-6,
            max_pushforward_error: p.max_pushforward_error(),
            pushforward_errors: p.pushforward_errors.clone(),
            tie_count: p.tie_count,
            tie_fraction: p.tie_fraction,
            min_beta: p.min_beta(),
            selection: p.selection,
            u: p.u.values.clone(),
            beta: p.beta.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsfSummary {
    pub value: f64,
    pub iterations: usize,
    pub first_order_residual: f64,
    pub converged: bool,
    pub levels: Vec<(u32, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: u32,
    pub j_value: f64,
    pub i_value: f64,
    pub beta_l2: f64,
    pub beta_bound: f64,
    pub l1_to_baseline: f64,
    pub relative_gap: f64,
    pub tie_fraction: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub baseline_i: f64,
    pub baseline_j: f64,
    pub baseline_gap: f64,
    pub bound: BetaBound,
    pub ratios: Vec<f64>,
    pub dual_monotone: bool,
    pub within_r_bounds: bool,
}

impl SweepSummary {
    pub fn from_result(r: &SweepResult) -> Self {
        Self {
            rows: r
                .entries
                .iter()
                .map(|e| SweepRow {
                    n: e.n,
                    j_value: e.j_value,
                    i_value: e.i_value,
                    beta_l2: e.beta_l2,
                    beta_bound: e.beta_bound,
                    l1_to_baseline: e.l1_to_baseline,
                    relative_gap: e.relative_gap,
                    tie_fraction: e.primal.tie_fraction,
                    converged: e.converged,
                })
                .collect(),
            baseline_i: r.baseline_i,
            baseline_j: r.baseline_point.j_value,
            baseline_gap: r.baseline_primal.gap,
            bound: r.bound,
            ratios: r.ratios.clone(),
            dual_monotone: r.dual_monotone,
            within_r_bounds: r.within_r_bounds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub version_hash: String,
    pub config: RunConfig,
    pub converged: bool,
    pub validation_errors: Vec<String>,
    pub growth: Growth,
    pub dual: Option<DualSummary>,
    pub primal: Option<PrimalSummary>,
    pub vsf: Option<VsfSummary>,
    pub sweep: Option<SweepSummary>,
    pub checks: Option<Vec<CheckItem>>,
    pub wall_clock_seconds: f64,
}

impl DualSummary {
    pub fn from_outcome(o: &SolveOutcome, domain: &Domain) -> Self {
        Self {
            j_value: o.point.j_value,
            iterations: o.iterations,
            relative_gap: o.relative_gap,
            converged: o.converged,
            trace_rows: o.trace.len(),
            final_trace_j: o.trace.last().map(|t| t.j),
            s_l_min: o.s_l_min,
            s_l_max: o.s_l_max,
            lipschitz: o.point.k.lipschitz(),
            r_star: domain.r_star,
            tightening_increase: o.tightening_increase,
            lower_bound_margin: o.lower_bound_margin,
            temperature_scale: o.temperature_scale,
        }
    }
}

/// Writes finite floats with 17 significant digits, which round-trips every `f64`.
struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn from_json(text: &str) -> Result<RunReport> {
    Ok(serde_json::from_str(text)?)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

pub fn emit_report(report: &RunReport, path: &Path) -> Result<()> {
    write_file(path, &to_json(report)?)
}

pub fn read_report(path: &Path) -> Result<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    from_json(&text)
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut s = String::from("iter,j,gap_estimate,s_l,step\n");
    for t in trace {
        let _ = writeln!(s, "{},{:e},{:e},{:e},{:e}", t.iter, t.j, t.gap_estimate, t.s_l, t.step);
    }
    s
}

/// Per-cell CSV: `cell,x1,x2,u1,u2,beta`.
pub fn cells_csv(domain: &Domain, primal: &PrimalField) -> String {
    let mut s = String::from("cell,x1,x2,u1,u2,beta\n");
    for (c, cell) in domain.cells.iter().enumerate() {
        let u = primal.u.values[c];
        let b = primal.beta.as_ref().map_or(1.0, |b| b[c]);
        let _ = writeln!(s, "{c},{:e},{:e},{:e},{:e},{:e}", cell.center[0], cell.center[1], u[0], u[1], b);
    }
    s
}

pub fn write_trace_csv(path: &Path, trace: &[TraceRow]) -> Result<()> {
    write_file(path, &trace_csv(trace))
}

pub fn write_cells_csv(path: &Path, domain: &Domain, primal: &PrimalField) -> Result<()> {
    write_file(path, &cells_csv(domain, primal))
}

pub fn write_sweep_csv(path: &Path, result: &SweepResult) -> Result<()> {
    write_file(path, &sweep_csv(result))
}
