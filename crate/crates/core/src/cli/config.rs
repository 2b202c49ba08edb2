//! Run configuration: a TOML file of sectioned `key = value` pairs, with
//! `section.key=value` overrides from the command line.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::dualsolver::{Forcing, Init, SolverOptions};
use crate::error::{Error, Result};
use crate::geometry::{Domain, DomainSpec, ShapeKind, ShapeSpec};
use crate::integrands::{ConvexIntegrand, Family};
use crate::primal::Selection;
use crate::pseudograd::VsfOptions;
use crate::testspace::{SpaceKind, MAX_LEVEL};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveCompressible,
    SolveIncompressible,
    Vsf,
    LimitSweep,
    Check,
}

impl Command {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "solve-compressible" => Command::SolveCompressible,
            "solve-incompressible" => Command::SolveIncompressible,
            "vsf" => Command::Vsf,
            "limit-sweep" => Command::LimitSweep,
            "check" => Command::Check,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Command::SolveCompressible => "solve-compressible",
            Command::SolveIncompressible => "solve-incompressible",
            Command::Vsf => "vsf",
            Command::LimitSweep => "limit-sweep",
            Command::Check => "check",
        }
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, Command::SolveCompressible | Command::SolveIncompressible | Command::LimitSweep)
    }

    pub fn needs_equal_measures(&self) -> bool {
        matches!(self, Command::SolveIncompressible | Command::LimitSweep)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingTag {
    Zero,
    Linear,
    Cubic,
    PiecewiseConstant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcingSpec {
    pub kind: ForcingTag,
    pub a: f64,
    pub levels: usize,
}

impl ForcingSpec {
    pub fn build(&self, domain: &Domain) -> Forcing {
        match self.kind {
            ForcingTag::Zero => Forcing::zero(domain),
            ForcingTag::Linear => Forcing::linear(domain, self.a),
            ForcingTag::Cubic => Forcing::cubic(domain, self.a),
            ForcingTag::PiecewiseConstant => Forcing::piecewise_constant(domain, self.levels, self.a),
        }
    }

    /// Countable range forcings violate the nondegeneracy needed for the subspace family.
    pub fn countable_range(&self) -> bool {
        matches!(self.kind, ForcingTag::Zero | ForcingTag::PiecewiseConstant) || self.a == 0.0
    }
}

/// Displacement probed by the `vsf` command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementTag {
    Identity,
    Square,
    Constant,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VsfSpec {
    pub displacement: DisplacementTag,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub n_values: Vec<u32>,
    pub warm_start: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    pub report: Option<PathBuf>,
    pub trace_csv: Option<PathBuf>,
    pub cells_csv: Option<PathBuf>,
    pub sweep_csv: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub domain: DomainSpec,
    pub space_kind: SpaceKind,
    pub level: u32,
    pub integrand: ConvexIntegrand,
    pub entropy_penalty: u32,
    pub forcing: ForcingSpec,
    pub solver: SolverOptions,
    pub vsf: VsfSpec,
    pub sweep: SweepSpec,
    pub output: OutputSpec,
    pub threads: Option<usize>,
}

impl RunConfig {
    /// The one-dimensional reference setting.
    pub fn default_for(command: Command) -> Self {
        Self {
            command,
            domain: DomainSpec {
                dim: 1,
                omega: ShapeSpec::interval(0.5),
                lambda: ShapeSpec::interval(0.5),
                n_cells: 64,
                n_lambda_nodes: 33,
                incompressible: command.needs_equal_measures(),
            },
            space_kind: SpaceKind::H1Subspace,
            level: 3,
            integrand: ConvexIntegrand::quadratic(),
            entropy_penalty: 0,
            forcing: ForcingSpec { kind: ForcingTag::Linear, a: 1.0, levels: 4 },
            solver: SolverOptions::default(),
            vsf: VsfSpec { displacement: DisplacementTag::Identity, tol: 1e-8, max_iter: 100_000 },
            sweep: SweepSpec { n_values: vec![1, 4, 16, 64], warm_start: true },
            output: OutputSpec::default(),
            threads: None,
        }
    }

    pub fn vsf_options(&self) -> VsfOptions {
        VsfOptions { tol: self.vsf.tol, max_iter: self.vsf.max_iter, ..Default::default() }
    }

    /// Every rule violation, not only the first.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let d = &self.domain;
        if d.dim != 1 && d.dim != 2 {
            errs.push(format!("domain.dim must be 1 or 2, got {}", d.dim));
        }
        let want = if d.dim == 2 { ShapeKind::Disc } else { ShapeKind::Interval };
        for (name, s) in [("omega", &d.omega), ("lambda", &d.lambda)] {
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                errs.push(format!("domain.{name}_radius must be positive and finite, got {}", s.radius));
            }
            if s.kind != want && (d.dim == 1 || d.dim == 2) {
                errs.push(format!("domain.{name} shape does not match dimension {}", d.dim));
            }
        }
        if d.n_cells == 0 {
            errs.push("domain.n_cells must be positive".into());
        }
        if d.n_lambda_nodes == 0 {
            errs.push("domain.n_lambda_nodes must be positive".into());
        }
        if self.command.needs_equal_measures() {
            let (mo, ml) = (d.omega.measure(), d.lambda.measure());
            if (mo - ml).abs() > 1e-12 * mo.max(ml) {
                errs.push(format!(
                    "measure mismatch: |Omega| = {mo} but |Lambda| = {ml}; the incompressible problem needs equal measures"
                ));
            }
        }
        if self.command == Command::LimitSweep && d.omega.radius != d.lambda.radius {
            errs.push("limit-sweep needs Omega = Lambda".into());
        }
        if self.level == 0 || self.level > MAX_LEVEL {
            errs.push(format!("space.level must lie in 1..={MAX_LEVEL}, got {}", self.level));
        }
        if self.command.is_dual() && self.forcing.countable_range() && self.space_kind == SpaceKind::H1Subspace {
            errs.push(
                "nondegeneracy rule: a forcing with countable range needs the convex family, set space.kind = \"h2\""
                    .into(),
            );
        }
        if self.command.is_dual() && matches!(self.integrand.family, Family::AbsoluteValue) {
            errs.push("integrand.family = \"abs\" is not supported by dual solves (f* is not finite)".into());
        }
        match self.integrand.family {
            Family::Power { p } if !(p > 1.0 && p.is_finite()) => {
                errs.push(format!("integrand.p must exceed 1, got {p}"));
            }
            _ => {}
        }
        if !(self.integrand.scale > 0.0 && self.integrand.scale.is_finite()) {
            errs.push(format!("integrand.scale must be positive, got {}", self.integrand.scale));
        }
        if self.forcing.kind == ForcingTag::PiecewiseConstant && self.forcing.levels == 0 {
            errs.push("forcing.levels must be positive".into());
        }
        if !self.forcing.a.is_finite() {
            errs.push("forcing.a must be finite".into());
        }
        let s = &self.solver;
        if s.max_iter == 0 {
            errs.push("solver.max_iter must be positive".into());
        }
        if s.schedule.iter().any(|m| !(*m > 0.0)) {
            errs.push("solver.schedule entries must be positive".into());
        }
        for (name, v) in [
            ("solver.gap_tol", s.gap_tol),
            ("solver.tie_tol", s.recovery.tie_tol),
            ("solver.select_tol", s.recovery.select_tol),
        ] {
            if !(v > 0.0) {
                errs.push(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.vsf.tol > 0.0) || self.vsf.max_iter == 0 {
            errs.push("vsf.tol and vsf.max_iter must be positive".into());
        }
        let n = &self.sweep.n_values;
        if self.command == Command::LimitSweep
            && (n.is_empty() || n[0] == 0 || n.windows(2).any(|w| w[0] >= w[1]))
        {
            errs.push("sweep.n_values must be positive and strictly increasing".into());
        }
        if self.threads == Some(0) {
            errs.push("run.threads must be positive".into());
        }
        errs
    }
}

/// Reads `path` (if any), applies `section.key=value` overrides, builds and validates.
pub fn load(command: Command, path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io { path: p.to_path_buf(), source: e })?;
            text.parse::<Table>().map_err(|e| Error::Config(vec![format!("{}: {e}", p.display())]))?
        }
        None => Table::new(),
    };
    let mut errs = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut table, o) {
            errs.push(e);
        }
    }
    let cfg = from_table(command, &table, &mut errs);
    errs.extend(cfg.validate());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

pub fn parse_str(command: Command, text: &str, overrides: &[String]) -> Result<RunConfig> {
    let mut table = text.parse::<Table>().map_err(|e| Error::Config(vec![e.to_string()]))?;
    let mut errs = Vec::new();
    for o in overrides {
        if let Err(e) = apply_override(&mut table, o) {
            errs.push(e);
        }
    }
    let cfg = from_table(command, &table, &mut errs);
    errs.extend(cfg.validate());
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

fn apply_override(table: &mut Table, item: &str) -> std::result::Result<(), String> {
    let (key, raw) = item.split_once('=').ok_or_else(|| format!("override `{item}` is not key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("override key `{key}` is malformed"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        t = entry.as_table_mut().ok_or_else(|| format!("override `{key}`: `{p}` is not a section"))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

struct Reader<'a> {
    table: &'a Table,
    errs: &'a mut Vec<String>,
    seen: BTreeSet<String>,
}

impl<'a> Reader<'a> {
    fn get(&mut self, section: &str, key: &str) -> Option<&'a Value> {
        self.seen.insert(format!("{section}.{key}"));
        self.table.get(section)?.as_table()?.get(key)
    }

    fn f64(&mut self, section: &str, key: &str, default: f64) -> f64 {
        match self.get(section, key) {
            None => default,
            Some(Value::Float(x)) => *x,
            Some(Value::Integer(i)) => *i as f64,
            Some(v) => {
                self.errs.push(format!("{section}.{key}: expected a number, got {v}"));
                default
            }
        }
    }

    fn uint(&mut self, section: &str, key: &str, default: u64) -> u64 {
        match self.get(section, key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(v) => {
                self.errs.push(format!("{section}.{key}: expected a nonnegative integer, got {v}"));
                default
            }
        }
    }

    fn boolean(&mut self, section: &str, key: &str, default: bool) -> bool {
        match self.get(section, key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(v) => {
                self.errs.push(format!("{section}.{key}: expected true or false, got {v}"));
                default
            }
        }
    }

    fn string(&mut self, section: &str, key: &str) -> Option<String> {
        match self.get(section, key) {
            None => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(v) => {
                self.errs.push(format!("{section}.{key}: expected a string, got {v}"));
                None
            }
        }
    }

    fn choice<T: Copy>(&mut self, section: &str, key: &str, options: &[(&str, T)], default: T) -> T {
        let Some(s) = self.string(section, key) else { return default };
        match options.iter().find(|(name, _)| *name == s) {
            Some((_, v)) => *v,
            None => {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                self.errs.push(format!("{section}.{key}: `{s}` is not one of {}", names.join(", ")));
                default
            }
        }
    }

    fn list_f64(&mut self, section: &str, key: &str, default: Vec<f64>) -> Vec<f64> {
        match self.get(section, key) {
            None => default,
            Some(Value::Array(a)) => {
                let out: Option<Vec<f64>> = a
                    .iter()
                    .map(|v| match v {
                        Value::Float(x) => Some(*x),
                        Value::Integer(i) => Some(*i as f64),
                        _ => None,
                    })
                    .collect();
                out.unwrap_or_else(|| {
                    self.errs.push(format!("{section}.{key}: expected a list of numbers"));
                    default
                })
            }
            Some(v) => {
                self.errs.push(format!("{section}.{key}: expected a list, got {v}"));
                default
            }
        }
    }

    fn path(&mut self, section: &str, key: &str) -> Option<PathBuf> {
        self.string(section, key).map(PathBuf::from)
    }

    fn unknown_keys(&mut self) {
        for (section, v) in self.table {
            match v.as_table() {
                Some(t) => {
                    for k in t.keys() {
                        if !self.seen.contains(&format!("{section}.{k}")) {
                            self.errs.push(format!("unknown key `{section}.{k}`"));
                        }
                    }
                }
                None => self.errs.push(format!("unknown top-level key `{section}` (keys live in sections)")),
            }
        }
    }
}

fn from_table(default_command: Command, table: &Table, errs: &mut Vec<String>) -> RunConfig {
    let mut r = Reader { table, errs, seen: BTreeSet::new() };
    let command = match r.string("run", "command") {
        Some(s) => Command::parse(&s).unwrap_or_else(|| {
            r.errs.push(format!("run.command: unknown command `{s}`"));
            default_command
        }),
        None => default_command,
    };
    let mut cfg = RunConfig::default_for(command);

    if r.table.get("run").and_then(|t| t.as_table()).is_some_and(|t| t.contains_key("threads")) {
        cfg.threads = Some(r.uint("run", "threads", 0) as usize);
    }
    cfg.solver.seed = r.uint("run", "seed", cfg.solver.seed);
    cfg.output.report = r.path("output", "report");
    cfg.output.trace_csv = r.path("output", "trace_csv");
    cfg.output.cells_csv = r.path("output", "cells_csv");
    cfg.output.sweep_csv = r.path("output", "sweep_csv");

    let dim = r.uint("domain", "dim", 1) as usize;
    let shape = |radius| if dim == 2 { ShapeSpec::disc(radius) } else { ShapeSpec::interval(radius) };
    cfg.domain.dim = dim;
    cfg.domain.omega = shape(r.f64("domain", "omega_radius", 0.5));
    cfg.domain.lambda = shape(r.f64("domain", "lambda_radius", 0.5));
    cfg.domain.n_cells = r.uint("domain", "n_cells", cfg.domain.n_cells as u64) as usize;
    cfg.domain.n_lambda_nodes = r.uint("domain", "n_lambda_nodes", cfg.domain.n_lambda_nodes as u64) as usize;

    cfg.space_kind =
        r.choice("space", "kind", &[("h1", SpaceKind::H1Subspace), ("h2", SpaceKind::H2Convex)], cfg.space_kind);
    cfg.level = r.uint("space", "level", cfg.level as u64) as u32;

    let family = r.choice("integrand", "family", &[("power", 0u8), ("abs", 1u8)], 0);
    let p = r.f64("integrand", "p", 2.0);
    let scale = r.f64("integrand", "scale", 1.0);
    cfg.integrand =
        if family == 1 { ConvexIntegrand::absolute_value() } else { ConvexIntegrand::power(p) }.scaled(scale);
    cfg.entropy_penalty = r.uint("entropy", "penalty", 0) as u32;

    cfg.forcing.kind = r.choice(
        "forcing",
        "kind",
        &[
            ("zero", ForcingTag::Zero),
            ("linear", ForcingTag::Linear),
            ("cubic", ForcingTag::Cubic),
            ("piecewise_constant", ForcingTag::PiecewiseConstant),
        ],
        cfg.forcing.kind,
    );
    cfg.forcing.a = r.f64("forcing", "a", cfg.forcing.a);
    cfg.forcing.levels = r.uint("forcing", "levels", cfg.forcing.levels as u64) as usize;

    let s = &mut cfg.solver;
    s.schedule = r.list_f64("solver", "schedule", s.schedule.clone());
    s.max_iter = r.uint("solver", "max_iter", s.max_iter as u64) as usize;
    s.stage_iter = r.uint("solver", "stage_iter", s.stage_iter as u64) as usize;
    s.stall_window = r.uint("solver", "stall_window", s.stall_window as u64) as usize;
    s.stall_rel = r.f64("solver", "stall_rel", s.stall_rel);
    s.polyak_slack = r.f64("solver", "polyak_slack", s.polyak_slack);
    s.gap_tol = r.f64("solver", "gap_tol", s.gap_tol);
    s.trace_every = r.uint("solver", "trace_every", s.trace_every as u64) as usize;
    s.lbfgs_memory = r.uint("solver", "lbfgs_memory", s.lbfgs_memory as u64) as usize;
    s.init = r.choice("solver", "init", &[("zero", Init::Zero), ("random", Init::Random)], s.init);
    s.recovery.tie_tol = r.f64("solver", "tie_tol", s.recovery.tie_tol);
    s.recovery.select_tol = r.f64("solver", "select_tol", s.recovery.select_tol);
    s.recovery.polish_budget = r.uint("solver", "polish_budget", s.recovery.polish_budget as u64) as usize;
    s.recovery.restarts = r.uint("solver", "restarts", s.recovery.restarts as u64) as usize;
    s.recovery.strategy = r.choice(
        "solver",
        "selection",
        &[("balanced", Selection::Balanced), ("first_index", Selection::FirstIndex)],
        s.recovery.strategy,
    );
    s.recovery.seed = s.seed;

    cfg.vsf.displacement = r.choice(
        "vsf",
        "displacement",
        &[
            ("identity", DisplacementTag::Identity),
            ("square", DisplacementTag::Square),
            ("constant", DisplacementTag::Constant),
        ],
        cfg.vsf.displacement,
    );
    cfg.vsf.tol = r.f64("vsf", "tol", cfg.vsf.tol);
    cfg.vsf.max_iter = r.uint("vsf", "max_iter", cfg.vsf.max_iter as u64) as usize;

    let nv = r.list_f64("sweep", "n_values", cfg.sweep.n_values.iter().map(|&n| n as f64).collect());
    if nv.iter().any(|x| x.fract() != 0.0 || *x < 0.0) {
        r.errs.push("sweep.n_values must be nonnegative integers".into());
    } else {
        cfg.sweep.n_values = nv.iter().map(|&x| x as u32).collect();
    }
    cfg.sweep.warm_start = r.boolean("sweep", "warm_start", cfg.sweep.warm_start);

    r.unknown_keys();
    cfg.domain.incompressible = command.needs_equal_measures();
    cfg
}
