//! Convergence studies, parameter sweeps and CSV output.
//!
//! A run is described by a TOML file:
//!
//! ```toml
//! problem = "diffusion-l4"
//! levels = 5
//! seed = 7
//!
//! [overrides]
//! mu = [20.0, 2.0]
//! p = 2
//! q = 2
//!
//! [overrides.stab]
//! gamma_if = 0.0
//!
//! [overrides.noise]
//! delta_tilde = 8.0
//! theta = 1.0
//!
//! [sweep]
//! axis = "gammaIF"
//! values = ["1e-5", "1e-3", "1"]
//! level = 3
//! ```
//!
//! Level `k` uses a structured mesh with `base_n · 2^k` cells per direction.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_noise, assemble_rhs, build_saddle_system, dual_gradient_norm, eval_diagnostics, Discretization, KappaMode, SystemBlocks,
};
use crate::cutgeom::Side;
use crate::error::{Error, Result};
use crate::isomap::geometry_error_probe;
use crate::mesh::build_structured_mesh;
use crate::problems::{make_problem, CatalogId, ExactSolution, Overrides, ProblemSpec};
use crate::solver::solve_sparse;

pub const CSV_HEADER: &str = "level,h,ndof,rel_l2_B,rel_h1semi_B,tnorm_err,dual_grad,geom_probe,runtime_s";
pub const SWEEP_HEADER: &str = "axis_value,rel_l2_B,rel_h1semi_B";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: CatalogId,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Seed for the noise generator; overrides `overrides.noise.seed`.
    pub seed: Option<u64>,
    #[serde(default)]
    pub overrides: Overrides,
    pub sweep: Option<SweepConfig>,
}

fn default_levels() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<String>,
    /// Mesh level of every solve; defaults to the second-finest level.
    pub level: Option<usize>,
}

impl RunConfig {
    pub fn new(problem: CatalogId) -> Self {
        Self { problem, levels: default_levels(), seed: None, overrides: Overrides::default(), sweep: None }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let mut spec = make_problem(self.problem, &self.overrides)?;
        if let Some(seed) = self.seed {
            spec.noise.seed = seed;
        }
        Ok(spec)
    }
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "gammaIF")]
    GammaIf,
    #[serde(rename = "alpha2")]
    Alpha2,
    #[serde(rename = "kappaMode")]
    KappaMode,
    #[serde(rename = "includeNc")]
    IncludeNc,
    /// `k₂`, or `k₁:k₂`.
    #[serde(rename = "wavenumber")]
    Wavenumber,
    /// `μ₁:μ₂`.
    #[serde(rename = "contrast")]
    Contrast,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] =
        [SweepAxis::GammaIf, SweepAxis::Alpha2, SweepAxis::KappaMode, SweepAxis::IncludeNc, SweepAxis::Wavenumber, SweepAxis::Contrast];

    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::GammaIf => "gammaIF",
            SweepAxis::Alpha2 => "alpha2",
            SweepAxis::KappaMode => "kappaMode",
            SweepAxis::IncludeNc => "includeNc",
            SweepAxis::Wavenumber => "wavenumber",
            SweepAxis::Contrast => "contrast",
        }
    }

    /// Returns a copy of `spec` with the axis set to `value`.
    pub fn apply(self, spec: &ProblemSpec, value: &str) -> Result<ProblemSpec> {
        let bad = || Error::Config(format!("invalid value '{value}' for sweep axis {self}"));
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let pair = |s: &str| -> Result<[f64; 2]> {
            let (a, b) = s.split_once(':').ok_or_else(bad)?;
            Ok([num(a)?, num(b)?])
        };
        let mut out = spec.clone();
        match self {
            SweepAxis::GammaIf => out.stab.gamma_if = num(value)?,
            SweepAxis::Alpha2 => out.stab.alpha2 = num(value)?,
            SweepAxis::KappaMode => {
                out.stab.kappa_mode = match value.trim() {
                    "harmonic" => KappaMode::Harmonic,
                    "average" => KappaMode::Average,
                    _ => return Err(bad()),
                }
            }
            SweepAxis::IncludeNc => out.stab.include_nc = value.trim().parse().map_err(|_| bad())?,
            SweepAxis::Wavenumber => {
                let ExactSolution::Helmholtz { k, .. } = spec.solution else {
                    return Err(Error::Config(format!("problem '{}' has no wavenumber", spec.id)));
                };
                let k = if value.contains(':') { pair(value)? } else { [k[0], num(value)?] };
                out = make_problem(spec.id, &overrides_of(spec, spec.mu, Some(k)))?;
            }
            SweepAxis::Contrast => {
                let k = match spec.solution {
                    ExactSolution::Helmholtz { k, .. } => Some(k),
                    ExactSolution::Diffusion { .. } | ExactSolution::Quadratic { .. } => None,
                };
                out = make_problem(spec.id, &overrides_of(spec, pair(value)?, k))?;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

fn overrides_of(spec: &ProblemSpec, mu: [f64; 2], k: Option<[f64; 2]>) -> Overrides {
    Overrides {
        mu: Some(mu),
        k,
        p: Some(spec.p),
        q: Some(spec.q),
        base_n: Some(spec.base_n),
        stab: Some(spec.stab),
        noise: Some(spec.noise),
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sweep axis '{s}'")))
    }
}

/// Parses `axis=v1,v2,...`.
pub fn parse_sweep(arg: &str) -> Result<(SweepAxis, Vec<String>)> {
    let (axis, values) = arg.split_once('=').ok_or_else(|| Error::Config(format!("sweep '{arg}' is not of the form axis=v1,v2")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(Error::Config(format!("sweep '{arg}' has no values")));
    }
    Ok((axis.trim().parse()?, values))
}

/// Errors and diagnostics of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub level: usize,
    pub n: usize,
    pub h: f64,
    pub ndof: usize,
    pub ndof_primal: usize,
    pub ndof_dual: usize,
    pub rel_l2_b: f64,
    pub rel_h1semi_b: f64,
    pub tnorm_err: f64,
    pub dual_grad: f64,
    pub geom_probe: f64,
    pub runtime_s: f64,
    pub residual: f64,
    pub deformation_failures: usize,
    pub warning: Option<String>,
}

/// Solution of one level together with its discretisation.
pub struct LevelSolution {
    pub disc: Discretization,
    pub blocks: SystemBlocks,
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub result: LevelResult,
}

/// Relative `L²` and `H¹`-seminorm errors over the target region, evaluated
/// on the deformed geometry.
pub fn compute_errors(disc: &Discretization, u: &[f64]) -> Result<(f64, f64)> {
    let sol = disc.problem.solution;
    let target = disc.problem.target;
    let mut ev = disc.evaluator();
    let mut dofs = Vec::new();
    let [mut e0, mut e1, mut n0, mut n1] = [0.0; 4];
    let mut hit = false;
    for side in Side::BOTH {
        for &e in disc.geometry.active(side) {
            disc.space.element_dofs_into(e, side, &mut dofs);
            let mut map = disc.mapping(e);
            for (x, w) in disc.volume_points(e, Some(side)) {
                let pf = ev.eval(&mut map, &x, false)?;
                if !target.contains(&pf.y) {
                    continue;
                }
                hit = true;
                let wd = w * pf.det;
                let (val, grad) = (sol.value(side, &pf.y), sol.gradient(side, &pf.y));
                e0 += wd * (ev.value(u, &dofs) - val).powi(2);
                e1 += wd * (ev.gradient(u, &dofs) - grad).norm_squared();
                n0 += wd * val * val;
                n1 += wd * grad.norm_squared();
            }
        }
    }
    if !hit {
        return Err(Error::Config("target region contains no quadrature point".into()));
    }
    let rel = |e: f64, n: f64| if n > 0.0 { (e / n).sqrt() } else { e.sqrt() };
    Ok((rel(e0, n0), rel(e1, n1)))
}

/// Builds, solves and evaluates the problem on an `n × n` mesh.
pub fn solve_level(spec: &ProblemSpec, level: usize, n: usize) -> Result<LevelSolution> {
    let start = Instant::now();
    let mesh = build_structured_mesh(spec.domain, n, &spec.align_boxes())?;
    let disc = Discretization::new(spec, mesh)?;
    let blocks = SystemBlocks::assemble(&disc)?;
    let noisy = apply_noise(&disc, spec.noise.delta_tilde, spec.noise.theta, spec.noise.seed)?;
    let rhs = assemble_rhs(&disc, &noisy)?;
    let system = build_saddle_system(&blocks, rhs)?;
    let lin = solve_sparse(&system.matrix, &system.rhs)?;
    let (u, z) = system.split(&lin.x);
    let (u, z) = (u.to_vec(), z.to_vec());

    let (rel_l2_b, rel_h1semi_b) = compute_errors(&disc, &u)?;
    let iu = disc.interpolate_exact()?;
    let tnorm_err = eval_diagnostics(&blocks, &u, &z, Some(&iu)).tnorm;
    let dual_grad = dual_gradient_norm(&disc, &z)?;
    let geom_probe = geometry_error_probe(&disc.mesh, &disc.geometry, &disc.deformation, &spec.levelset, disc.order)?;
    let result = LevelResult {
        level,
        n,
        h: disc.h(),
        ndof: system.n_primal + system.n_dual,
        ndof_primal: system.n_primal,
        ndof_dual: system.n_dual,
        rel_l2_b,
        rel_h1semi_b,
        tnorm_err,
        dual_grad,
        geom_probe,
        runtime_s: start.elapsed().as_secs_f64(),
        residual: lin.residual,
        deformation_failures: disc.deformation.failures(),
        warning: lin.warning,
    };
    Ok(LevelSolution { disc, blocks, u, z, result })
}

/// Mesh resolution of level `k`.
pub fn level_n(spec: &ProblemSpec, level: usize) -> usize {
    spec.base_n << level
}

fn with_level(level: usize, e: Error) -> Error {
    Error::AtLevel { level, source: Box::new(e) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub rows: Vec<LevelResult>,
}

/// `log₂(e_k / e_{k+1})` for consecutive entries.
pub fn eoc(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Mean of the last `count` consecutive EOCs.
pub fn mean_eoc(errors: &[f64], count: usize) -> f64 {
    let rates = eoc(errors);
    let tail = &rates[rates.len().saturating_sub(count)..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

impl ConvergenceReport {
    pub fn column(&self, f: impl Fn(&LevelResult) -> f64) -> Vec<f64> {
        self.rows.iter().map(f).collect()
    }

    pub fn rel_l2(&self) -> Vec<f64> {
        self.column(|r| r.rel_l2_b)
    }

    /// CSV text; runtimes are omitted when `with_runtime` is false so that
    /// output is byte-reproducible.
    pub fn to_csv(&self, with_runtime: bool) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let rt = if with_runtime { format!("{:.3}", r.runtime_s) } else { "0".into() };
            s.push_str(&format!(
                "{},{:.10e},{},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{}\n",
                r.level, r.h, r.ndof, r.rel_l2_b, r.rel_h1semi_b, r.tnorm_err, r.dual_grad, r.geom_probe, rt
            ));
        }
        s
    }

    /// EOC table for the error columns.
    pub fn eoc_csv(&self) -> String {
        let mut s = String::from("level,eoc_rel_l2_B,eoc_rel_h1semi_B,eoc_tnorm_err,eoc_dual_grad,eoc_geom_probe\n");
        let cols = [
            eoc(&self.column(|r| r.rel_l2_b)),
            eoc(&self.column(|r| r.rel_h1semi_b)),
            eoc(&self.column(|r| r.tnorm_err)),
            eoc(&self.column(|r| r.dual_grad)),
            eoc(&self.column(|r| r.geom_probe)),
        ];
        for k in 0..self.rows.len().saturating_sub(1) {
            s.push_str(&format!("{}", k + 1));
            for c in &cols {
                s.push_str(&format!(",{:.4}", c[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs levels `0..levels` of `spec`.
pub fn run_convergence_spec(spec: &ProblemSpec, levels: usize) -> Result<ConvergenceReport> {
    if levels == 0 {
        return Err(Error::Config("at least one level is required".into()));
    }
    let mut rows = Vec::with_capacity(levels);
    for level in 0..levels {
        let sol = solve_level(spec, level, level_n(spec, level)).map_err(|e| with_level(level, e))?;
        rows.push(sol.result);
    }
    Ok(ConvergenceReport { rows })
}

pub fn run_convergence(config: &RunConfig) -> Result<ConvergenceReport> {
    run_convergence_spec(&config.problem_spec()?, config.levels)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub result: LevelResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(SWEEP_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{:.10e},{:.10e}\n", r.value, r.result.rel_l2_b, r.result.rel_h1semi_b));
        }
        s
    }
}

/// One solve per value at a fixed level.
pub fn run_sweep_spec(spec: &ProblemSpec, level: usize, axis: SweepAxis, values: &[String]) -> Result<SweepReport> {
    let mut rows = Vec::with_capacity(values.len());
    for v in values {
        let s = axis.apply(spec, v)?;
        let sol = solve_level(&s, level, level_n(&s, level)).map_err(|e| with_level(level, e))?;
        rows.push(SweepRow { value: v.clone(), result: sol.result });
    }
    Ok(SweepReport { axis, rows })
}

pub fn run_sweep(config: &RunConfig) -> Result<SweepReport> {
    let sweep = config.sweep.as_ref().ok_or_else(|| Error::Config("config has no [sweep] table".into()))?;
    let level = sweep.level.unwrap_or(config.levels.saturating_sub(2));
    run_sweep_spec(&config.problem_spec()?, level, sweep.axis, &sweep.values)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}
