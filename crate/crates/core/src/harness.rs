//! Batch driver: parameter sweeps over the gallery constructions, scaling
//! fits and deterministic report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bounds::certify_sharpness_with;
use crate::boussinesq::{constants_from_xi, poincare_mu, potential_coupling, rayleigh_bound};
use crate::error::{FluxError, Result};
use crate::field::{Domain, Grid, ScalarField, VectorField};
use crate::gallery::{cellular_pair, normalize_to_pe, pinching_pair, sinusoidal_source, ConcentratedSource, SourceProfile};
use crate::neumann::{dirichlet_energy, inv_neumann_laplacian, Dealias};
use crate::optimal::{limit_study, LimitOptions};
use crate::transport::{potential_energy_terms, solve_steady_with, SolverOptions, TransportSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    CellularScaling,
    PinchingScaling,
    LimitStudy,
    RayleighSweep,
    SharpnessGrid,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::CellularScaling => "cellular_scaling",
            Experiment::PinchingScaling => "pinching_scaling",
            Experiment::LimitStudy => "limit_study",
            Experiment::RayleighSweep => "rayleigh_sweep",
            Experiment::SharpnessGrid => "sharpness_grid",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "cellular_scaling" => Experiment::CellularScaling,
            "pinching_scaling" => Experiment::PinchingScaling,
            "limit_study" => Experiment::LimitStudy,
            "rayleigh_sweep" => Experiment::RayleighSweep,
            "sharpness_grid" => Experiment::SharpnessGrid,
            _ => return Err(FluxError::Config(format!("unknown experiment '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Candidate {
    NoFlow,
    Construction,
}

impl Candidate {
    fn name(self) -> &'static str {
        match self {
            Candidate::NoFlow => "noflow",
            Candidate::Construction => "construction",
        }
    }
}

/// Sweep parameters. Parsed from flat `key = value` text; list values are
/// comma separated or `logspace(lo, hi, n)`.
#[derive(Debug, Clone, Serialize)]
pub struct SweepConfig {
    pub experiment: Experiment,
    pub ell: Vec<f64>,
    pub eps: Vec<f64>,
    pub pe: Vec<f64>,
    pub ra: Vec<f64>,
    pub nx: Vec<usize>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub rtol: f64,
    pub max_iter: usize,
    pub dealias: Dealias,
    pub candidates: Vec<Candidate>,
    /// Certify sharpness on every scaling row (one extra adjoint solve).
    pub certify: bool,
    /// Run rows below the resolution threshold and flag them instead of refusing.
    pub allow_underresolved: bool,
    /// Minimum cells per ℓ (cellular) or per source diameter 2ε (pinching).
    pub min_cells: f64,
    pub opt_max_iter: usize,
}

impl SweepConfig {
    pub fn new(experiment: Experiment) -> Self {
        Self {
            experiment,
            ell: vec![1.0],
            eps: vec![1.0 / 32.0],
            pe: vec![1.0],
            ra: vec![1e3],
            nx: vec![64],
            output_dir: PathBuf::from("fluxbound-out"),
            seed: 0,
            rtol: 1e-10,
            max_iter: 200_000,
            dealias: Dealias::ThreeHalves,
            candidates: vec![Candidate::NoFlow, Candidate::Construction],
            certify: false,
            allow_underresolved: false,
            min_cells: 8.0,
            opt_max_iter: 200,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FluxError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        let exp = pairs
            .iter()
            .find(|(k, _)| k == "experiment")
            .ok_or_else(|| FluxError::Config("missing 'experiment'".into()))?;
        let mut cfg = Self::new(Experiment::parse(&exp.1)?);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| FluxError::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "experiment" => self.experiment = Experiment::parse(value)?,
            "ell" => self.ell = parse_list(value)?,
            "eps" => self.eps = parse_list(value)?,
            "pe" => self.pe = parse_list(value)?,
            "ra" => self.ra = parse_list(value)?,
            "nx" => {
                self.nx = parse_list(value)?
                    .into_iter()
                    .map(|v| if v >= 1.0 && v.fract() == 0.0 { Ok(v as usize) } else { Err(bad(key, value)) })
                    .collect::<Result<_>>()?
            }
            "output_dir" => self.output_dir = PathBuf::from(value),
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value))?,
            "rtol" => self.rtol = value.parse().map_err(|_| bad(key, value))?,
            "max_iter" => self.max_iter = value.parse().map_err(|_| bad(key, value))?,
            "opt_max_iter" => self.opt_max_iter = value.parse().map_err(|_| bad(key, value))?,
            "min_cells" => self.min_cells = value.parse().map_err(|_| bad(key, value))?,
            "certify" => self.certify = parse_bool(key, value)?,
            "allow_underresolved" => self.allow_underresolved = parse_bool(key, value)?,
            "dealias" => {
                self.dealias = match value {
                    "none" => Dealias::None,
                    "three_halves" => Dealias::ThreeHalves,
                    _ => return Err(bad(key, value)),
                }
            }
            "candidates" => {
                self.candidates = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match s {
                        "noflow" => Ok(Candidate::NoFlow),
                        "construction" => Ok(Candidate::Construction),
                        _ => Err(bad(key, s)),
                    })
                    .collect::<Result<_>>()?
            }
            _ => return Err(FluxError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Sorted `key = value` lines with normalised numbers; the hash input.
    pub fn canonical(&self) -> String {
        let fl = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        m.insert("allow_underresolved", self.allow_underresolved.to_string());
        m.insert(
            "candidates",
            self.candidates.iter().map(|c| c.name()).collect::<Vec<_>>().join(","),
        );
        m.insert("certify", self.certify.to_string());
        m.insert(
            "dealias",
            match self.dealias {
                Dealias::None => "none",
                Dealias::ThreeHalves => "three_halves",
            }
            .into(),
        );
        m.insert("ell", fl(&self.ell));
        m.insert("eps", fl(&self.eps));
        m.insert("experiment", self.experiment.name().into());
        m.insert("max_iter", self.max_iter.to_string());
        m.insert("min_cells", format!("{:e}", self.min_cells));
        m.insert("nx", self.nx.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        m.insert("opt_max_iter", self.opt_max_iter.to_string());
        m.insert("pe", fl(&self.pe));
        m.insert("ra", fl(&self.ra));
        m.insert("rtol", format!("{:e}", self.rtol));
        m.insert("seed", self.seed.to_string());
        let mut s = String::new();
        for (k, v) in m {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical string, hex encoded. The output directory
    /// is not part of the hash.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn solver_options(&self) -> SolverOptions {
        SolverOptions { rtol: self.rtol, max_iter: self.max_iter, dealias: self.dealias, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = |name: &str, len: usize| {
            if len == 0 {
                Err(FluxError::Config(format!("parameter grid '{name}' is empty")))
            } else {
                Ok(())
            }
        };
        empty("nx", self.nx.len())?;
        match self.experiment {
            Experiment::CellularScaling | Experiment::PinchingScaling => {
                if self.candidates.is_empty() {
                    return Err(FluxError::Config("velocity candidate list is empty".into()));
                }
                empty("pe", self.pe.len())?;
                if self.experiment == Experiment::CellularScaling {
                    empty("ell", self.ell.len())?;
                } else {
                    empty("eps", self.eps.len())?;
                }
            }
            Experiment::SharpnessGrid => {
                empty("ell", self.ell.len())?;
                empty("pe", self.pe.len())?;
            }
            Experiment::LimitStudy => {
                empty("ell", self.ell.len())?;
                if self.pe.len() < 4 {
                    return Err(FluxError::Config("limit_study needs at least 4 Pe values".into()));
                }
            }
            Experiment::RayleighSweep => {
                empty("ra", self.ra.len())?;
                empty("ell", self.ell.len())?;
                empty("eps", self.eps.len())?;
            }
        }
        if self.pe.iter().chain(&self.ra).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(FluxError::Config("Pe and Ra values must be finite and nonnegative".into()));
        }
        if !(self.rtol > 0.0) || self.max_iter == 0 {
            return Err(FluxError::Config("rtol and max_iter must be positive".into()));
        }
        if !self.allow_underresolved {
            for spec in self.row_specs() {
                if let Some((cells, what)) = resolution(self, &spec) {
                    if cells < self.min_cells {
                        return Err(FluxError::Resolution(format!(
                            "nx = {} gives {cells:.2} cells per {what}, need {}",
                            spec.nx, self.min_cells
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn row_specs(&self) -> Vec<RowSpec> {
        let mut out = Vec::new();
        match self.experiment {
            Experiment::CellularScaling | Experiment::SharpnessGrid => {
                for &nx in &self.nx {
                    for &ell in &self.ell {
                        for &pe in &self.pe {
                            out.push(RowSpec { nx, param: ell, pe, ra: f64::NAN, label: String::new() });
                        }
                    }
                }
            }
            Experiment::PinchingScaling => {
                for &nx in &self.nx {
                    for &eps in &self.eps {
                        for &pe in &self.pe {
                            out.push(RowSpec { nx, param: eps, pe, ra: f64::NAN, label: String::new() });
                        }
                    }
                }
            }
            Experiment::LimitStudy => {
                for &nx in &self.nx {
                    out.push(RowSpec { nx, param: self.ell[0], pe: f64::NAN, ra: f64::NAN, label: String::new() });
                }
            }
            Experiment::RayleighSweep => {
                for label in ["zero", "positive", "negative"] {
                    for &ra in &self.ra {
                        let param = if label == "zero" { self.ell[0] } else { self.eps[0] };
                        out.push(RowSpec { nx: self.nx[0], param, pe: f64::NAN, ra, label: label.into() });
                    }
                }
            }
        }
        out
    }
}

fn bad(key: &str, value: &str) -> FluxError {
    FluxError::Config(format!("bad value '{value}' for '{key}'"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v)),
    }
}

/// Comma-separated numbers (fractions like `1/32` and powers like `2^-5`
/// allowed) or `logspace(lo, hi, n)`.
pub fn parse_list(v: &str) -> Result<Vec<f64>> {
    let v = v.trim();
    if let Some(inner) = v.strip_prefix("logspace(").and_then(|s| s.strip_suffix(')')) {
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(bad("logspace", v));
        }
        let lo = parse_number(parts[0])?;
        let hi = parse_number(parts[1])?;
        let n: usize = parts[2].parse().map_err(|_| bad("logspace", v))?;
        if !(lo > 0.0 && hi > 0.0) || n < 2 {
            return Err(bad("logspace", v));
        }
        let (a, b) = (lo.ln(), hi.ln());
        return Ok((0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect());
    }
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(parse_number).collect()
}

fn parse_number(s: &str) -> Result<f64> {
    if let Some((a, b)) = s.split_once('/') {
        return Ok(parse_number(a)? / parse_number(b)?);
    }
    if let Some((a, b)) = s.split_once('^') {
        return Ok(parse_number(a)?.powf(parse_number(b)?));
    }
    s.parse().map_err(|_| FluxError::Parse(format!("not a number: '{s}'")))
}

#[derive(Debug, Clone)]
struct RowSpec {
    nx: usize,
    /// ℓ or ε.
    param: f64,
    pe: f64,
    ra: f64,
    label: String,
}

/// Cells across the smallest scale, and the name of that scale.
fn resolution(cfg: &SweepConfig, spec: &RowSpec) -> Option<(f64, &'static str)> {
    match cfg.experiment {
        Experiment::CellularScaling | Experiment::SharpnessGrid | Experiment::LimitStudy => {
            Some((spec.param / (Domain::two_pi_square().lx() / spec.nx as f64), "ell"))
        }
        Experiment::PinchingScaling => Some((2.0 * spec.param / (Domain::unit_square().lx() / spec.nx as f64), "source diameter")),
        Experiment::RayleighSweep => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRow {
    pub label: String,
    pub values: Vec<f64>,
    pub adequate: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| FluxError::Parameter(format!("no column '{name}'")))
    }

    pub fn values(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r.values[c]).collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub experiment: &'static str,
    pub config_hash: String,
    pub config: String,
    pub seed: u64,
    pub rtol: f64,
    pub max_iter: usize,
    pub code_version: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub manifest: Manifest,
    pub table: Table,
    pub failures: usize,
    #[serde(skip)]
    pub config: SweepConfig,
}

fn columns(e: Experiment) -> Vec<&'static str> {
    match e {
        Experiment::CellularScaling => vec![
            "ell", "pe", "nx", "cells", "d_noflow", "d_construction", "d_min", "argmin", "gap_lower", "gap_upper",
            "production_mismatch", "pe_balance", "iterations",
        ],
        Experiment::PinchingScaling => vec![
            "eps", "pe", "nx", "cells", "d_noflow", "d_construction", "d_min", "argmin", "ke_product", "gap_lower",
            "gap_upper", "production_mismatch", "pe_balance", "iterations",
        ],
        Experiment::SharpnessGrid => vec![
            "ell", "pe", "nx", "dissipation", "gap_lower", "gap_upper", "rel_gap_lower", "rel_gap_upper",
            "energy_split_mismatch", "iterations",
        ],
        Experiment::LimitStudy => vec![
            "ell", "nx", "pe", "m", "pe_sq_m", "constraint_activity", "residual", "converged", "extrapolated",
        ],
        Experiment::RayleighSweep => vec![
            "param", "nx", "ra", "coupling", "exponent", "bound", "threshold", "above_threshold", "mu",
        ],
    }
}

/// Number of worker threads: `FLUXBOUND_THREADS` if set, else rayon's default.
pub fn thread_count() -> usize {
    std::env::var("FLUXBOUND_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

/// Run every grid point of the sweep. Per-row failures are recorded in the
/// row and counted; only configuration errors are fatal.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepResult> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| FluxError::Config(e.to_string()))?;
    let cols = columns(config.experiment);
    let specs = config.row_specs();
    let rows: Vec<TableRow> = if config.experiment == Experiment::LimitStudy {
        pool.install(|| specs.par_iter().flat_map(|s| limit_rows(config, s, cols.len())).collect())
    } else {
        // Collecting an indexed parallel iterator keeps config order.
        pool.install(|| {
            specs
                .par_iter()
                .map(|s| {
                    let adequate = resolution(config, s).map_or(true, |(c, _)| c >= config.min_cells);
                    let label = s.label.clone();
                    match run_row(config, s) {
                        Ok((values, lab)) => TableRow { label: lab.unwrap_or(label), values, adequate, error: None },
                        Err(e) => TableRow {
                            label,
                            values: error_values(config.experiment, s, cols.len()),
                            adequate,
                            error: Some(e.to_string()),
                        },
                    }
                })
                .collect()
        })
    };
    let failures = rows.iter().filter(|r| r.error.is_some()).count();
    Ok(SweepResult {
        manifest: Manifest {
            experiment: config.experiment.name(),
            config_hash: config.hash(),
            config: config.canonical(),
            seed: config.seed,
            rtol: config.rtol,
            max_iter: config.max_iter,
            code_version: env!("CARGO_PKG_VERSION"),
        },
        table: Table { columns: cols.iter().map(|s| s.to_string()).collect(), rows },
        failures,
        config: config.clone(),
    })
}

/// Parameter columns filled, measurements NaN.
fn error_values(e: Experiment, s: &RowSpec, n: usize) -> Vec<f64> {
    let mut v = vec![f64::NAN; n];
    match e {
        Experiment::CellularScaling | Experiment::PinchingScaling | Experiment::SharpnessGrid => {
            v[0] = s.param;
            v[1] = s.pe;
            v[2] = s.nx as f64;
        }
        Experiment::LimitStudy => {
            v[0] = s.param;
            v[1] = s.nx as f64;
        }
        Experiment::RayleighSweep => {
            v[0] = s.param;
            v[1] = s.nx as f64;
            v[2] = s.ra;
        }
    }
    v
}

/// Index of the smallest value; ties go to the first.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.map_or(true, |b| *v < values[b]) {
            best = Some(i);
        }
    }
    best
}

struct Solved {
    sol: TransportSolution,
    pe_balance: f64,
}

fn solve_candidate(cfg: &SweepConfig, u: &VectorField, f: &ScalarField) -> Result<Solved> {
    let sol = solve_steady_with(u, f, &cfg.solver_options())?;
    let g = f.grid;
    let phi = ScalarField::from_fn(g, |_, y| y);
    let terms = potential_energy_terms(&sol, &phi)?;
    let pe_balance = if terms.scale > 0.0 { terms.residual.abs() / terms.scale } else { terms.residual.abs() };
    Ok(Solved { sol, pe_balance })
}

fn run_row(cfg: &SweepConfig, s: &RowSpec) -> Result<(Vec<f64>, Option<String>)> {
    match cfg.experiment {
        Experiment::CellularScaling | Experiment::PinchingScaling => scaling_row(cfg, s),
        Experiment::SharpnessGrid => {
            let grid = Grid::square(Domain::two_pi_square(), s.nx)?;
            let f = sinusoidal_source(s.param, &grid)?;
            let u = normalize_to_pe(&cellular_pair(s.param)?.velocity_field(&grid)?, s.pe)?;
            let c = certify_sharpness_with(&u, &f, &cfg.solver_options(), Dealias::None)?;
            let (rl, ru) = c.relative_gaps();
            Ok((
                vec![
                    s.param,
                    s.pe,
                    s.nx as f64,
                    c.dissipation,
                    c.gap_lower,
                    c.gap_upper,
                    rl,
                    ru,
                    c.energy_split_mismatch,
                    c.iterations as f64,
                ],
                None,
            ))
        }
        Experiment::RayleighSweep => rayleigh_row(cfg, s),
        Experiment::LimitStudy => unreachable!("limit studies produce whole ladders"),
    }
}

fn scaling_row(cfg: &SweepConfig, s: &RowSpec) -> Result<(Vec<f64>, Option<String>)> {
    let pinching = cfg.experiment == Experiment::PinchingScaling;
    let (grid, f, construction) = if pinching {
        let grid = Grid::square(Domain::unit_square(), s.nx)?;
        let src = ConcentratedSource::new(s.param, SourceProfile::SmoothBump)?;
        (grid, src.field(&grid)?, pinching_pair(s.param, &src)?)
    } else {
        let grid = Grid::square(Domain::two_pi_square(), s.nx)?;
        (grid, sinusoidal_source(s.param, &grid)?, cellular_pair(s.param)?)
    };
    let cells = resolution(cfg, s).map_or(f64::NAN, |(c, _)| c);
    let mut d = [f64::NAN; 2];
    let (mut mismatch, mut balance, mut iters) = (0.0f64, 0.0f64, 0usize);
    let mut construction_u = None;
    for cand in &cfg.candidates {
        let u = match cand {
            Candidate::NoFlow => VectorField::zeros(grid),
            Candidate::Construction => {
                let u = normalize_to_pe(&construction.velocity_field(&grid)?, s.pe)?;
                construction_u = Some(u.clone());
                u
            }
        };
        let r = solve_candidate(cfg, &u, &f)?;
        d[*cand as usize] = r.sol.dissipation;
        mismatch = mismatch.max(r.sol.production_mismatch());
        balance = balance.max(r.pe_balance);
        iters = iters.max(r.sol.iterations);
    }
    let (gl, gu) = match (&construction_u, cfg.certify) {
        (Some(u), true) => {
            let c = certify_sharpness_with(u, &f, &cfg.solver_options(), Dealias::None)?;
            (c.gap_lower, c.gap_upper)
        }
        _ => (f64::NAN, f64::NAN),
    };
    let best = argmin(&d).ok_or_else(|| FluxError::Consistency("no candidate produced a dissipation".into()))?;
    let mut v = vec![s.param, s.pe, s.nx as f64, cells, d[0], d[1], d[best], best as f64];
    if pinching {
        let e = construction.energy_integrals();
        v.push(e.velocity_sq * e.eta_gradient_sq);
    }
    v.extend([gl, gu, mismatch, balance, iters as f64]);
    let label = [Candidate::NoFlow, Candidate::Construction][best].name().to_string();
    Ok((v, Some(label)))
}

fn rayleigh_row(cfg: &SweepConfig, s: &RowSpec) -> Result<(Vec<f64>, Option<String>)> {
    let (grid, f) = if s.label == "zero" {
        let grid = Grid::square(Domain::two_pi_square(), s.nx)?;
        (grid, sinusoidal_source(s.param, &grid)?)
    } else {
        let grid = Grid::square(Domain::unit_square(), s.nx)?;
        let f = ConcentratedSource::new(s.param, SourceProfile::SmoothBump)?.field(&grid)?;
        (grid, if s.label == "negative" { reflect_y(&f) } else { f })
    };
    let phi = ScalarField::from_fn(grid, |_, y| y);
    let mu = poincare_mu(&grid)?.mu;
    let xi = inv_neumann_laplacian(&f)?.scaled(-1.0);
    let consts = constants_from_xi(&xi, &f, mu, 1.0)?;
    let coupling = potential_coupling(&f, &phi)?;
    let r = rayleigh_bound(&consts, &coupling, dirichlet_energy(&phi), s.ra)?;
    let _ = cfg;
    Ok((
        vec![
            s.param,
            s.nx as f64,
            s.ra,
            r.coupling,
            r.exponent,
            r.bound,
            r.threshold.unwrap_or(f64::NAN),
            if r.above_threshold { 1.0 } else { 0.0 },
            mu,
        ],
        None,
    ))
}

/// f(x, −y) on a grid symmetric about y = 0.
pub fn reflect_y(f: &ScalarField) -> ScalarField {
    let g = f.grid;
    let mut out = f.clone();
    for j in 0..g.ny {
        for i in 0..g.nx {
            out.values[j * g.nx + i] = f.values[(g.ny - 1 - j) * g.nx + i];
        }
    }
    out
}

fn limit_rows(cfg: &SweepConfig, s: &RowSpec, ncols: usize) -> Vec<TableRow> {
    let adequate = resolution(cfg, s).map_or(true, |(c, _)| c >= cfg.min_cells);
    let run = || -> Result<Vec<TableRow>> {
        let grid = Grid::square(Domain::two_pi_square(), s.nx)?;
        let f = sinusoidal_source(s.param, &grid)?;
        let mut opts = LimitOptions::for_source(&f, cfg.seed);
        opts.optimize.max_iter = cfg.opt_max_iter;
        let study = limit_study(&f, &cfg.pe, None, &opts)?;
        Ok(study
            .points
            .iter()
            .map(|p| TableRow {
                label: p.start.clone(),
                values: vec![
                    s.param,
                    s.nx as f64,
                    p.pe,
                    p.m,
                    p.pe_sq_m,
                    p.constraint_activity,
                    p.residual,
                    if p.converged { 1.0 } else { 0.0 },
                    study.extrapolated,
                ],
                adequate,
                error: None,
            })
            .collect())
    };
    run().unwrap_or_else(|e| {
        cfg.pe
            .iter()
            .map(|&pe| {
                let mut values = vec![f64::NAN; ncols];
                values[0] = s.param;
                values[1] = s.nx as f64;
                values[2] = pe;
                TableRow { label: String::new(), values, adequate, error: Some(e.to_string()) }
            })
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingModel {
    /// y = A x^b, fitted in log–log coordinates.
    PowerLaw,
    /// y = A + b log(1/x).
    LogModel,
    /// y = A + b log²(1/x).
    LogSqModel,
}

impl ScalingModel {
    fn transform(self, x: f64, y: f64) -> Option<(f64, f64)> {
        match self {
            ScalingModel::PowerLaw => (x > 0.0 && y > 0.0).then(|| (x.ln(), y.ln())),
            ScalingModel::LogModel => (x > 0.0 && y.is_finite()).then(|| (-x.ln(), y)),
            ScalingModel::LogSqModel => (x > 0.0 && y.is_finite()).then(|| (x.ln() * x.ln(), y)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScalingFit {
    pub model: ScalingModel,
    pub x: String,
    pub y: String,
    /// Slope in the transformed coordinates.
    pub exponent: f64,
    /// A: exp(intercept) for power laws, the intercept otherwise.
    pub prefactor: f64,
    pub r_squared: f64,
    pub residuals: Vec<f64>,
    /// Table rows used.
    pub used: Vec<usize>,
    /// Rows in the window left out because they are under-resolved or failed.
    pub excluded: Vec<usize>,
}

pub fn fit_scaling(table: &Table, x: &str, y: &str, model: ScalingModel) -> Result<ScalingFit> {
    fit_scaling_where(table, x, y, model, |_| true)
}

/// Fit over rows with x in [lo, hi].
pub fn fit_scaling_window(table: &Table, x: &str, y: &str, model: ScalingModel, lo: f64, hi: f64) -> Result<ScalingFit> {
    let cx = table.column(x)?;
    fit_scaling_where(table, x, y, model, |r| r.values[cx] >= lo && r.values[cx] <= hi)
}

pub fn fit_scaling_where(
    table: &Table,
    x: &str,
    y: &str,
    model: ScalingModel,
    window: impl Fn(&TableRow) -> bool,
) -> Result<ScalingFit> {
    let (cx, cy) = (table.column(x)?, table.column(y)?);
    let (mut used, mut excluded, mut pts) = (Vec::new(), Vec::new(), Vec::new());
    for (i, r) in table.rows.iter().enumerate() {
        if !window(r) {
            continue;
        }
        match (r.adequate && r.error.is_none()).then(|| model.transform(r.values[cx], r.values[cy])).flatten() {
            Some(p) => {
                used.push(i);
                pts.push(p);
            }
            None => excluded.push(i),
        }
    }
    let (slope, intercept, r2, residuals) = least_squares(&pts)?;
    let prefactor = if model == ScalingModel::PowerLaw { intercept.exp() } else { intercept };
    Ok(ScalingFit {
        model,
        x: x.into(),
        y: y.into(),
        exponent: slope,
        prefactor,
        r_squared: r2,
        residuals,
        used,
        excluded,
    })
}

/// Ordinary least squares y = a + b x; returns (b, a, R², residuals).
pub fn least_squares(pts: &[(f64, f64)]) -> Result<(f64, f64, f64, Vec<f64>)> {
    if pts.len() < 4 {
        return Err(FluxError::Parameter(format!("fit needs at least 4 points, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    // Deviations from the first y keep constant data exactly flat.
    let y0 = pts[0].1;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if !(sxx > 0.0) {
        return Err(FluxError::Parameter("degenerate fit window: all x equal".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - y0)).sum();
    let slope = sxy / sxx;
    let my = y0 + pts.iter().map(|p| p.1 - y0).sum::<f64>() / n;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = pts.iter().map(|p| p.1 - (intercept + slope * p.0)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let r2 = if ss_tot > 0.0 { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) } else { 1.0 };
    Ok((slope, intercept, r2, residuals))
}

#[derive(Debug, Clone, Serialize)]
pub struct FitEntry {
    pub name: String,
    pub fit: Option<ScalingFit>,
    pub error: Option<String>,
}

/// Fits reported alongside each experiment.
pub fn default_fits(result: &SweepResult) -> Vec<FitEntry> {
    let t = &result.table;
    let cfg = &result.config;
    let entry = |name: String, r: Result<ScalingFit>| match r {
        Ok(f) => FitEntry { name, fit: Some(f), error: None },
        Err(e) => FitEntry { name, fit: None, error: Some(e.to_string()) },
    };
    let mut out = Vec::new();
    match cfg.experiment {
        Experiment::CellularScaling => {
            for &ell in &cfg.ell {
                // Advective branch: well past the crossover near Pe ~ 1/ℓ.
                let (ce, cp) = (t.column("ell").unwrap(), t.column("pe").unwrap());
                let r = fit_scaling_where(t, "pe", "d_min", ScalingModel::PowerLaw, |r| {
                    r.values[ce] == ell && r.values[cp] >= 8.0 / ell
                });
                out.push(entry(format!("advective_branch ell={ell}"), r));
            }
        }
        Experiment::PinchingScaling => {
            out.push(entry("noflow_vs_log".into(), fit_scaling(t, "eps", "d_noflow", ScalingModel::LogModel)));
            out.push(entry("ke_product_vs_log_sq".into(), fit_scaling(t, "eps", "ke_product", ScalingModel::LogSqModel)));
        }
        Experiment::SharpnessGrid => {
            out.push(entry("gap_lower_vs_nx".into(), fit_scaling(t, "nx", "gap_lower", ScalingModel::PowerLaw)));
            out.push(entry("gap_upper_vs_nx".into(), fit_scaling(t, "nx", "gap_upper", ScalingModel::PowerLaw)));
        }
        Experiment::RayleighSweep => {
            for regime in ["zero", "positive", "negative"] {
                let r = fit_scaling_where(t, "ra", "bound", ScalingModel::PowerLaw, |r| r.label == regime);
                out.push(entry(format!("{regime}_regime"), r));
            }
        }
        Experiment::LimitStudy => {}
    }
    out
}

#[derive(Serialize)]
struct Summary<'a> {
    manifest: &'a Manifest,
    failures: usize,
    rows: usize,
    fits: Vec<FitEntry>,
    table: &'a Table,
}

/// Write `<experiment>-<hash12>.{json,csv,dat}` into `dir`.
pub fn emit_report(result: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let stem = format!("{}-{}", result.manifest.experiment, &result.manifest.config_hash[..12]);
    let t = &result.table;

    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| FluxError::Io(e.to_string()))?;
    let mut header = vec!["label".to_string()];
    header.extend(t.columns.iter().cloned());
    header.extend(["adequate".to_string(), "error".to_string()]);
    w.write_record(&header).map_err(|e| FluxError::Io(e.to_string()))?;
    for r in &t.rows {
        let mut rec = vec![r.label.clone()];
        rec.extend(r.values.iter().map(|v| format!("{v:e}")));
        rec.push(r.adequate.to_string());
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec).map_err(|e| FluxError::Io(e.to_string()))?;
    }
    w.flush()?;

    let dat_path = dir.join(format!("{stem}.dat"));
    let mut dat = format!("# {}\n# {}\n", result.manifest.config_hash, t.columns.join(" "));
    for r in t.rows.iter().filter(|r| r.error.is_none()) {
        let line: Vec<String> = r.values.iter().map(|v| format!("{v:e}")).collect();
        let _ = writeln!(dat, "{}", line.join(" "));
    }
    std::fs::write(&dat_path, dat)?;

    let json_path = dir.join(format!("{stem}.json"));
    let summary = Summary {
        manifest: &result.manifest,
        failures: result.failures,
        rows: t.rows.len(),
        fits: default_fits(result),
        table: t,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| FluxError::Io(e.to_string()))?;
    std::fs::write(&json_path, json)?;
    Ok(vec![json_path, csv_path, dat_path])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_and_hash() {
        let text = "experiment = cellular_scaling\nell = 1/4\npe = logspace(0.1, 1000, 9)\nnx = 64 # comment\n";
        let cfg = SweepConfig::parse(text).unwrap();
        assert_eq!(cfg.ell, vec![0.25]);
        assert_eq!(cfg.pe.len(), 9);
        assert!((cfg.pe[8] - 1000.0).abs() < 1e-9);
        let mut other = cfg.clone();
        other.output_dir = PathBuf::from("elsewhere");
        assert_eq!(cfg.hash(), other.hash());
        other.apply_override("seed=3").unwrap();
        assert_ne!(cfg.hash(), other.hash());
        assert_eq!(parse_list("2^-5, 2^-6").unwrap(), vec![1.0 / 32.0, 1.0 / 64.0]);
        assert!(SweepConfig::parse("ell = 1").is_err());
        assert!(SweepConfig::parse("experiment = cellular_scaling\nbogus = 1").is_err());
    }

    #[test]
    fn refusals() {
        let mut cfg = SweepConfig::new(Experiment::CellularScaling);
        cfg.candidates.clear();
        assert!(matches!(cfg.validate(), Err(FluxError::Config(_))));
        let mut cfg = SweepConfig::new(Experiment::CellularScaling);
        cfg.ell = vec![0.25];
        cfg.nx = vec![32];
        assert!(matches!(cfg.validate(), Err(FluxError::Resolution(_))));
        cfg.allow_underresolved = true;
        cfg.pe = vec![1.0];
        let r = run_sweep(&cfg).unwrap();
        assert!(!r.table.rows[0].adequate);
        let mut cfg = SweepConfig::new(Experiment::PinchingScaling);
        cfg.pe.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn noflow_row_matches_closed_form() {
        let mut cfg = SweepConfig::new(Experiment::CellularScaling);
        cfg.ell = vec![1.0];
        cfg.pe = vec![0.0, 2.0];
        cfg.nx = vec![64];
        let r = run_sweep(&cfg).unwrap();
        assert_eq!(r.failures, 0);
        let d = r.table.values("d_min").unwrap();
        assert!((d[0] - 1.0 / 16.0).abs() < 1e-10 * d[0]);
        assert!(d[1] <= d[0]);
    }

    #[test]
    fn constant_and_exact_fits() {
        let table = Table {
            columns: vec!["x".into(), "y".into(), "z".into()],
            rows: (1..=6)
                .map(|i| {
                    let x = i as f64;
                    TableRow { label: String::new(), values: vec![x, 0.3, 2.0 * x.powf(-2.0)], adequate: true, error: None }
                })
                .collect(),
        };
        let f = fit_scaling(&table, "x", "y", ScalingModel::PowerLaw).unwrap();
        assert_eq!(f.exponent, 0.0);
        assert_eq!(f.r_squared, 1.0);
        let f = fit_scaling(&table, "x", "z", ScalingModel::PowerLaw).unwrap();
        assert!((f.exponent + 2.0).abs() < 1e-12 && (f.prefactor - 2.0).abs() < 1e-12);
        let mut t2 = table.clone();
        t2.rows[0].adequate = false;
        t2.rows[1].error = Some("x".into());
        let f = fit_scaling(&t2, "x", "z", ScalingModel::PowerLaw).unwrap();
        assert_eq!(f.excluded, vec![0, 1]);
        t2.rows[2].adequate = false;
        assert!(fit_scaling(&t2, "x", "z", ScalingModel::PowerLaw).is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let mut cfg = SweepConfig::new(Experiment::RayleighSweep);
        cfg.ra = vec![1e2, 1e3, 1e4, 1e5];
        cfg.nx = vec![32];
        cfg.eps = vec![1.0 / 8.0 - 0.08];
        let dir = tempfile::tempdir().unwrap();
        let a = emit_report(&run_sweep(&cfg).unwrap(), &dir.path().join("a")).unwrap();
        let b = emit_report(&run_sweep(&cfg).unwrap(), &dir.path().join("b")).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.file_name(), y.file_name());
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let r = run_sweep(&cfg).unwrap();
        let fits = default_fits(&r);
        let zero = fits[0].fit.as_ref().unwrap();
        assert!((zero.exponent + 2.0 / 3.0).abs() < 1e-9);
        let pos = fits[1].fit.as_ref().unwrap();
        assert!(pos.exponent.abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn argmin_is_rowwise_min(rows in proptest::collection::vec(proptest::collection::vec(0.0f64..10.0, 1..4), 1..20)) {
            for r in &rows {
                let i = argmin(r).unwrap();
                let m = r.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert_eq!(r[i], m);
                prop_assert!(r[..i].iter().all(|v| *v > m));
            }
        }
    }
}
