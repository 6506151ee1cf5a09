use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use fluxbound::bounds::certify_sharpness_with;
use fluxbound::boussinesq::{constants_from_xi, poincare_mu, potential_coupling, rayleigh_bound};
use fluxbound::gallery::{
    cellular_pair, log_test_function, normalize_to_pe, pinching_pair, sinusoidal_source, ConcentratedSource,
    FlowConstruction, SourceProfile,
};
use fluxbound::harness::{emit_report, reflect_y, run_sweep, SweepConfig};
use fluxbound::neumann::{dirichlet_energy, inv_neumann_laplacian, Dealias};
use fluxbound::norms::{bmo_norm_with, hardy_maximal_integral_with, lp_norm, BmoOptions, MaximalPlan};
use fluxbound::optimal::{limit_study, optimize_multistart, LimitOptions};
use fluxbound::transport::{solve_steady_with, SolverOptions};
use fluxbound::{Domain, FluxError, Grid, ScalarField, VectorField};

#[derive(Parser)]
#[command(name = "fluxbound", version, about = "Variational bounds on thermal dissipation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the steady problem for a gallery flow.
    Solve(Setup),
    /// Certify the variational sandwich at the symmetrised optimum.
    Bound(Setup),
    /// BMO, Hardy maximal and Lp diagnostics of gallery fields.
    Norms(NormArgs),
    /// Energy integrals and identities of a flow construction.
    Flow(Setup),
    /// Minimise dissipation over flows with a fixed energy budget.
    Optimize(OptArgs),
    /// Rayleigh-number bounds for buoyancy-driven flow.
    Rayleigh(RayArgs),
    /// Run a parameter sweep from a config file.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FlowArg {
    None,
    Cellular,
    Pinching,
}

#[derive(Args)]
struct Setup {
    #[arg(long, value_enum, default_value = "cellular")]
    flow: FlowArg,
    /// Cell size ℓ of the sinusoidal source (cellular and no-flow runs).
    #[arg(long, default_value_t = 1.0)]
    ell: f64,
    /// Source radius ε; selects the concentrated source when set.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pe: f64,
    #[arg(long, short, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 1e-10)]
    rtol: f64,
    /// Skip 3/2-rule padding of the advection products.
    #[arg(long)]
    no_dealias: bool,
}

impl Setup {
    fn opts(&self) -> SolverOptions {
        SolverOptions {
            rtol: self.rtol,
            dealias: if self.no_dealias { Dealias::None } else { Dealias::ThreeHalves },
            ..Default::default()
        }
    }

    fn build(&self) -> fluxbound::Result<(ScalarField, VectorField, Option<FlowConstruction>)> {
        let concentrated = self.eps.is_some() || matches!(self.flow, FlowArg::Pinching);
        if concentrated {
            let eps = self.eps.unwrap_or(1.0 / 32.0);
            let grid = Grid::square(Domain::unit_square(), self.n)?;
            let src = ConcentratedSource::new(eps, SourceProfile::SmoothBump)?;
            let f = src.field(&grid)?;
            let c = match self.flow {
                FlowArg::None => None,
                FlowArg::Pinching => Some(pinching_pair(eps, &src)?),
                FlowArg::Cellular => {
                    return Err(FluxError::Parameter("the cellular flow goes with the sinusoidal source".into()))
                }
            };
            let u = velocity(&c, &grid, self.pe)?;
            Ok((f, u, c))
        } else {
            let grid = Grid::square(Domain::two_pi_square(), self.n)?;
            let f = sinusoidal_source(self.ell, &grid)?;
            let c = match self.flow {
                FlowArg::None => None,
                FlowArg::Cellular => Some(cellular_pair(self.ell)?),
                FlowArg::Pinching => unreachable!(),
            };
            let u = velocity(&c, &grid, self.pe)?;
            Ok((f, u, c))
        }
    }
}

fn velocity(c: &Option<FlowConstruction>, grid: &Grid, pe: f64) -> fluxbound::Result<VectorField> {
    match c {
        Some(c) => normalize_to_pe(&c.velocity_field(grid)?, pe),
        None => Ok(VectorField::zeros(*grid)),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormField {
    LogTest,
    SourcePlus,
    Sinusoidal,
}

#[derive(Args)]
struct NormArgs {
    #[arg(long, value_enum, default_value = "log-test")]
    field: NormField,
    #[arg(long, default_value_t = 1.0 / 32.0)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    ell: f64,
    #[arg(long, short, default_value_t = 256)]
    n: usize,
}

#[derive(Args)]
struct OptArgs {
    #[arg(long, default_value_t = 1.0)]
    ell: f64,
    /// One value optimises; four or more run a limit study along the ladder.
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pe: Vec<f64>,
    #[arg(long, short, default_value_t = 32)]
    n: usize,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum RayConfig {
    /// Sinusoidal source with φ = y.
    Zero,
    /// Concentrated source with φ = y.
    Positive,
    /// Reflected concentrated source with φ = y.
    Negative,
}

#[derive(Args)]
struct RayArgs {
    #[arg(long, value_enum, default_value = "zero")]
    config: RayConfig,
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    ra: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    ell: f64,
    #[arg(long, default_value_t = 1.0 / 32.0)]
    eps: f64,
    #[arg(long, short, default_value_t = 128)]
    n: usize,
    /// Constant in the div–curl estimate.
    #[arg(long, default_value_t = 1.0)]
    c_clms: f64,
}

#[derive(Args)]
struct SweepArgs {
    /// Flat key = value config file.
    config: PathBuf,
    /// Overrides, key=value.
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Output directory (overrides output_dir).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print<T: Serialize>(v: &T) -> fluxbound::Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| FluxError::Io(e.to_string()))?;
    println!("{s}");
    Ok(())
}

fn run(cli: Cli) -> fluxbound::Result<ExitCode> {
    match cli.cmd {
        Cmd::Solve(s) => {
            let (f, u, _) = s.build()?;
            let sol = solve_steady_with(&u, &f, &s.opts())?;
            #[derive(Serialize)]
            struct Out {
                #[serde(flatten)]
                summary: fluxbound::transport::SolutionSummary,
                production_mismatch: f64,
            }
            print(&Out { summary: sol.summary(), production_mismatch: sol.production_mismatch() })?;
        }
        Cmd::Bound(s) => {
            let (f, u, _) = s.build()?;
            print(&certify_sharpness_with(&u, &f, &s.opts(), Dealias::None)?)?;
        }
        Cmd::Flow(s) => {
            let (f, _, c) = s.build()?;
            let c = c.ok_or_else(|| FluxError::Parameter("flow needs --flow cellular or pinching".into()))?;
            let e = c.energy_integrals();
            let eta = c.eta_field(&f.grid)?;
            #[derive(Serialize)]
            struct Out {
                name: &'static str,
                parameter: f64,
                velocity_sq: f64,
                eta_gradient_sq: f64,
                product: f64,
                grid_mean_square_velocity: f64,
                grid_eta_dirichlet: f64,
            }
            let raw = c.velocity_field(&f.grid)?;
            print(&Out {
                name: c.name(),
                parameter: c.parameter(),
                velocity_sq: e.velocity_sq,
                eta_gradient_sq: e.eta_gradient_sq,
                product: e.velocity_sq * e.eta_gradient_sq,
                grid_mean_square_velocity: raw.mean_square(),
                grid_eta_dirichlet: dirichlet_energy(&eta),
            })?;
        }
        Cmd::Norms(a) => {
            let g = match a.field {
                NormField::Sinusoidal => {
                    let grid = Grid::square(Domain::two_pi_square(), a.n)?;
                    sinusoidal_source(a.ell, &grid)?
                }
                NormField::LogTest => {
                    let grid = Grid::square(Domain::unit_square(), a.n)?;
                    log_test_function(a.eps, &grid)?
                }
                NormField::SourcePlus => {
                    let grid = Grid::square(Domain::unit_square(), a.n)?;
                    let src = ConcentratedSource::new(a.eps, SourceProfile::SmoothBump)?;
                    src.plus_field(&grid)?
                }
            };
            let bmo = bmo_norm_with(&g, &BmoOptions::default());
            let hardy = hardy_maximal_integral_with(&g, &MaximalPlan::default());
            #[derive(Serialize)]
            struct Out {
                bmo: f64,
                hardy_maximal: f64,
                l1: f64,
                l2: f64,
                linf: f64,
            }
            print(&Out {
                bmo: bmo.value,
                hardy_maximal: hardy.value,
                l1: lp_norm(&g, 1.0)?,
                l2: lp_norm(&g, 2.0)?,
                linf: lp_norm(&g, f64::INFINITY)?,
            })?;
        }
        Cmd::Optimize(a) => {
            let grid = Grid::square(Domain::two_pi_square(), a.n)?;
            let f = sinusoidal_source(a.ell, &grid)?;
            let mut opts = LimitOptions::for_source(&f, a.seed);
            opts.optimize.max_iter = a.max_iter;
            if a.pe.len() >= 4 {
                print(&limit_study(&f, &a.pe, None, &opts)?)?;
            } else if a.pe.len() == 1 {
                let (best, scatter) = optimize_multistart(&f, a.pe[0], &opts.starts, &opts.optimize)?;
                #[derive(Serialize)]
                struct Out {
                    pe: f64,
                    objective: f64,
                    pe_sq_objective: f64,
                    constraint_activity: f64,
                    iterations: usize,
                    converged: bool,
                    start: String,
                    scatter: Vec<f64>,
                }
                print(&Out {
                    pe: best.pe,
                    objective: best.objective,
                    pe_sq_objective: best.pe * best.pe * best.objective,
                    constraint_activity: best.constraint_activity(),
                    iterations: best.iterations,
                    converged: best.converged,
                    start: best.start.clone(),
                    scatter,
                })?;
            } else {
                return Err(FluxError::Parameter("give one Pe or a ladder of at least four".into()));
            }
        }
        Cmd::Rayleigh(a) => {
            let (grid, f) = match a.config {
                RayConfig::Zero => {
                    let grid = Grid::square(Domain::two_pi_square(), a.n)?;
                    (grid, sinusoidal_source(a.ell, &grid)?)
                }
                RayConfig::Positive | RayConfig::Negative => {
                    let grid = Grid::square(Domain::unit_square(), a.n)?;
                    let f = ConcentratedSource::new(a.eps, SourceProfile::SmoothBump)?.field(&grid)?;
                    (grid, if matches!(a.config, RayConfig::Negative) { reflect_y(&f) } else { f })
                }
            };
            let phi = ScalarField::from_fn(grid, |_, y| y);
            let mu = poincare_mu(&grid)?;
            let xi = inv_neumann_laplacian(&f)?.scaled(-1.0);
            let consts = constants_from_xi(&xi, &f, mu.mu, a.c_clms)?;
            let coupling = potential_coupling(&f, &phi)?;
            let g_sq = dirichlet_energy(&phi);
            let reports = a
                .ra
                .iter()
                .map(|&ra| rayleigh_bound(&consts, &coupling, g_sq, ra))
                .collect::<fluxbound::Result<Vec<_>>>()?;
            #[derive(Serialize)]
            struct Out<'a> {
                mu: f64,
                constants: &'a fluxbound::boussinesq::BoundConstants,
                coupling: fluxbound::boussinesq::PotentialCoupling,
                bounds: Vec<fluxbound::boussinesq::RayleighBoundReport>,
            }
            print(&Out { mu: mu.mu, constants: &consts, coupling, bounds: reports })?;
        }
        Cmd::Sweep(a) => {
            let text = std::fs::read_to_string(&a.config)?;
            let mut cfg = SweepConfig::parse(&text)?;
            for o in &a.overrides {
                cfg.apply_override(o)?;
            }
            if let Some(out) = a.out {
                cfg.output_dir = out;
            }
            let result = run_sweep(&cfg)?;
            let files = emit_report(&result, &cfg.output_dir)?;
            for f in &files {
                println!("{}", f.display());
            }
            if result.failures > 0 {
                eprintln!("{} of {} rows failed", result.failures, result.table.rows.len());
                return Ok(ExitCode::from(2));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("fluxbound: {e}");
            ExitCode::from(1)
        }
    }
}
