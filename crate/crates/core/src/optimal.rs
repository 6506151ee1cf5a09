//! Minimising the dissipation over energy-constrained steady flows.
//!
//! The optimiser works on the joint functional
//!
//!   J(u, η) = ⨍|∇η|² + ‖u·∇η − f‖²_{H⁻¹},   ⨍|u|² ≤ Pe²,
//!
//! whose minimum over η is the dissipation of u. The η-step is the exact
//! symmetrised solve; the u-step is a preconditioned gradient step on the
//! stream function with the energy constraint restored by rescaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FluxError, Result};
use crate::field::{Grid, ScalarField, VectorField};
use crate::neumann::{check_mean_free, hminus1_sq_coeffs, AdvectionOperator, Dealias};
use crate::spectral::{sweep_x, sweep_y, NeumannSpectralPlan, Parity, RowOp};
use crate::transport::{solve_symmetrized, SolverOptions};

use Parity::{Even, Odd};

/// Norm of the constraint set. Projection onto its ball is by rescaling,
/// which is exact for the energy norm.
pub trait FlowNorm: Sync {
    fn norm(&self, u: &VectorField) -> f64;
    fn name(&self) -> &'static str;
}

/// (⨍|u|²)^½.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyNorm;

impl FlowNorm for EnergyNorm {
    fn norm(&self, u: &VectorField) -> f64 {
        u.mean_square().sqrt()
    }
    fn name(&self) -> &'static str {
        "energy"
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizeOptions {
    pub max_iter: usize,
    /// Stop when the relative decrease of J over one accepted step falls below this.
    pub rel_tol: f64,
    /// Advection discretisation used for both J and its gradient.
    pub dealias: Dealias,
    pub solver_rtol: f64,
    /// Largest first step, as a fraction of Pe in the energy norm.
    pub initial_step: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self { max_iter: 200, rel_tol: 1e-8, dealias: Dealias::None, solver_rtol: 1e-10, initial_step: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationState {
    /// Stream function (sine-series nodal values, zero trace).
    #[serde(skip)]
    pub psi: ScalarField,
    #[serde(skip)]
    pub u: VectorField,
    #[serde(skip)]
    pub eta: ScalarField,
    pub pe: f64,
    /// J(u, η); an upper bound on the dissipation of u.
    pub objective: f64,
    /// ⨍|∇η|².
    pub dirichlet_part: f64,
    /// ‖u·∇η − f‖²_{H⁻¹}.
    pub residual_part: f64,
    pub constraint_norm: f64,
    pub iterations: usize,
    pub solver_iterations: usize,
    pub converged: bool,
    /// J after each accepted step.
    pub history: Vec<f64>,
    pub start: String,
}

impl OptimizationState {
    /// ‖u‖_X / Pe.
    pub fn constraint_activity(&self) -> f64 {
        if self.pe > 0.0 {
            self.constraint_norm / self.pe
        } else {
            0.0
        }
    }
}

/// How to seed an optimisation.
#[derive(Debug, Clone)]
pub enum Start {
    /// A small random perturbation of u = 0 (a saddle of J).
    NoFlow { seed: u64 },
    /// ψ = sin(kx π x/Lx) sin(ky π y/Ly) shifted to the domain.
    Cellular { kx: usize, ky: usize },
    /// Random smooth stream function with a decaying spectrum.
    Random { seed: u64 },
    /// A given stream function (rescaled to Pe).
    Psi(ScalarField),
}

impl Start {
    fn label(&self) -> String {
        match self {
            Start::NoFlow { seed } => format!("no-flow(seed={seed})"),
            Start::Cellular { kx, ky } => format!("cellular({kx},{ky})"),
            Start::Random { seed } => format!("random(seed={seed})"),
            Start::Psi(_) => "given".into(),
        }
    }
}

struct Problem<'a> {
    plan: std::sync::Arc<NeumannSpectralPlan>,
    fhat: Vec<f64>,
    opts: &'a OptimizeOptions,
    norm: &'a dyn FlowNorm,
    /// Sine eigenvalues at sine-coefficient index `ky * nx + kx`.
    sine_lambda: Vec<f64>,
}

struct Eval {
    u: VectorField,
    eta_hat: Vec<f64>,
    objective: f64,
    dirichlet: f64,
    residual: f64,
    grad: Vec<f64>,
    iterations: usize,
    norm: f64,
}

impl<'a> Problem<'a> {
    fn new(f: &'a ScalarField, opts: &'a OptimizeOptions, norm: &'a dyn FlowNorm) -> Result<Self> {
        check_mean_free(f)?;
        let plan = NeumannSpectralPlan::for_grid(&f.grid);
        let mut fhat = plan.forward(&f.values, Even, Even);
        fhat[0] = 0.0;
        let (nx, ny) = (plan.nx(), plan.ny());
        let mut sine_lambda = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let kx = plan.ax.wavenumber[i + 1];
                let ky = plan.ay.wavenumber[j + 1];
                sine_lambda[j * nx + i] = kx * kx + ky * ky;
            }
        }
        Ok(Self { plan, fhat, opts, norm, sine_lambda })
    }

    fn grid(&self) -> Grid {
        self.plan.grid
    }

    fn velocity(&self, psi_hat: &[f64]) -> VectorField {
        let nx = self.plan.nx();
        let mut ux = psi_hat.to_vec();
        sweep_y(&self.plan.ay, nx, &mut ux, &[RowOp::Derivative(Odd), RowOp::Inverse(Even)]);
        sweep_x(&self.plan.ax, &mut ux, &[RowOp::Inverse(Odd)]);
        let mut uy = psi_hat.to_vec();
        sweep_x(&self.plan.ax, &mut uy, &[RowOp::Derivative(Odd), RowOp::Inverse(Even)]);
        sweep_y(&self.plan.ay, nx, &mut uy, &[RowOp::Inverse(Odd)]);
        uy.iter_mut().for_each(|v| *v = -*v);
        let g = self.grid();
        VectorField::new(
            ScalarField::from_values(g, ux).expect("grid-sized"),
            ScalarField::from_values(g, uy).expect("grid-sized"),
        )
        .expect("same grid")
    }

    fn psi_field(&self, psi_hat: &[f64]) -> ScalarField {
        let v = self.plan.inverse(psi_hat, Odd, Odd);
        ScalarField::from_values(self.grid(), v).expect("grid-sized")
    }

    fn energy_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).zip(&self.sine_lambda).map(|((a, b), l)| l * a * b).sum()
    }

    /// Exact η for u(ψ), J and ∂J/∂ψ̂.
    fn evaluate(&self, psi_hat: &[f64], eta0: Option<&[f64]>) -> Result<Eval> {
        let u = self.velocity(psi_hat);
        let norm = self.norm.norm(&u);
        let op = AdvectionOperator::new(self.plan.clone(), &u, self.opts.dealias);
        let sopts = SolverOptions {
            rtol: self.opts.solver_rtol,
            dealias: self.opts.dealias,
            trust_velocity: true,
            ..Default::default()
        };
        let pair = solve_symmetrized(&op, &self.fhat, &sopts, eta0)?;
        let lam = &self.plan.lambda;
        let eta_hat = pair.eta;
        let dirichlet: f64 = eta_hat.iter().zip(lam).map(|(c, l)| l * c * c).sum();
        let mut r = op.apply_coeffs(&eta_hat);
        r.iter_mut().zip(&self.fhat).for_each(|(r, f)| *r -= f);
        let residual = hminus1_sq_coeffs(lam, &r);
        // p = K⁻¹r; ∂J/∂u = p∇η − η∇p for the skew-symmetric advection form.
        let mut p_hat: Vec<f64> = r.iter().zip(lam).map(|(r, l)| r / l).collect();
        p_hat[0] = 0.0;
        let plan = &self.plan;
        let p = plan.inverse(&p_hat, Even, Even);
        let eta = plan.inverse(&eta_hat, Even, Even);
        let (ex, ey) = nodal_gradient(plan, &eta_hat);
        let (px, py) = nodal_gradient(plan, &p_hat);
        let n = p.len();
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for k in 0..n {
            gx[k] = p[k] * ex[k] - eta[k] * px[k];
            gy[k] = p[k] * ey[k] - eta[k] * py[k];
        }
        let grad = self.pullback(gx, gy);
        Ok(Eval {
            u,
            eta_hat,
            objective: dirichlet + residual,
            dirichlet,
            residual,
            grad,
            iterations: pair.iterations,
            norm,
        })
    }

    /// Adjoint of ψ̂ ↦ (∂yψ, −∂xψ) in the nodal mean inner product.
    fn pullback(&self, mut gx: Vec<f64>, mut gy: Vec<f64>) -> Vec<f64> {
        let nx = self.plan.nx();
        sweep_x(&self.plan.ax, &mut gx, &[RowOp::Forward(Odd)]);
        sweep_y(&self.plan.ay, nx, &mut gx, &[RowOp::Forward(Even), RowOp::Derivative(Even)]);
        sweep_y(&self.plan.ay, nx, &mut gy, &[RowOp::Forward(Odd)]);
        sweep_x(&self.plan.ax, &mut gy, &[RowOp::Forward(Even), RowOp::Derivative(Even)]);
        gx.iter().zip(&gy).map(|(a, b)| -a + b).collect()
    }

    fn initial_psi(&self, start: &Start, pe: f64) -> Vec<f64> {
        let (nx, ny) = (self.plan.nx(), self.plan.ny());
        let mut c = vec![0.0; nx * ny];
        match start {
            Start::Cellular { kx, ky } => {
                let (i, j) = ((*kx).clamp(1, nx) - 1, (*ky).clamp(1, ny) - 1);
                c[j * nx + i] = 1.0;
            }
            Start::Random { seed } | Start::NoFlow { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let kmax = 8.min(nx - 1).min(ny - 1);
                for j in 0..kmax {
                    for i in 0..kmax {
                        let decay = 1.0 / (1.0 + (i * i + j * j) as f64);
                        c[j * nx + i] = rng.gen_range(-1.0..1.0) * decay;
                    }
                }
            }
            Start::Psi(psi) => {
                c = self.plan.forward(&psi.values, Odd, Odd);
            }
        }
        let scale = match start {
            Start::NoFlow { .. } => 1e-3 * pe,
            _ => pe,
        };
        let norm = self.norm.norm(&self.velocity(&c));
        if norm > 0.0 {
            c.iter_mut().for_each(|v| *v *= scale / norm);
        }
        c
    }
}

fn nodal_gradient(plan: &NeumannSpectralPlan, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nx = plan.nx();
    let mut gx = c.to_vec();
    sweep_y(&plan.ay, nx, &mut gx, &[RowOp::Inverse(Even)]);
    sweep_x(&plan.ax, &mut gx, &[RowOp::Derivative(Even), RowOp::Inverse(Odd)]);
    let mut gy = c.to_vec();
    sweep_x(&plan.ax, &mut gy, &[RowOp::Inverse(Even)]);
    sweep_y(&plan.ay, nx, &mut gy, &[RowOp::Derivative(Even), RowOp::Inverse(Odd)]);
    (gx, gy)
}

/// Minimise J over ψ (with ‖u‖_X ≤ pe) and η, from one start.
///
/// A run that hits `max_iter` is returned with `converged = false`; its
/// objective is still a valid upper bound.
pub fn optimize_flow(f: &ScalarField, pe: f64, start: &Start, opts: &OptimizeOptions) -> Result<OptimizationState> {
    optimize_flow_with(f, pe, start, opts, &EnergyNorm)
}

pub fn optimize_flow_with(
    f: &ScalarField,
    pe: f64,
    start: &Start,
    opts: &OptimizeOptions,
    norm: &dyn FlowNorm,
) -> Result<OptimizationState> {
    if !(pe >= 0.0) || !pe.is_finite() {
        return Err(FluxError::Parameter(format!("pe must be finite and nonnegative, got {pe}")));
    }
    if let Start::Psi(p) = start {
        p.grid.check_same(&f.grid)?;
    }
    let prob = Problem::new(f, opts, norm)?;
    let mut psi = if pe == 0.0 { vec![0.0; f.grid.len()] } else { prob.initial_psi(start, pe) };
    let mut cur = prob.evaluate(&psi, None)?;
    let mut solver_iterations = cur.iterations;
    let mut history = vec![cur.objective];
    let mut converged = pe == 0.0 || cur.objective == 0.0;
    let mut iterations = 0;
    let mut alpha: Option<f64> = None;

    while !converged && iterations < opts.max_iter {
        iterations += 1;
        // Preconditioned descent direction in the H¹₀ metric on ψ.
        let mut d: Vec<f64> = cur.grad.iter().zip(&prob.sine_lambda).map(|(g, l)| -g / l).collect();
        let active = cur.norm >= pe * (1.0 - 1e-9);
        if active {
            let radial = prob.energy_dot(&d, &psi) / prob.energy_dot(&psi, &psi);
            if radial > 0.0 {
                d.iter_mut().zip(&psi).for_each(|(d, p)| *d -= radial * p);
            }
        }
        let slope: f64 = cur.grad.iter().zip(&d).map(|(g, d)| g * d).sum();
        if !(slope < 0.0) {
            converged = true;
            break;
        }
        let dnorm = prob.energy_dot(&d, &d).sqrt();
        let mut a = alpha.unwrap_or(opts.initial_step * pe / dnorm).min(opts.initial_step * pe / dnorm * 10.0);
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = psi.iter().zip(&d).map(|(p, d)| p + a * d).collect();
            let tn = prob.norm.norm(&prob.velocity(&trial));
            if tn > pe {
                trial.iter_mut().for_each(|v| *v *= pe / tn);
            }
            let ev = prob.evaluate(&trial, Some(&cur.eta_hat))?;
            solver_iterations += ev.iterations;
            if ev.objective <= cur.objective + 1e-4 * a * slope {
                accepted = Some((trial, ev));
                break;
            }
            a *= 0.5;
        }
        let Some((trial, ev)) = accepted else {
            converged = true;
            break;
        };
        let decrease = (cur.objective - ev.objective) / cur.objective;
        psi = trial;
        cur = ev;
        history.push(cur.objective);
        alpha = Some(a * 2.0);
        if decrease < opts.rel_tol {
            converged = true;
        }
    }

    let eta = ScalarField::from_values(f.grid, prob.plan.inverse(&cur.eta_hat, Even, Even))?;
    Ok(OptimizationState {
        psi: prob.psi_field(&psi),
        u: cur.u,
        eta,
        pe,
        objective: cur.objective,
        dirichlet_part: cur.dirichlet,
        residual_part: cur.residual,
        constraint_norm: cur.norm,
        iterations,
        solver_iterations,
        converged,
        history,
        start: start.label(),
    })
}

/// Best of several independent starts.
pub fn optimize_multistart(
    f: &ScalarField,
    pe: f64,
    starts: &[Start],
    opts: &OptimizeOptions,
) -> Result<(OptimizationState, Vec<f64>)> {
    let runs: Vec<Result<OptimizationState>> = starts.par_iter().map(|s| optimize_flow(f, pe, s, opts)).collect();
    let mut best: Option<OptimizationState> = None;
    let mut scatter = Vec::new();
    for r in runs {
        let s = r?;
        scatter.push(s.objective);
        if best.as_ref().map_or(true, |b| s.objective < b.objective) {
            best = Some(s);
        }
    }
    best.map(|b| (b, scatter)).ok_or_else(|| FluxError::Parameter("no starts given".into()))
}

/// ‖u₀·∇T₀ − f‖_{H⁻¹}.
pub fn pure_advection_residual(u0: &VectorField, t0: &ScalarField, f: &ScalarField) -> Result<f64> {
    pure_advection_residual_with(u0, t0, f, Dealias::default())
}

pub fn pure_advection_residual_with(u0: &VectorField, t0: &ScalarField, f: &ScalarField, dealias: Dealias) -> Result<f64> {
    u0.grid().check_same(&t0.grid)?;
    f.grid.check_same(&t0.grid)?;
    check_mean_free(f)?;
    let plan = NeumannSpectralPlan::for_grid(&f.grid);
    let op = AdvectionOperator::new(plan.clone(), u0, dealias);
    let c = plan.forward(&t0.values, Even, Even);
    let mut r = op.apply_coeffs(&c);
    let fh = plan.forward(&f.values, Even, Even);
    r.iter_mut().zip(&fh).skip(1).for_each(|(r, f)| *r -= f);
    Ok(hminus1_sq_coeffs(&plan.lambda, &r).sqrt())
}

/// (u/Pe, Pe·η) and its pure-advection residual.
pub fn rescaled_limit_point(state: &OptimizationState, f: &ScalarField) -> Result<(VectorField, ScalarField, f64)> {
    if state.pe == 0.0 {
        let u0 = VectorField::zeros(f.grid);
        let t0 = ScalarField::zeros(f.grid);
        let r = pure_advection_residual(&u0, &t0, f)?;
        return Ok((u0, t0, r));
    }
    let u0 = state.u.scaled(1.0 / state.pe);
    let t0 = state.eta.scaled(state.pe);
    let r = pure_advection_residual_with(&u0, &t0, f, Dealias::None)?;
    Ok((u0, t0, r))
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitPoint {
    pub pe: f64,
    /// m(Pe): best J found.
    pub m: f64,
    pub pe_sq_m: f64,
    pub constraint_activity: f64,
    /// Pure-advection residual of (u/Pe, Pe·η).
    pub residual: f64,
    /// ⨍|u/Pe|².
    pub limit_velocity_norm: f64,
    pub start: String,
    /// Objectives reached from every start.
    pub scatter: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LimitStudy {
    pub points: Vec<LimitPoint>,
    /// c in the fit Pe²m = c + d/Pe over the top half of the ladder.
    pub extrapolated: f64,
    /// ⨍|∇T₀|² of the supplied pure-advection pair, rescaled to unit norm.
    pub reference_value: Option<f64>,
    /// Whether m(Pe) is nonincreasing along the ladder.
    pub monotone: bool,
    #[serde(skip)]
    pub states: Vec<OptimizationState>,
}

#[derive(Debug, Clone)]
pub struct LimitOptions {
    pub optimize: OptimizeOptions,
    /// Cold starts tried at every ladder point, besides the warm start.
    pub starts: Vec<Start>,
}

impl LimitOptions {
    /// Cellular start with half the dominant wavenumber of f, one random
    /// start and a perturbed no-flow start.
    pub fn for_source(f: &ScalarField, seed: u64) -> Self {
        let plan = NeumannSpectralPlan::for_grid(&f.grid);
        let c = plan.forward(&f.values, Even, Even);
        let nx = plan.nx();
        let (mut best, mut at) = (0.0, (1, 1));
        for (k, v) in c.iter().enumerate().skip(1) {
            if v.abs() > best {
                best = v.abs();
                at = (k % nx, k / nx);
            }
        }
        let kx = (at.0.max(at.1) / 2).max(1);
        Self {
            optimize: OptimizeOptions::default(),
            starts: vec![Start::Cellular { kx, ky: kx }, Start::Random { seed }, Start::NoFlow { seed: seed + 1 }],
        }
    }
}

/// Optimise along an increasing Pe ladder, warm-starting each point from
/// the previous optimum under (u, η) ↦ (u·Pe'/Pe, η·Pe/Pe').
pub fn limit_study(
    f: &ScalarField,
    ladder: &[f64],
    reference: Option<(&VectorField, &ScalarField)>,
    opts: &LimitOptions,
) -> Result<LimitStudy> {
    if ladder.len() < 4 || ladder.windows(2).any(|w| !(w[1] > w[0])) || ladder[0] <= 0.0 {
        return Err(FluxError::Parameter("ladder must be positive, increasing, with at least 4 points".into()));
    }
    let reference_value = match reference {
        Some((u0, t0)) => {
            let n = u0.mean_square().sqrt();
            if n == 0.0 {
                return Err(FluxError::DegenerateFlow("reference velocity is zero".into()));
            }
            // (u₀, T₀) ↦ (u₀/n, n T₀) keeps u₀·∇T₀ and normalises u₀.
            Some(crate::neumann::dirichlet_energy(t0) * n * n)
        }
        None => None,
    };
    let mut points = Vec::new();
    let mut states: Vec<OptimizationState> = Vec::new();
    for &pe in ladder {
        let mut starts = opts.starts.clone();
        if let Some(prev) = states.last() {
            starts.insert(0, Start::Psi(prev.psi.clone()));
        }
        let (mut best, scatter) = optimize_multistart(f, pe, &starts, &opts.optimize)?;
        // The previous optimum is feasible here, so m(Pe) never increases.
        if let Some(prev) = states.last() {
            if prev.objective < best.objective {
                best = OptimizationState { pe, start: format!("carried from pe={}", prev.pe), ..prev.clone() };
            }
        }
        let (u0, _, residual) = rescaled_limit_point(&best, f)?;
        points.push(LimitPoint {
            pe,
            m: best.objective,
            pe_sq_m: pe * pe * best.objective,
            constraint_activity: best.constraint_activity(),
            residual,
            limit_velocity_norm: u0.mean_square().sqrt(),
            start: best.start.clone(),
            scatter,
            converged: best.converged,
        });
        states.push(best);
    }
    let monotone = points.windows(2).all(|w| w[1].m <= w[0].m + 1e-10);
    let half = &points[points.len() / 2..];
    let extrapolated = fit_limit(half);
    Ok(LimitStudy { points, extrapolated, reference_value, monotone, states })
}

/// Least-squares intercept of Pe²m against 1/Pe.
fn fit_limit(points: &[LimitPoint]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| 1.0 / p.pe).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.pe_sq_m).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return my;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    my - sxy / sxx * mx
}
