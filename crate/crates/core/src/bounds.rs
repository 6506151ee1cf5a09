//! Lower and upper variational bounds on the mean dissipation ⨍|∇T|².
//!
//! For any steady test functions ξ, η,
//!
//!   2⨍fξ − ⨍|∇ξ|² − ‖u·∇ξ‖²_{H⁻¹}  ≤  ⨍|∇T|²  ≤  ⨍|∇η|² + ‖u·∇η − f‖²_{H⁻¹},
//!
//! and both are attained by ξ = (T + T†)/2, η = (T − T†)/2, where T† solves
//! the adjoint problem with −u.

use serde::Serialize;

use crate::error::{FluxError, Result};
use crate::field::{l2_inner, Grid, ScalarField, VectorField};
use crate::neumann::{
    check_incompressible, check_mean_free, coeff_dot, hminus1_sq_coeffs, AdvectionOperator, Dealias,
};
use crate::spectral::{NeumannSpectralPlan, Parity};
use crate::transport::{solve_pair, SolverOptions, TransportSolution, UnsteadyTrace};

/// Both bound functionals for one velocity and source, with the operator
/// built once.
pub struct BoundEvaluator {
    plan: std::sync::Arc<NeumannSpectralPlan>,
    op: AdvectionOperator,
    fhat: Vec<f64>,
}

impl BoundEvaluator {
    pub fn new(u: &VectorField, f: &ScalarField, dealias: Dealias) -> Result<Self> {
        u.grid().check_same(&f.grid)?;
        check_mean_free(f)?;
        check_incompressible(u)?;
        let plan = NeumannSpectralPlan::for_grid(&f.grid);
        let op = AdvectionOperator::new(plan.clone(), u, dealias);
        let mut fhat = plan.forward(&f.values, Parity::Even, Parity::Even);
        fhat[0] = 0.0;
        Ok(Self { plan, op, fhat })
    }

    fn coeffs(&self, g: &ScalarField) -> Result<Vec<f64>> {
        self.plan.grid.check_same(&g.grid)?;
        Ok(self.plan.forward(&g.values, Parity::Even, Parity::Even))
    }

    fn dirichlet(&self, c: &[f64]) -> f64 {
        c.iter().zip(&self.plan.lambda).map(|(c, l)| l * c * c).sum()
    }

    /// ‖u·∇ξ‖²_{H⁻¹}.
    pub fn advective_penalty(&self, xi: &ScalarField) -> Result<f64> {
        let c = self.coeffs(xi)?;
        Ok(hminus1_sq_coeffs(&self.plan.lambda, &self.op.apply_coeffs(&c)))
    }

    /// (⨍fξ, ⨍|∇ξ|², ‖u·∇ξ‖²_{H⁻¹}).
    pub fn lower_terms(&self, xi: &ScalarField) -> Result<(f64, f64, f64)> {
        let c = self.coeffs(xi)?;
        let a = self.op.apply_coeffs(&c);
        Ok((coeff_dot(&self.fhat, &c), self.dirichlet(&c), hminus1_sq_coeffs(&self.plan.lambda, &a)))
    }

    pub fn lower(&self, xi: &ScalarField) -> Result<f64> {
        let (fx, d, p) = self.lower_terms(xi)?;
        Ok(2.0 * fx - d - p)
    }

    /// (⨍|∇η|², ‖u·∇η − f‖²_{H⁻¹}).
    pub fn upper_terms(&self, eta: &ScalarField) -> Result<(f64, f64)> {
        let c = self.coeffs(eta)?;
        let mut r = self.op.apply_coeffs(&c);
        r.iter_mut().zip(&self.fhat).for_each(|(r, f)| *r -= f);
        Ok((self.dirichlet(&c), hminus1_sq_coeffs(&self.plan.lambda, &r)))
    }

    pub fn upper(&self, eta: &ScalarField) -> Result<f64> {
        let (d, p) = self.upper_terms(eta)?;
        Ok(d + p)
    }

    pub fn quotient(&self, xi: &ScalarField) -> Result<f64> {
        let (fx, d, p) = self.lower_terms(xi)?;
        let den = d + p;
        let c = self.coeffs(xi)?;
        let size: f64 = c.iter().skip(1).map(|c| c * c).sum::<f64>() + c[0] * c[0];
        if !(den > 1e-13 * self.plan.lambda1() * size) {
            return Err(FluxError::DegenerateTestFunction(
                "test function is constant: its Dirichlet energy and advective penalty vanish".into(),
            ));
        }
        Ok(fx * fx / den)
    }
}

/// 2⨍fξ − ⨍|∇ξ|² − ⨍|∇Δ⁻¹(u·∇ξ)|², with the solver's default advection.
pub fn lower_bound_steady(xi: &ScalarField, u: &VectorField, f: &ScalarField) -> Result<f64> {
    lower_bound_steady_with(xi, u, f, Dealias::default())
}

pub fn lower_bound_steady_with(xi: &ScalarField, u: &VectorField, f: &ScalarField, dealias: Dealias) -> Result<f64> {
    BoundEvaluator::new(u, f, dealias)?.lower(xi)
}

/// ⨍|∇η|² + ⨍|∇Δ⁻¹(u·∇η − f)|².
pub fn upper_bound_steady(eta: &ScalarField, u: &VectorField, f: &ScalarField) -> Result<f64> {
    upper_bound_steady_with(eta, u, f, Dealias::default())
}

pub fn upper_bound_steady_with(eta: &ScalarField, u: &VectorField, f: &ScalarField, dealias: Dealias) -> Result<f64> {
    BoundEvaluator::new(u, f, dealias)?.upper(eta)
}

/// (⨍fξ)² / (⨍|∇ξ|² + ‖u·∇ξ‖²_{H⁻¹}), the lower bound optimised over
/// multiples of ξ.
pub fn quotient_lower_bound(xi: &ScalarField, u: &VectorField, f: &ScalarField) -> Result<f64> {
    BoundEvaluator::new(u, f, Dealias::default())?.quotient(xi)
}

/// ξ* = (T + T†)/2 and η* = (T − T†)/2.
pub fn symmetrize(direct: &TransportSolution, adjoint: &TransportSolution) -> Result<(ScalarField, ScalarField)> {
    let g = direct.t.grid;
    g.check_same(&adjoint.t.grid)?;
    let fscale = direct.f.max_abs().max(f64::MIN_POSITIVE);
    let fdiff = direct.f.sub(&adjoint.f)?.max_abs();
    if fdiff > 1e-12 * fscale {
        return Err(FluxError::Consistency(format!("direct and adjoint sources differ by {fdiff:.3e}")));
    }
    let uscale = direct.u.max_abs();
    let udiff = direct.u.x.add(&adjoint.u.x)?.max_abs().max(direct.u.y.add(&adjoint.u.y)?.max_abs());
    if udiff > 1e-12 * uscale.max(f64::MIN_POSITIVE) && udiff > 0.0 {
        return Err(FluxError::Consistency(format!(
            "adjoint velocity is not the negated direct velocity (max deviation {udiff:.3e})"
        )));
    }
    let xi = direct.t.add(&adjoint.t)?.scaled(0.5);
    let eta = direct.t.sub(&adjoint.t)?.scaled(0.5);
    Ok((xi, eta))
}

/// H⁻¹ norms of the two decoupled equations u·∇η − f − Δξ = 0 and
/// u·∇ξ − Δη = 0, relative to ‖f‖_{H⁻¹}.
pub fn euler_lagrange_residuals(
    xi: &ScalarField,
    eta: &ScalarField,
    u: &VectorField,
    f: &ScalarField,
    dealias: Dealias,
) -> Result<(f64, f64)> {
    let ev = BoundEvaluator::new(u, f, dealias)?;
    let (cx, ce) = (ev.coeffs(xi)?, ev.coeffs(eta)?);
    let lam = &ev.plan.lambda;
    let mut r1 = ev.op.apply_coeffs(&ce);
    let mut r2 = ev.op.apply_coeffs(&cx);
    for k in 1..r1.len() {
        r1[k] += -ev.fhat[k] + lam[k] * cx[k];
        r2[k] += lam[k] * ce[k];
    }
    r1[0] = 0.0;
    r2[0] = 0.0;
    let scale = hminus1_sq_coeffs(lam, &ev.fhat).sqrt().max(f64::MIN_POSITIVE);
    Ok((hminus1_sq_coeffs(lam, &r1).sqrt() / scale, hminus1_sq_coeffs(lam, &r2).sqrt() / scale))
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundCertificate {
    pub lower: f64,
    pub upper: f64,
    pub dissipation: f64,
    /// dissipation − lower.
    pub gap_lower: f64,
    /// upper − dissipation.
    pub gap_upper: f64,
    /// ⨍∇ξ*·∇η*.
    pub orthogonality: f64,
    /// |⨍|∇ξ*|² + ⨍|∇η*|² − dissipation| / dissipation.
    pub energy_split_mismatch: f64,
    pub solver_residual: f64,
    pub iterations: usize,
    #[serde(skip)]
    pub xi: ScalarField,
    #[serde(skip)]
    pub eta: ScalarField,
}

impl BoundCertificate {
    pub fn relative_gaps(&self) -> (f64, f64) {
        let d = self.dissipation.abs().max(f64::MIN_POSITIVE);
        (self.gap_lower / d, self.gap_upper / d)
    }
}

/// Solve the direct and adjoint problems, symmetrise, and evaluate both
/// bounds at the optimal pair.
///
/// The solver runs with `opts.dealias`; the bounds are evaluated with
/// nodal products (no padding). The gaps therefore measure how far the
/// discrete solution is from satisfying the optimality conditions of an
/// independent discretisation, which vanishes under grid refinement, rather
/// than the solver's own round-off.
pub fn certify_sharpness(u: &VectorField, f: &ScalarField) -> Result<BoundCertificate> {
    certify_sharpness_with(u, f, &SolverOptions::default(), Dealias::None)
}

pub fn certify_sharpness_with(
    u: &VectorField,
    f: &ScalarField,
    opts: &SolverOptions,
    evaluation: Dealias,
) -> Result<BoundCertificate> {
    let (direct, adjoint) = solve_pair(u, f, opts)?;
    let (xi, eta) = symmetrize(&direct, &adjoint)?;
    let ev = BoundEvaluator::new(u, f, evaluation)?;
    let lower = ev.lower(&xi)?;
    let upper = ev.upper(&eta)?;
    let d = direct.dissipation;
    let cx = ev.coeffs(&xi)?;
    let ce = ev.coeffs(&eta)?;
    let lam = &ev.plan.lambda;
    let orthogonality: f64 = cx.iter().zip(&ce).zip(lam).map(|((a, b), l)| l * a * b).sum();
    let split = ev.dirichlet(&cx) + ev.dirichlet(&ce);
    Ok(BoundCertificate {
        lower,
        upper,
        dissipation: d,
        gap_lower: d - lower,
        gap_upper: upper - d,
        orthogonality,
        energy_split_mismatch: if d > 0.0 { ((split - d) / d).abs() } else { split.abs() },
        solver_residual: direct.solver_residual,
        iterations: direct.iterations,
        xi,
        eta,
    })
}

/// (⨍ξf)² / (⨍|∇ξ|² + C‖ξ‖²_BMO Pe²): the bound available when only the
/// kinetic-energy budget ⨍|u|² = Pe² is known.
pub fn energy_lower_bound(xi: &ScalarField, f: &ScalarField, pe_sq: f64, c_clms: f64) -> Result<f64> {
    let bmo = crate::norms::bmo_norm(xi);
    energy_lower_bound_with_bmo(xi, f, pe_sq, c_clms, bmo)
}

/// As [`energy_lower_bound`] with a precomputed BMO estimate.
pub fn energy_lower_bound_with_bmo(xi: &ScalarField, f: &ScalarField, pe_sq: f64, c_clms: f64, bmo: f64) -> Result<f64> {
    if !(pe_sq >= 0.0) || !(c_clms > 0.0) {
        return Err(FluxError::Parameter(format!("need pe_sq >= 0 and c_clms > 0, got {pe_sq}, {c_clms}")));
    }
    xi.grid.check_same(&f.grid)?;
    let plan = NeumannSpectralPlan::for_grid(&xi.grid);
    let c = plan.forward(&xi.values, Parity::Even, Parity::Even);
    let d: f64 = c.iter().zip(&plan.lambda).map(|(c, l)| l * c * c).sum();
    let size: f64 = c.iter().map(|c| c * c).sum();
    if !(d > 1e-13 * plan.lambda1() * size) {
        return Err(FluxError::DegenerateTestFunction("test function is constant".into()));
    }
    let num = l2_inner(xi, f)?;
    Ok(num * num / (d + c_clms * bmo * bmo * pe_sq))
}

/// Test functions to pass as unsteady monitors, in the order
/// [`unsteady_bound_check`] expects.
pub fn unsteady_monitors(xi: &ScalarField, eta: &ScalarField) -> Vec<ScalarField> {
    vec![xi.clone(), eta.clone()]
}

/// Finite-horizon sandwich with its boundary terms.
#[derive(Debug, Clone, Serialize)]
pub struct UnsteadyBoundReport {
    pub horizon: f64,
    pub dissipation: f64,
    /// 2⨍fξ − ⨍|∇ξ|² − ⟨‖u·∇ξ‖²_{H⁻¹}⟩_τ.
    pub lower: f64,
    /// ⨍|∇η|² + ⟨‖u·∇η − f‖²_{H⁻¹}⟩_τ.
    pub upper: f64,
    /// (2/τ)⨍(T(τ) − T(0))ξ.
    pub boundary_xi: f64,
    /// (2/τ)⨍(T(τ) − T(0))η.
    pub boundary_eta: f64,
    /// (1/τ)(⨍T(τ)² − ⨍T(0)²).
    pub boundary_energy: f64,
    /// lower − boundary_xi, a strict lower bound on the finite-horizon dissipation.
    pub lower_corrected: f64,
    /// upper + boundary_eta − boundary_energy, a strict upper bound.
    pub upper_corrected: f64,
    /// |boundary_xi| + |boundary_eta − boundary_energy|; vanishes as τ → ∞
    /// for bounded trajectories.
    pub slack: f64,
    pub lower_holds: bool,
    pub upper_holds: bool,
    /// ‖T(τ)‖/√τ.
    pub growth_diagnostic: f64,
}

/// Check the sandwich on a trace produced with `unsteady_monitors(ξ, η)`.
pub fn unsteady_bound_check(
    xi: &ScalarField,
    eta: &ScalarField,
    f: &ScalarField,
    trace: &UnsteadyTrace,
) -> Result<UnsteadyBoundReport> {
    if trace.monitors.len() < 2 {
        return Err(FluxError::Consistency(
            "trace must carry the monitors [xi, eta] (see unsteady_monitors)".into(),
        ));
    }
    check_mean_free(f)?;
    let g: Grid = f.grid;
    g.check_same(&xi.grid)?;
    g.check_same(&eta.grid)?;
    g.check_same(&trace.terminal.grid)?;
    let plan = NeumannSpectralPlan::for_grid(&g);
    let lam = &plan.lambda;
    let dir = |s: &ScalarField| -> f64 {
        let c = plan.forward(&s.values, Parity::Even, Parity::Even);
        c.iter().zip(lam).map(|(c, l)| l * c * c).sum()
    };
    let (mx, me) = (&trace.monitors[0], &trace.monitors[1]);
    let tau = trace.horizon;
    let lower = 2.0 * l2_inner(f, xi)? - dir(xi) - mx.advective_penalty;
    let upper = dir(eta) + me.residual_penalty;
    let boundary_xi = 2.0 * (mx.terminal_inner - mx.initial_inner) / tau;
    let boundary_eta = 2.0 * (me.terminal_inner - me.initial_inner) / tau;
    let boundary_energy = (trace.terminal_norm.powi(2) - trace.initial_norm.powi(2)) / tau;
    let lower_corrected = lower - boundary_xi;
    let upper_corrected = upper + boundary_eta - boundary_energy;
    let d = trace.dissipation_avg;
    let tol = 1e-8 * d.abs().max(upper.abs());
    Ok(UnsteadyBoundReport {
        horizon: tau,
        dissipation: d,
        lower,
        upper,
        boundary_xi,
        boundary_eta,
        boundary_energy,
        lower_corrected,
        upper_corrected,
        slack: boundary_xi.abs() + (boundary_eta - boundary_energy).abs(),
        lower_holds: d >= lower_corrected - tol,
        upper_holds: d <= upper_corrected + tol,
        growth_diagnostic: trace.growth_diagnostic,
    })
}
