//! Rayleigh-number lower bounds on the dissipation of buoyancy-driven flow
//! with internal heating, from the balance laws alone.
//!
//! With g = ∇φ, E = ⨍|∇u|² and D = ⨍|∇T|², the energy and potential-energy
//! balances give E = Ra(⨍g·∇T − ⨍fφ) ≤ Ra‖g‖D^½ − Ra⨍fφ. Combined with the
//! Poincaré inequality ⨍|u|² ≤ μ²E and the energy-constrained lower bound
//! D ≥ C1/(C2 + C3E), this yields three regimes in the sign of ⨍fφ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{FluxError, Result};
use crate::field::{l2_inner, Grid, ScalarField};
use crate::neumann::{check_mean_free, dirichlet_energy};
use crate::spectral::NeumannSpectralPlan;
use crate::transport::{potential_energy_terms, TransportSolution};

/// Smallest ⨍|∇u|²/⨍|u|² over u = ∇⊥ψ with ψ = 0 on the boundary, by
/// inverse power iteration on the stream-function quotient ⨍|Δψ|²/⨍|∇ψ|².
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PoincareEstimate {
    /// μ = (minimum quotient)^(−½).
    pub mu: f64,
    pub min_quotient: f64,
    pub iterations: usize,
}

pub fn poincare_mu(grid: &Grid) -> Result<PoincareEstimate> {
    let plan = NeumannSpectralPlan::for_grid(grid);
    let (nx, ny) = (plan.nx(), plan.ny());
    // In the sine basis both forms are diagonal: ⨍|∇ψ|² = Σλc², ⨍|Δψ|² = Σλ²c².
    // The sine Nyquist modes carry no velocity and are left out.
    let mut lam = Vec::with_capacity((nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (kx, ky) = (plan.ax.wavenumber[i + 1], plan.ay.wavenumber[j + 1]);
            lam.push(kx * kx + ky * ky);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut c: Vec<f64> = lam.iter().map(|_| rng.gen_range(0.5..1.0)).collect();
    let quotient = |c: &[f64]| -> f64 {
        let num: f64 = c.iter().zip(&lam).map(|(c, l)| l * l * c * c).sum();
        let den: f64 = c.iter().zip(&lam).map(|(c, l)| l * c * c).sum();
        num / den
    };
    let mut q = quotient(&c);
    for it in 1..=10_000 {
        // ψ ← (Δ²)⁻¹(−Δ)ψ.
        c.iter_mut().zip(&lam).for_each(|(c, l)| *c /= l);
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        c.iter_mut().for_each(|v| *v /= norm);
        let qn = quotient(&c);
        if (q - qn).abs() <= 1e-14 * qn {
            return Ok(PoincareEstimate { mu: 1.0 / qn.sqrt(), min_quotient: qn, iterations: it });
        }
        q = qn;
    }
    Err(FluxError::NoConvergence { iterations: 10_000, residual: q, target: 1e-14 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Positive,
    Zero,
    Negative,
}

impl Regime {
    /// Exponent α in bound ∝ Ra^(−α).
    pub fn exponent(self) -> f64 {
        match self {
            Regime::Positive => 0.0,
            Regime::Zero => 2.0 / 3.0,
            Regime::Negative => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PotentialCoupling {
    /// ⨍fφ.
    pub value: f64,
    pub regime: Regime,
    /// Width of the zero band.
    pub ztol: f64,
}

/// ⨍fφ, classified with the zero band 10⁻¹⁰‖f‖‖φ‖ (averaged L² norms).
pub fn potential_coupling(f: &ScalarField, phi: &ScalarField) -> Result<PotentialCoupling> {
    check_mean_free(f)?;
    let value = l2_inner(f, phi)?;
    let ztol = 1e-10 * (l2_inner(f, f)? * l2_inner(phi, phi)?).sqrt();
    Ok(classify(value, ztol))
}

pub fn classify(value: f64, ztol: f64) -> PotentialCoupling {
    let regime = if value > ztol {
        Regime::Positive
    } else if value < -ztol {
        Regime::Negative
    } else {
        Regime::Zero
    };
    PotentialCoupling { value, regime, ztol }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundConstants {
    /// (⨍ξf)².
    pub c1: f64,
    /// ⨍|∇ξ|².
    pub c2: f64,
    /// c_clms ‖ξ‖²_BMO μ².
    pub c3: f64,
    pub mu: f64,
    pub c_clms: f64,
    pub xi_bmo: f64,
    /// Description of ξ, carried into reports.
    pub xi_label: String,
}

pub fn constants_from_xi(xi: &ScalarField, f: &ScalarField, mu: f64, c_clms: f64) -> Result<BoundConstants> {
    constants_from_xi_labeled(xi, f, mu, c_clms, "xi")
}

pub fn constants_from_xi_labeled(
    xi: &ScalarField,
    f: &ScalarField,
    mu: f64,
    c_clms: f64,
    label: &str,
) -> Result<BoundConstants> {
    if !(mu > 0.0) || !(c_clms > 0.0) {
        return Err(FluxError::Parameter(format!("mu and c_clms must be positive, got {mu}, {c_clms}")));
    }
    check_mean_free(f)?;
    let fx = l2_inner(xi, f)?;
    let c2 = dirichlet_energy(xi);
    let scale = (l2_inner(xi, xi)? * l2_inner(f, f)?).sqrt();
    if c2 <= 1e-13 * l2_inner(xi, xi)?.max(f64::MIN_POSITIVE) || fx.abs() <= 1e-14 * scale {
        return Err(FluxError::DegenerateTestFunction(
            "test function must be nonconstant and correlate with the source".into(),
        ));
    }
    let bmo = crate::norms::bmo_norm(xi);
    Ok(BoundConstants {
        c1: fx * fx,
        c2,
        c3: c_clms * bmo * bmo * mu * mu,
        mu,
        c_clms,
        xi_bmo: bmo,
        xi_label: label.to_string(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RayleighBoundReport {
    pub ra: f64,
    pub coupling: f64,
    pub regime: Regime,
    /// α in bound ∝ Ra^(−α).
    pub exponent: f64,
    /// Lower bound on ⨍|∇T|².
    pub bound: f64,
    /// Ra₀ (zero regime) or Ra₁ (negative regime).
    pub threshold: Option<f64>,
    pub above_threshold: bool,
    /// The inequality defining the threshold.
    pub threshold_rule: &'static str,
    pub c_clms: f64,
}

/// Zero regime: D ≥ min(C1/(2C2), (C1/(2C3‖g‖Ra))^(2/3)); the second branch is
/// the smaller one exactly when Ra ≥ Ra₀ = (2C2³/(C1C3²‖g‖²))^½.
pub fn threshold_zero(c: &BoundConstants, g_norm_sq: f64) -> f64 {
    (2.0 * c.c2.powi(3) / (c.c1 * c.c3 * c.c3 * g_norm_sq)).sqrt()
}

/// Negative regime, a = |⨍fφ|: if ‖g‖D^½ ≤ a the enstrophy is at most 2aRa
/// and the bound follows; otherwise D > a²/‖g‖², which dominates
/// C1/(2C2 + 2C3aRa) once Ra ≥ Ra₁ = max(0, (C1‖g‖²/a² − 2C2)/(2C3a)).
pub fn threshold_negative(c: &BoundConstants, a: f64, g_norm_sq: f64) -> f64 {
    ((c.c1 * g_norm_sq / (a * a) - 2.0 * c.c2) / (2.0 * c.c3 * a)).max(0.0)
}

pub fn rayleigh_bound(
    c: &BoundConstants,
    coupling: &PotentialCoupling,
    g_norm_sq: f64,
    ra: f64,
) -> Result<RayleighBoundReport> {
    if !(g_norm_sq > 0.0) || !(ra > 0.0) {
        return Err(FluxError::Parameter(format!("need g_norm_sq > 0 and Ra > 0, got {g_norm_sq}, {ra}")));
    }
    let fp = coupling.value;
    let (bound, threshold, rule) = match coupling.regime {
        Regime::Positive => (fp * fp / g_norm_sq, None, "none: valid for all Ra"),
        Regime::Zero => (
            (c.c1 / (2.0 * c.c3 * g_norm_sq.sqrt() * ra)).powf(2.0 / 3.0),
            Some(threshold_zero(c, g_norm_sq)),
            "(C1/(2C3|g|Ra))^(2/3) <= C1/(2C2)",
        ),
        Regime::Negative => {
            let a = fp.abs();
            (
                c.c1 / (2.0 * c.c2 + 2.0 * c.c3 * a * ra),
                Some(threshold_negative(c, a, g_norm_sq)),
                "|fphi|^2/|g|^2 >= C1/(2C2 + 2C3|fphi|Ra)",
            )
        }
    };
    Ok(RayleighBoundReport {
        ra,
        coupling: fp,
        regime: coupling.regime,
        exponent: coupling.regime.exponent(),
        bound,
        threshold,
        above_threshold: threshold.map_or(true, |t| ra >= t),
        threshold_rule: rule,
        c_clms: c.c_clms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EnstrophyReport {
    /// Ra(⨍g·∇T − ⨍fφ).
    pub candidate_enstrophy: f64,
    /// Ra‖g‖D^½ − Ra⨍fφ.
    pub bound: f64,
    /// bound − candidate, nonnegative by Cauchy–Schwarz.
    pub slack: f64,
    /// Ra⨍g·uT, equal to the candidate when the potential-energy balance holds.
    pub buoyancy_work: f64,
    pub balance_residual: f64,
}

/// Evaluate the enstrophy estimate on a steady solution.
pub fn enstrophy_budget_check(sol: &TransportSolution, phi: &ScalarField, ra: f64) -> Result<EnstrophyReport> {
    let terms = potential_energy_terms(sol, phi)?;
    let g_sq = dirichlet_energy(phi);
    let candidate = ra * (terms.diffusive_flux - terms.source_coupling);
    let bound = ra * (g_sq * sol.dissipation).sqrt() - ra * terms.source_coupling;
    Ok(EnstrophyReport {
        candidate_enstrophy: candidate,
        bound,
        slack: bound - candidate,
        buoyancy_work: ra * terms.advective_flux,
        balance_residual: terms.residual,
    })
}
