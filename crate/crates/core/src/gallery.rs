//! Closed-form flows, sources and test functions.
//!
//! * The cellular construction on (0, 2π)²: ψ = ℓ sin(x/ℓ) sin(y/ℓ) and
//!   η = −ℓ cos(x/ℓ) cos(y/ℓ), which advects exactly onto the sinusoidal
//!   source ½cos(2y/ℓ) − ½cos(2x/ℓ).
//! * The pinching construction on (−1, 1)² for a source/sink pair of radius
//!   ε at (0, ±½): two trapezoidal channels, written in polar coordinates
//!   about (0, ½ + 2ε), feed a horizontal jet through the rectangle
//!   R_ε = [−√3ε, √3ε] × [½ − ε, ½ + ε] that crosses the source. Inside R_ε,
//!   η is obtained by integrating f/∂yψ along the jet; outside, η is carried
//!   unchanged along the radial streamlines. The lower half is the mirror
//!   image: ψ and η are even in y, so u_x is odd and u_y even.

use std::f64::consts::PI;
use std::sync::OnceLock;

use gauss_quad::GaussLegendre;
use serde::Serialize;

use crate::error::{FluxError, Result};
use crate::field::{Domain, Grid, ScalarField, VectorField};
use crate::neumann::perp_gradient_unchecked;

/// Upper end of the admissible source radius.
pub const EPS_MAX: f64 = 1.0 / 20.0;

fn gauss() -> &'static GaussLegendre {
    static RULE: OnceLock<GaussLegendre> = OnceLock::new();
    RULE.get_or_init(|| GaussLegendre::new(24).expect("valid Gauss-Legendre degree"))
}

/// Composite Gauss–Legendre quadrature of `f` over [a, b].
pub fn integrate(a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let rule = gauss();
    (0..panels)
        .map(|k| {
            let lo = a + k as f64 * h;
            rule.integrate(lo, lo + h, &f)
        })
        .sum()
}

fn inverse_ell(ell: f64) -> Result<usize> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(FluxError::Parameter(format!("cell size must be positive, got {ell}")));
    }
    let k = 1.0 / ell;
    let r = k.round();
    if r < 1.0 || (k - r).abs() > 1e-9 * k.max(1.0) {
        return Err(FluxError::Parameter(format!("1/ell must be a positive integer, got {k}")));
    }
    Ok(r as usize)
}

fn check_domain(grid: &Grid, want: &Domain, what: &str) -> Result<()> {
    if grid.domain.approx_eq(want, 1e-12) {
        Ok(())
    } else {
        Err(FluxError::Parameter(format!("{what} is defined on {want:?}, grid is on {:?}", grid.domain)))
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < EPS_MAX {
        Ok(())
    } else {
        Err(FluxError::Parameter(format!("eps must lie in (0, 1/20), got {eps}")))
    }
}

/// f = ½cos(2y/ℓ) − ½cos(2x/ℓ) on (0, 2π)².
pub fn sinusoidal_source(ell: f64, grid: &Grid) -> Result<ScalarField> {
    inverse_ell(ell)?;
    check_domain(grid, &Domain::two_pi_square(), "the sinusoidal source")?;
    let mut f = ScalarField::from_fn(*grid, |x, y| sinusoidal_value(ell, x, y));
    f.mean_free = true;
    Ok(f)
}

pub fn sinusoidal_value(ell: f64, x: f64, y: f64) -> f64 {
    0.5 * (2.0 * y / ell).cos() - 0.5 * (2.0 * x / ell).cos()
}

/// Rescale u so that ⨍|u|² = pe².
pub fn normalize_to_pe(u: &VectorField, pe: f64) -> Result<VectorField> {
    if pe == 0.0 {
        return Ok(VectorField::zeros(u.grid()));
    }
    let ms = u.mean_square();
    if ms <= 0.0 {
        return Err(FluxError::DegenerateFlow("cannot normalise a zero velocity field".into()));
    }
    Ok(u.scaled(pe / ms.sqrt()))
}

/// Radial profile p(s), s = |x − x₊|²/ε², supported on s < 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum SourceProfile {
    /// exp(−1/(1 − s)).
    #[default]
    SmoothBump,
    /// ½(1 + cos(π√s)).
    RaisedCosine,
}

impl SourceProfile {
    pub fn value(self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        match self {
            SourceProfile::SmoothBump => (-1.0 / (1.0 - s)).exp(),
            SourceProfile::RaisedCosine => 0.5 * (1.0 + (PI * s.sqrt()).cos()),
        }
    }

    /// dp/ds.
    pub fn slope(self, s: f64) -> f64 {
        if s >= 1.0 {
            return 0.0;
        }
        match self {
            SourceProfile::SmoothBump => -(-1.0 / (1.0 - s)).exp() / ((1.0 - s) * (1.0 - s)),
            SourceProfile::RaisedCosine => {
                if s < 1e-12 {
                    -PI * PI / 4.0
                } else {
                    let r = s.sqrt();
                    -0.25 * PI * (PI * r).sin() / r
                }
            }
        }
    }

    /// ∫ over the unit disc of p(|z|²) dz = π ∫₀¹ p(s) ds.
    pub fn unit_mass(self) -> f64 {
        PI * integrate(0.0, 1.0, 16, |s| self.value(s))
    }
}

/// Smoothed source/sink pair f = f₊ − f₋ at x± = (0, ±½), each of unit mass.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ConcentratedSource {
    pub eps: f64,
    pub profile: SourceProfile,
    /// Amplitude c(ε) = 1/(ε² ∫p).
    pub amplitude: f64,
}

impl ConcentratedSource {
    pub fn new(eps: f64, profile: SourceProfile) -> Result<Self> {
        check_eps(eps)?;
        let amplitude = 1.0 / (eps * eps * profile.unit_mass());
        Ok(Self { eps, profile, amplitude })
    }

    fn s(&self, x: f64, y: f64) -> f64 {
        (x * x + (y - 0.5) * (y - 0.5)) / (self.eps * self.eps)
    }

    pub fn plus(&self, x: f64, y: f64) -> f64 {
        self.amplitude * self.profile.value(self.s(x, y))
    }

    /// ∂f₊/∂y.
    pub fn plus_dy(&self, x: f64, y: f64) -> f64 {
        let e2 = self.eps * self.eps;
        self.amplitude * self.profile.slope(self.s(x, y)) * 2.0 * (y - 0.5) / e2
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        self.plus(x, y) - self.plus(x, -y)
    }

    pub fn field(&self, grid: &Grid) -> Result<ScalarField> {
        check_domain(grid, &Domain::unit_square(), "the concentrated source")?;
        let mut f = ScalarField::from_fn(*grid, |x, y| self.value(x, y));
        f.mean_free = true;
        Ok(f)
    }

    /// f₊ alone (not mean-free).
    pub fn plus_field(&self, grid: &Grid) -> Result<ScalarField> {
        check_domain(grid, &Domain::unit_square(), "the concentrated source")?;
        Ok(ScalarField::from_fn(*grid, |x, y| self.plus(x, y)))
    }

    /// ∫f₊ over the cells of `grid`, each cell integrated with a tensor
    /// Gauss–Legendre rule.
    pub fn cell_mass(&self, grid: &Grid) -> f64 {
        let rule = gauss();
        let (hx, hy) = (grid.hx(), grid.hy());
        let mut total = 0.0;
        for j in 0..grid.ny {
            let yc = grid.y(j);
            if (yc - 0.5).abs() > self.eps + hy {
                continue;
            }
            for i in 0..grid.nx {
                let xc = grid.x(i);
                if xc.abs() > self.eps + hx {
                    continue;
                }
                total += rule.integrate(yc - 0.5 * hy, yc + 0.5 * hy, |y| {
                    rule.integrate(xc - 0.5 * hx, xc + 0.5 * hx, |x| self.plus(x, y))
                });
            }
        }
        total
    }

    /// ‖f₊‖_∞ ε².
    pub fn sup_constant(&self) -> f64 {
        self.amplitude * self.profile.value(0.0) * self.eps * self.eps
    }

    /// ‖∇f₊‖_∞ ε³, by sampling the radial profile.
    pub fn gradient_constant(&self) -> f64 {
        let n = 4000;
        let m = (1..n)
            .map(|k| {
                let r = k as f64 / n as f64;
                (self.profile.slope(r * r) * 2.0 * r).abs()
            })
            .fold(0.0_f64, f64::max);
        self.amplitude * self.eps * self.eps * m
    }

    /// Half-chord integral ∫₀^{x} f₊(s, y) ds (odd in x, saturating at the disc edge).
    pub fn row_integral(&self, x: f64, y: f64) -> f64 {
        let a = self.half_chord(y);
        if a <= 0.0 {
            return 0.0;
        }
        let b = x.abs().min(a);
        x.signum() * integrate(0.0, b, 4, |s| self.plus(s, y))
    }

    /// ∫₀^{x} ∂f₊/∂y(s, y) ds.
    pub fn row_integral_dy(&self, x: f64, y: f64) -> f64 {
        let a = self.half_chord(y);
        if a <= 0.0 {
            return 0.0;
        }
        let b = x.abs().min(a);
        x.signum() * integrate(0.0, b, 4, |s| self.plus_dy(s, y))
    }

    fn half_chord(&self, y: f64) -> f64 {
        let d = (y - 0.5) / self.eps;
        if d.abs() >= 1.0 {
            0.0
        } else {
            self.eps * (1.0 - d * d).sqrt()
        }
    }
}

/// Truncated logarithm ξ₀(r).
pub fn log_profile(eps: f64, r: f64) -> f64 {
    if r <= eps {
        (1.0 / (4.0 * eps)).ln()
    } else if r <= 0.25 {
        (1.0 / (4.0 * r)).ln()
    } else {
        0.0
    }
}

/// ξ = ξ₀(|x − x₊|) − ξ₀(|x − x₋|).
pub fn log_test_value(eps: f64, x: f64, y: f64) -> f64 {
    log_profile(eps, x.hypot(y - 0.5)) - log_profile(eps, x.hypot(y + 0.5))
}

/// Analytic ∇ξ for the logarithmic test function.
pub fn log_test_gradient(eps: f64, x: f64, y: f64) -> (f64, f64) {
    let part = |cy: f64| -> (f64, f64) {
        let (dx, dy) = (x, y - cy);
        let r2 = dx * dx + dy * dy;
        let r = r2.sqrt();
        if r <= eps || r > 0.25 {
            (0.0, 0.0)
        } else {
            (-dx / r2, -dy / r2)
        }
    };
    let (a, b) = part(0.5);
    let (c, d) = part(-0.5);
    (a - c, b - d)
}

pub fn log_test_function(eps: f64, grid: &Grid) -> Result<ScalarField> {
    check_eps(eps)?;
    check_domain(grid, &Domain::unit_square(), "the logarithmic test function")?;
    Ok(ScalarField::from_fn(*grid, |x, y| log_test_value(eps, x, y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum FlowKind {
    Cellular { ell: f64 },
    Pinching { eps: f64 },
}

/// ∫_Ω|u|² and ∫_Ω|∇η|² of a construction (unnormalised integrals).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct EnergyIntegrals {
    pub velocity_sq: f64,
    pub eta_gradient_sq: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowConstruction {
    pub kind: FlowKind,
    pub source: Option<ConcentratedSource>,
}

impl FlowConstruction {
    pub fn name(&self) -> &'static str {
        match self.kind {
            FlowKind::Cellular { .. } => "cellular",
            FlowKind::Pinching { .. } => "pinching",
        }
    }

    pub fn parameter(&self) -> f64 {
        match self.kind {
            FlowKind::Cellular { ell } => ell,
            FlowKind::Pinching { eps } => eps,
        }
    }

    pub fn domain(&self) -> Domain {
        match self.kind {
            FlowKind::Cellular { .. } => Domain::two_pi_square(),
            FlowKind::Pinching { .. } => Domain::unit_square(),
        }
    }

    pub fn psi(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            FlowKind::Cellular { ell } => ell * (x / ell).sin() * (y / ell).sin(),
            FlowKind::Pinching { eps } => pinching_psi_upper(eps, x, y.abs()),
        }
    }

    pub fn velocity(&self, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            FlowKind::Cellular { ell } => {
                let (sx, cx) = (x / ell).sin_cos();
                let (sy, cy) = (y / ell).sin_cos();
                (sx * cy, -cx * sy)
            }
            FlowKind::Pinching { eps } => {
                let (ux, uy) = pinching_velocity_upper(eps, x, y.abs());
                if y < 0.0 {
                    (-ux, uy)
                } else {
                    (ux, uy)
                }
            }
        }
    }

    pub fn eta(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            FlowKind::Cellular { ell } => -ell * (x / ell).cos() * (y / ell).cos(),
            FlowKind::Pinching { .. } => self.pinching_eta_upper(x, y.abs()),
        }
    }

    pub fn eta_gradient(&self, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            FlowKind::Cellular { ell } => {
                let (sx, cx) = (x / ell).sin_cos();
                let (sy, cy) = (y / ell).sin_cos();
                (sx * cy, cx * sy)
            }
            FlowKind::Pinching { .. } => {
                let (gx, gy) = self.pinching_eta_gradient_upper(x, y.abs());
                if y < 0.0 {
                    (gx, -gy)
                } else {
                    (gx, gy)
                }
            }
        }
    }

    pub fn source_value(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            FlowKind::Cellular { ell } => sinusoidal_value(ell, x, y),
            FlowKind::Pinching { .. } => self.source.map_or(0.0, |s| s.value(x, y)),
        }
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        check_domain(grid, &self.domain(), self.name())
    }

    pub fn psi_field(&self, grid: &Grid) -> Result<ScalarField> {
        self.check_grid(grid)?;
        Ok(ScalarField::from_fn(*grid, |x, y| self.psi(x, y)))
    }

    /// Velocity used by the solvers: the exact nodal values for the cellular
    /// flow, and the discrete perpendicular gradient of the sampled stream
    /// function for the pinching flow, so that both are discretely
    /// divergence-free.
    pub fn velocity_field(&self, grid: &Grid) -> Result<VectorField> {
        self.check_grid(grid)?;
        match self.kind {
            FlowKind::Cellular { .. } => Ok(self.velocity_analytic_field(grid)?),
            FlowKind::Pinching { .. } => Ok(perp_gradient_unchecked(&self.psi_field(grid)?)),
        }
    }

    /// Nodal samples of the closed-form velocity.
    pub fn velocity_analytic_field(&self, grid: &Grid) -> Result<VectorField> {
        self.check_grid(grid)?;
        Ok(VectorField::from_fn(*grid, |x, y| self.velocity(x, y)))
    }

    pub fn eta_field(&self, grid: &Grid) -> Result<ScalarField> {
        self.check_grid(grid)?;
        Ok(ScalarField::from_fn(*grid, |x, y| self.eta(x, y)))
    }

    pub fn eta_gradient_field(&self, grid: &Grid) -> Result<VectorField> {
        self.check_grid(grid)?;
        Ok(VectorField::from_fn(*grid, |x, y| self.eta_gradient(x, y)))
    }

    pub fn source_field(&self, grid: &Grid) -> Result<ScalarField> {
        self.check_grid(grid)?;
        let mut f = ScalarField::from_fn(*grid, |x, y| self.source_value(x, y));
        f.mean_free = true;
        Ok(f)
    }

    /// ∫|u|² and ∫|∇η|², from closed forms (cellular) or one- and
    /// two-dimensional quadrature of the piecewise formulas (pinching).
    pub fn energy_integrals(&self) -> EnergyIntegrals {
        match self.kind {
            FlowKind::Cellular { .. } => {
                let area = self.domain().area();
                EnergyIntegrals { velocity_sq: 0.5 * area, eta_gradient_sq: 0.5 * area }
            }
            FlowKind::Pinching { eps } => {
                let src = self.source.expect("pinching construction carries its source");
                pinching_energy_integrals(eps, &src)
            }
        }
    }

    fn pinching_eta_upper(&self, x: f64, y: f64) -> f64 {
        let FlowKind::Pinching { eps } = self.kind else { return 0.0 };
        let src = self.source.expect("pinching construction carries its source");
        let hw = 3f64.sqrt() * eps;
        let yc = 0.5 + 2.0 * eps;
        match pinching_region(eps, x, y) {
            Region::Jet => -jet_weight(eps, y) * src.row_integral(x, y),
            Region::RightChannel | Region::LeftChannel => {
                let ys = yc + hw * (y - yc) / x.abs();
                -jet_weight(eps, ys) * src.row_integral(hw * x.signum(), ys)
            }
            Region::Still => 0.0,
        }
    }

    fn pinching_eta_gradient_upper(&self, x: f64, y: f64) -> (f64, f64) {
        let FlowKind::Pinching { eps } = self.kind else { return (0.0, 0.0) };
        let src = self.source.expect("pinching construction carries its source");
        let hw = 3f64.sqrt() * eps;
        let yc = 0.5 + 2.0 * eps;
        match pinching_region(eps, x, y) {
            Region::Jet => {
                let w = jet_weight(eps, y);
                let gx = -w * src.plus(x, y);
                let gy = -jet_weight_dy(eps, y) * src.row_integral(x, y) - w * src.row_integral_dy(x, y);
                (gx, gy)
            }
            Region::RightChannel | Region::LeftChannel => {
                // η = E(y*) with y* = yc + hw (y − yc)/|x| and E(s) = η_jet(±hw, s).
                let side = x.signum();
                let ys = yc + hw * (y - yc) / x.abs();
                let de = edge_eta_slope(eps, &src, side, ys);
                let dys_dx = -hw * (y - yc) * side / (x * x);
                let dys_dy = hw / x.abs();
                (de * dys_dx, de * dys_dy)
            }
            Region::Still => (0.0, 0.0),
        }
    }
}

/// d/ds of η_jet(side·hw, s).
fn edge_eta_slope(eps: f64, src: &ConcentratedSource, side: f64, s: f64) -> f64 {
    let hw = 3f64.sqrt() * eps;
    -(jet_weight_dy(eps, s) * src.row_integral(side * hw, s)
        + jet_weight(eps, s) * src.row_integral_dy(side * hw, s))
}

/// w(y) = −1/∂yψ₂ = (12ε² + (2y − 1 − 4ε)²)/(4√3 ε).
pub fn jet_weight(eps: f64, y: f64) -> f64 {
    let z = 2.0 * y - 1.0 - 4.0 * eps;
    (12.0 * eps * eps + z * z) / (4.0 * 3f64.sqrt() * eps)
}

fn jet_weight_dy(eps: f64, y: f64) -> f64 {
    (2.0 * y - 1.0 - 4.0 * eps) / (3f64.sqrt() * eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    /// Inside R_ε.
    Jet,
    RightChannel,
    LeftChannel,
    /// Flat channel, the wedge above R_ε, and everything above y = ½ + ε.
    Still,
}

/// Polar angle about (0, ½ + 2ε) in [0, 2π).
fn polar_angle(eps: f64, x: f64, y: f64) -> f64 {
    let t = (y - 0.5 - 2.0 * eps).atan2(x);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

fn pinching_region(eps: f64, x: f64, y: f64) -> Region {
    let hw = 3f64.sqrt() * eps;
    if x.abs() <= hw && (y - 0.5).abs() <= eps {
        return Region::Jet;
    }
    if y >= 0.5 + eps {
        return Region::Still;
    }
    let th = polar_angle(eps, x, y);
    if th > 5.0 * PI / 3.0 && th <= 11.0 * PI / 6.0 {
        Region::RightChannel
    } else if th > 7.0 * PI / 6.0 && th <= 4.0 * PI / 3.0 {
        Region::LeftChannel
    } else {
        Region::Still
    }
}

/// ψ₁(θ) on [0, 2π).
pub fn channel_psi(theta: f64) -> f64 {
    if theta > 5.0 * PI / 3.0 && theta <= 11.0 * PI / 6.0 {
        11.0 * PI / 6.0 - theta
    } else if theta > 4.0 * PI / 3.0 && theta <= 5.0 * PI / 3.0 {
        PI / 6.0
    } else if theta > 7.0 * PI / 6.0 && theta <= 4.0 * PI / 3.0 {
        theta - 7.0 * PI / 6.0
    } else {
        0.0
    }
}

/// ψ₂(y) = −π/6 − arctan((2y − 1 − 4ε)/(2√3 ε)).
pub fn jet_psi(eps: f64, y: f64) -> f64 {
    -PI / 6.0 - ((2.0 * y - 1.0 - 4.0 * eps) / (2.0 * 3f64.sqrt() * eps)).atan()
}

fn jet_psi_dy(eps: f64, y: f64) -> f64 {
    -1.0 / jet_weight(eps, y)
}

fn pinching_psi_upper(eps: f64, x: f64, y: f64) -> f64 {
    let hw = 3f64.sqrt() * eps;
    if x.abs() <= hw && (y - 0.5).abs() <= eps {
        jet_psi(eps, y)
    } else if y >= 0.5 + eps {
        0.0
    } else {
        channel_psi(polar_angle(eps, x, y))
    }
}

fn pinching_velocity_upper(eps: f64, x: f64, y: f64) -> (f64, f64) {
    match pinching_region(eps, x, y) {
        Region::Jet => (jet_psi_dy(eps, y), 0.0),
        Region::RightChannel | Region::LeftChannel => {
            let slope = if x > 0.0 { -1.0 } else { 1.0 };
            let (dx, dy) = (x, y - 0.5 - 2.0 * eps);
            let r2 = dx * dx + dy * dy;
            (slope * dx / r2, slope * dy / r2)
        }
        Region::Still => (0.0, 0.0),
    }
}

/// Radial extent of the right channel along angle θ: from the side of R_ε
/// to the first of y = 0 and x = 1.
fn channel_log_ratio(eps: f64, theta: f64) -> f64 {
    let hw = 3f64.sqrt() * eps;
    let yc = 0.5 + 2.0 * eps;
    let (s, c) = theta.sin_cos();
    let r_in = hw / c;
    let r_out = (yc / -s).min(1.0 / c);
    (r_out / r_in).ln()
}

fn pinching_energy_integrals(eps: f64, src: &ConcentratedSource) -> EnergyIntegrals {
    let hw = 3f64.sqrt() * eps;
    let yc = 0.5 + 2.0 * eps;
    let (y0, y1) = (0.5 - eps, 0.5 + eps);
    let (t0, t1) = (5.0 * PI / 3.0, 11.0 * PI / 6.0);

    // Kinetic energy: jet plus two channels, in the upper half.
    let jet_u = 2.0 * hw * integrate(y0, y1, 16, |y| jet_psi_dy(eps, y).powi(2));
    let channel_u = integrate(t0, t1, 32, |t| channel_log_ratio(eps, t));
    let velocity_sq = 2.0 * (jet_u + 2.0 * channel_u);

    // |∇η|² in the jet; η is odd in x, so twice the right half. The x
    // integral is split at the disc edge where the integrand has a kink.
    let jet_eta = 2.0
        * integrate(y0, y1, 16, |y| {
            let d = (y - 0.5) / eps;
            let a = if d.abs() < 1.0 { eps * (1.0 - d * d).sqrt() } else { 0.0 };
            let w = jet_weight(eps, y);
            let wd = jet_weight_dy(eps, y);
            let integrand = |x: f64| {
                let gx = -w * src.plus(x, y);
                let gy = -wd * src.row_integral(x, y) - w * src.row_integral_dy(x, y);
                gx * gx + gy * gy
            };
            integrate(0.0, a, 4, integrand) + integrate(a, hw, 2, integrand)
        });
    // Channel: |∇η|² = (η₁'(θ)/r)², integrated radially to η₁'² log(r_out/r_in).
    // Substituting s = yc + hw tan θ gives dθ = ds/(hw sec²θ).
    let channel_eta = integrate(y0, y1, 32, |s| {
        let tan = (s - yc) / hw;
        let sec2 = 1.0 + tan * tan;
        let theta = 2.0 * PI + tan.atan();
        let de = edge_eta_slope(eps, src, 1.0, s);
        de * de * hw * sec2 * channel_log_ratio(eps, theta)
    });
    let eta_gradient_sq = 2.0 * (jet_eta + 2.0 * channel_eta);
    let _ = t0;
    let _ = t1;
    EnergyIntegrals { velocity_sq, eta_gradient_sq }
}

pub fn cellular_pair(ell: f64) -> Result<FlowConstruction> {
    inverse_ell(ell)?;
    Ok(FlowConstruction { kind: FlowKind::Cellular { ell }, source: None })
}

pub fn pinching_pair(eps: f64, source: &ConcentratedSource) -> Result<FlowConstruction> {
    check_eps(eps)?;
    if (source.eps - eps).abs() > 1e-15 * eps {
        return Err(FluxError::Consistency(format!(
            "source radius {} does not match construction radius {eps}",
            source.eps
        )));
    }
    Ok(FlowConstruction { kind: FlowKind::Pinching { eps }, source: Some(*source) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{domain_average, integral, l2_inner};
    use crate::neumann::{advect, check_incompressible, dirichlet_energy, gradient};

    #[test]
    fn sinusoidal_source_closed_forms() {
        let g = Grid::square(Domain::two_pi_square(), 64).unwrap();
        let f = sinusoidal_source(1.0, &g).unwrap();
        assert!((l2_inner(&f, &f).unwrap() - 0.25).abs() < 1e-14);
        for ell in [1.0, 0.5, 0.25] {
            assert!(domain_average(&sinusoidal_source(ell, &g).unwrap()).abs() < 1e-12);
        }
        let f4 = sinusoidal_source(0.25, &g).unwrap();
        assert!((dirichlet_energy(&f4) - 16.0).abs() < 1e-10);
        assert!(sinusoidal_source(0.3, &g).is_err());
        let wrong = Grid::square(Domain::unit_square(), 16).unwrap();
        assert!(sinusoidal_source(1.0, &wrong).is_err());
    }

    #[test]
    fn cellular_pair_identities() {
        for ell in [1.0, 0.5, 0.25] {
            let c = cellular_pair(ell).unwrap();
            let g = Grid::square(c.domain(), 64).unwrap();
            let u = c.velocity_field(&g).unwrap();
            let eta = c.eta_field(&g).unwrap();
            let f = c.source_field(&g).unwrap();
            let mut worst = 0.0_f64;
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let (x, y) = (g.x(i), g.y(j));
                    let (ux, uy) = c.velocity(x, y);
                    let (gx, gy) = c.eta_gradient(x, y);
                    worst = worst.max((ux * gx + uy * gy - c.source_value(x, y)).abs());
                }
            }
            assert!(worst <= 1e-12);
            let product = u.mean_square() * gradient(&eta).mean_square();
            assert!((product - 0.25).abs() < 1e-12);
            assert!(advect(&u, &eta).unwrap().sub(&f).unwrap().max_abs() < 1e-10);
            check_incompressible(&u).unwrap();
            let fine = Grid::square(c.domain(), 512).unwrap();
            let psi = c.psi_field(&fine).unwrap();
            assert!(crate::neumann::boundary_trace_deviation(&psi) < 1e-12 + 1e-2 * psi.max_abs());
            for k in 0..=8 {
                let t = k as f64 * 2.0 * PI / 8.0;
                assert!(c.psi(0.0, t).abs() < 1e-12 && c.psi(2.0 * PI, t).abs() < 1e-12);
                assert!(c.psi(t, 0.0).abs() < 1e-12 && c.psi(t, 2.0 * PI).abs() < 1e-12);
            }
        }
        assert!(cellular_pair(0.4).is_err());
    }

    #[test]
    fn normalize_examples() {
        let c = cellular_pair(1.0).unwrap();
        let g = Grid::square(c.domain(), 32).unwrap();
        let u = c.velocity_field(&g).unwrap();
        let v = normalize_to_pe(&u, 10.0).unwrap();
        assert!((v.mean_square() - 100.0).abs() < 1e-10);
        let w = normalize_to_pe(&v, 10.0).unwrap();
        assert!(w.x.sub(&v.x).unwrap().max_abs() < 1e-12);
        assert_eq!(normalize_to_pe(&u, 0.0).unwrap().max_abs(), 0.0);
        assert!(matches!(normalize_to_pe(&VectorField::zeros(g), 1.0), Err(FluxError::DegenerateFlow(_))));
    }

    #[test]
    fn concentrated_source_mass_and_constants() {
        let eps = 1.0 / 32.0;
        let s = ConcentratedSource::new(eps, SourceProfile::SmoothBump).unwrap();
        // 16 cells across the radius.
        let n = (2.0 / (eps / 16.0)) as usize;
        let g = Grid::square(Domain::unit_square(), n).unwrap();
        let plus = s.plus_field(&g).unwrap();
        assert!((integral(&plus) - 1.0).abs() < 1e-4);
        for cells in [8, 16] {
            let g = Grid::square(Domain::unit_square(), (2.0 / (eps / cells as f64)) as usize).unwrap();
            assert!((s.cell_mass(&g) - 1.0).abs() < 1e-8, "{}", s.cell_mass(&g));
        }
        let f = s.field(&g).unwrap();
        assert!(integral(&f).abs() < 1e-12);
        let ks: Vec<f64> = (5..=9).map(|k| {
            ConcentratedSource::new(2f64.powi(-k), SourceProfile::SmoothBump).unwrap().sup_constant()
        }).collect();
        assert!(ks.iter().all(|&k| k <= 1.0 && (k - ks[0]).abs() < 1e-12));
        assert!(ConcentratedSource::new(0.06, SourceProfile::SmoothBump).is_err());
        let rc = ConcentratedSource::new(eps, SourceProfile::RaisedCosine).unwrap();
        assert!((integral(&rc.plus_field(&g).unwrap()) - 1.0).abs() < 1e-5);
    }

    #[test]
    fn log_test_function_integrals() {
        let eps = 1.0 / 32.0;
        let n = 1024;
        let g = Grid::square(Domain::unit_square(), n).unwrap();
        let xi = log_test_function(eps, &g).unwrap();
        let s = ConcentratedSource::new(eps, SourceProfile::SmoothBump).unwrap();
        let f = s.field(&g).unwrap();
        let xf = integral(&xi.mul(&f).unwrap());
        let expect = 2.0 * (1.0 / (4.0 * eps)).ln();
        assert!((xf - expect).abs() < 1e-4 * expect, "{xf} {expect}");
        let grad = VectorField::from_fn(g, |x, y| log_test_gradient(eps, x, y));
        let dirichlet = grad.mean_square() * g.domain.area();
        let exact = 4.0 * PI * (1.0 / (4.0 * eps)).ln();
        assert!((dirichlet - exact).abs() < 0.02 * exact, "{dirichlet} vs {exact}");
        // Continuity at r = ε and r = 1/4.
        assert!((log_profile(eps, eps) - log_profile(eps, eps * (1.0 + 1e-12))).abs() < 1e-10);
        assert!(log_profile(eps, 0.25).abs() < 1e-15);
    }

    fn pinching(eps: f64) -> FlowConstruction {
        let s = ConcentratedSource::new(eps, SourceProfile::SmoothBump).unwrap();
        pinching_pair(eps, &s).unwrap()
    }

    #[test]
    fn pinching_stream_function_geometry() {
        let eps = 1.0 / 32.0;
        let p = pinching(eps);
        let yc = 0.5 + 2.0 * eps;
        // Flat channel directly below R_ε.
        for k in 1..10 {
            let th = 4.0 * PI / 3.0 + k as f64 * (PI / 3.0) / 10.0;
            let r = 0.2;
            assert!((channel_psi(th) - PI / 6.0).abs() < 1e-15);
            assert!((p.psi(r * th.cos(), yc + r * th.sin()) - PI / 6.0).abs() < 1e-14);
        }
        // ψ vanishes on the boundary and matches across the sides of R_ε.
        for k in 0..=40 {
            let t = -1.0 + k as f64 / 20.0;
            for (x, y) in [(t, 1.0), (t, -1.0), (1.0, t), (-1.0, t)] {
                assert!(p.psi(x, y).abs() < 1e-14, "psi({x},{y})");
            }
        }
        let hw = 3f64.sqrt() * eps;
        for k in 0..=20 {
            let y = 0.5 - eps + 2.0 * eps * k as f64 / 20.0;
            let inside = jet_psi(eps, y);
            let outside_r = channel_psi(polar_angle(eps, hw * (1.0 + 1e-12), y));
            let outside_l = channel_psi(polar_angle(eps, -hw * (1.0 + 1e-12), y));
            assert!((inside - outside_r).abs() < 1e-9 && (inside - outside_l).abs() < 1e-9);
        }
    }

    #[test]
    fn pinching_reflection_parity() {
        let p = pinching(1.0 / 32.0);
        let g = Grid::square(Domain::unit_square(), 128).unwrap();
        let u = p.velocity_analytic_field(&g).unwrap();
        let eta = p.eta_field(&g).unwrap();
        let mut worst = 0.0_f64;
        for j in 0..g.ny {
            let jm = g.ny - 1 - j;
            for i in 0..g.nx {
                worst = worst.max((u.x.at(i, j) + u.x.at(i, jm)).abs());
                worst = worst.max((u.y.at(i, j) - u.y.at(i, jm)).abs());
                worst = worst.max((eta.at(i, j) - eta.at(i, jm)).abs());
            }
        }
        assert!(worst <= 1e-10);
    }

    #[test]
    fn pinching_advection_identity() {
        let eps = 1.0 / 32.0;
        let p = pinching(eps);
        let src = p.source.unwrap();
        let n = 512;
        let g = Grid::square(Domain::unit_square(), n).unwrap();
        let scale = src.amplitude;
        let mut worst_in = 0.0_f64;
        let mut worst_out = 0.0_f64;
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = (g.x(i), g.y(j));
                let (ux, uy) = p.velocity(x, y);
                let (gx, gy) = p.eta_gradient(x, y);
                let r = ux * gx + uy * gy - p.source_value(x, y);
                if pinching_region(eps, x, y.abs()) == Region::Jet {
                    worst_in = worst_in.max(r.abs());
                } else {
                    worst_out = worst_out.max(r.abs());
                }
            }
        }
        assert!(worst_in <= 1e-10 * scale, "inside {worst_in}");
        assert!(worst_out <= 1e-10 * scale, "outside {worst_out}");
    }

    #[test]
    fn pinching_eta_is_continuous_across_the_jet_boundary() {
        let eps = 1.0 / 64.0;
        let p = pinching(eps);
        let hw = 3f64.sqrt() * eps;
        let scale = p.eta(0.0, 0.5).abs().max(p.eta(hw, 0.5).abs());
        for k in 0..=50 {
            let y = 0.5 - eps + 2.0 * eps * k as f64 / 50.0;
            for side in [-1.0, 1.0] {
                let a = p.eta(side * hw * (1.0 - 1e-9), y);
                let b = p.eta(side * hw * (1.0 + 1e-9), y);
                assert!((a - b).abs() <= 1e-6 * scale, "y={y} {a} {b}");
            }
        }
        for k in 0..=20 {
            let x = -hw + 2.0 * hw * k as f64 / 20.0;
            assert!(p.eta(x, 0.5 + eps * (1.0 + 1e-9)).abs() < 1e-12);
            assert!(p.eta(x, 0.5 - eps * (1.0 + 1e-9)).abs() <= 1e-6 * scale);
        }
    }

    #[test]
    fn pinching_energy_integrals_match_grid_quadrature() {
        let eps = 1.0 / 32.0;
        let p = pinching(eps);
        let e = p.energy_integrals();
        let g = Grid::square(Domain::unit_square(), 2048).unwrap();
        let u = p.velocity_analytic_field(&g).unwrap();
        let ge = p.eta_gradient_field(&g).unwrap();
        let area = g.domain.area();
        let ku = u.mean_square() * area;
        let ke = ge.mean_square() * area;
        assert!((ku - e.velocity_sq).abs() < 0.01 * e.velocity_sq, "{ku} vs {}", e.velocity_sq);
        assert!((ke - e.eta_gradient_sq).abs() < 0.01 * e.eta_gradient_sq, "{ke} vs {}", e.eta_gradient_sq);
    }

    #[test]
    fn pinching_velocity_is_discretely_divergence_free() {
        let p = pinching(1.0 / 32.0);
        let g = Grid::square(Domain::unit_square(), 256).unwrap();
        let u = p.velocity_field(&g).unwrap();
        check_incompressible(&u).unwrap();
        let analytic = p.velocity_analytic_field(&g).unwrap();
        assert!(check_incompressible(&analytic).is_err());
        assert!(pinching_pair(1.0 / 32.0, &ConcentratedSource::new(1.0 / 64.0, SourceProfile::SmoothBump).unwrap()).is_err());
    }
}
