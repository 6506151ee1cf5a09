//! Differential operators with insulating boundaries.
//!
//! Scalars (temperatures, sources, test functions) are even in both
//! directions, i.e. cosine series. A velocity stores `u_x` as odd in x and
//! even in y and `u_y` the other way round, so `u·n̂ = 0` on ∂Ω is built in.
//! Stream functions are odd in both directions and vanish on ∂Ω.

use std::sync::Arc;

use crate::error::{FluxError, Result};
use crate::field::{dot, mean, Grid, ScalarField, VectorField};
use crate::spectral::{
    pad_coeffs, sweep_x, sweep_y, truncate_coeffs, Axis, NeumannSpectralPlan, Parity, RowOp,
};

use Parity::{Even, Odd};

/// Relative tolerance for the solvability (mean-zero) check.
pub const MEAN_FREE_RTOL: f64 = 1e-10;
/// Relative tolerance for the discrete divergence check.
pub const DIV_FREE_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Domain average ⨍.
    #[default]
    Averaged,
    /// Plain integral ∫, i.e. the average times |Ω|.
    Integrated,
}

impl Normalization {
    pub fn factor(self, grid: &Grid) -> f64 {
        match self {
            Normalization::Averaged => 1.0,
            Normalization::Integrated => grid.domain.area(),
        }
    }
}

fn plan_of(grid: &Grid) -> Arc<NeumannSpectralPlan> {
    NeumannSpectralPlan::for_grid(grid)
}

pub fn lambda1(grid: &Grid) -> f64 {
    let p = std::f64::consts::PI;
    (p / grid.domain.lx()).powi(2).min((p / grid.domain.ly()).powi(2))
}

pub fn check_mean_free(g: &ScalarField) -> Result<()> {
    let m = mean(&g.values);
    let scale = g.max_abs();
    if m.abs() > MEAN_FREE_RTOL * scale {
        return Err(FluxError::NotMeanFree { mean: m, scale });
    }
    Ok(())
}

/// Cosine coefficients of a scalar field.
pub fn cos_coeffs(theta: &ScalarField) -> Vec<f64> {
    plan_of(&theta.grid).forward(&theta.values, Even, Even)
}

pub fn from_cos_coeffs(grid: Grid, c: &[f64]) -> ScalarField {
    let values = plan_of(&grid).inverse(c, Even, Even);
    ScalarField { grid, values, mean_free: c[0] == 0.0 }
}

pub fn gradient(theta: &ScalarField) -> VectorField {
    let plan = plan_of(&theta.grid);
    let gx = plan.dx_nodal(&theta.values, Even);
    let gy = plan.dy_nodal(&theta.values, Even);
    VectorField {
        x: ScalarField { grid: theta.grid, values: gx, mean_free: false },
        y: ScalarField { grid: theta.grid, values: gy, mean_free: false },
    }
}

/// ⨍|∇θ|², exact for the cosine interpolant.
pub fn dirichlet_energy(theta: &ScalarField) -> f64 {
    let plan = plan_of(&theta.grid);
    let c = plan.forward(&theta.values, Even, Even);
    c.iter().zip(&plan.lambda).map(|(c, l)| l * c * c).sum()
}

pub fn laplacian(theta: &ScalarField) -> ScalarField {
    let plan = plan_of(&theta.grid);
    let mut c = plan.forward(&theta.values, Even, Even);
    c.iter_mut().zip(&plan.lambda).for_each(|(c, l)| *c *= -l);
    let values = plan.inverse(&c, Even, Even);
    ScalarField { grid: theta.grid, values, mean_free: true }
}

/// Largest deviation from zero of the boundary trace of `psi`, estimated by
/// quadratic extrapolation from the three nodes nearest each edge.
pub fn boundary_trace_deviation(psi: &ScalarField) -> f64 {
    let (nx, ny) = (psi.grid.nx, psi.grid.ny);
    let extrap = |a: f64, b: f64, c: f64| (15.0 * a - 10.0 * b + 3.0 * c) / 8.0;
    let mut worst = 0.0_f64;
    for j in 0..ny {
        worst = worst.max(extrap(psi.at(0, j), psi.at(1, j), psi.at(2, j)).abs());
        worst = worst.max(extrap(psi.at(nx - 1, j), psi.at(nx - 2, j), psi.at(nx - 3, j)).abs());
    }
    for i in 0..nx {
        worst = worst.max(extrap(psi.at(i, 0), psi.at(i, 1), psi.at(i, 2)).abs());
        worst = worst.max(extrap(psi.at(i, ny - 1), psi.at(i, ny - 2), psi.at(i, ny - 3)).abs());
    }
    worst
}

/// Default relative tolerance for the stream-function boundary check.
pub const PSI_BOUNDARY_RTOL: f64 = 1e-2;

/// u = ∇⊥ψ = (∂yψ, −∂xψ) for a stream function vanishing on ∂Ω.
pub fn perp_gradient(psi: &ScalarField) -> Result<VectorField> {
    perp_gradient_checked(psi, PSI_BOUNDARY_RTOL)
}

pub fn perp_gradient_checked(psi: &ScalarField, rtol: f64) -> Result<VectorField> {
    let dev = boundary_trace_deviation(psi);
    if dev > rtol * psi.max_abs() && dev > 1e-14 {
        return Err(FluxError::BoundaryViolation { max_deviation: dev });
    }
    Ok(perp_gradient_unchecked(psi))
}

/// As [`perp_gradient`], treating the nodal data as a sine series without
/// checking the boundary trace.
pub fn perp_gradient_unchecked(psi: &ScalarField) -> VectorField {
    let plan = plan_of(&psi.grid);
    let ux = plan.dy_nodal(&psi.values, Odd);
    let mut uy = plan.dx_nodal(&psi.values, Odd);
    uy.iter_mut().for_each(|v| *v = -*v);
    VectorField {
        x: ScalarField { grid: psi.grid, values: ux, mean_free: false },
        y: ScalarField { grid: psi.grid, values: uy, mean_free: false },
    }
}

/// Discrete divergence of a velocity in the no-penetration representation,
/// together with the size of its two terms.
pub fn divergence_with_scale(u: &VectorField) -> (ScalarField, f64) {
    let grid = u.grid();
    let plan = plan_of(&grid);
    let a = plan.dx_nodal(&u.x.values, Odd);
    let b = plan.dy_nodal(&u.y.values, Odd);
    let scale = a.iter().chain(&b).fold(0.0_f64, |m, v| m.max(v.abs()));
    let values = a.iter().zip(&b).map(|(p, q)| p + q).collect();
    (ScalarField { grid, values, mean_free: true }, scale)
}

pub fn divergence(u: &VectorField) -> ScalarField {
    divergence_with_scale(u).0
}

pub fn check_incompressible(u: &VectorField) -> Result<()> {
    let (div, scale) = divergence_with_scale(u);
    let max_div = div.max_abs();
    if max_div > DIV_FREE_RTOL * scale {
        return Err(FluxError::NotIncompressible { max_div, scale });
    }
    Ok(())
}

/// Δ⁻¹g: the mean-free solution of Δh = g with zero normal flux.
pub fn inv_neumann_laplacian(g: &ScalarField) -> Result<ScalarField> {
    check_mean_free(g)?;
    let plan = plan_of(&g.grid);
    let mut c = plan.forward(&g.values, Even, Even);
    inv_laplacian_coeffs(&plan.lambda, &mut c);
    let values = plan.inverse(&c, Even, Even);
    Ok(ScalarField { grid: g.grid, values, mean_free: true })
}

/// Divide cosine coefficients by −λ, zeroing the constant mode.
pub fn inv_laplacian_coeffs(lambda: &[f64], c: &mut [f64]) {
    c[0] = 0.0;
    for (c, l) in c.iter_mut().zip(lambda).skip(1) {
        *c /= -l;
    }
}

/// ⨍|∇Δ⁻¹g|² (squared H⁻¹ seminorm).
pub fn hminus1_seminorm_sq(g: &ScalarField) -> Result<f64> {
    hminus1_seminorm_sq_with(g, Normalization::Averaged)
}

pub fn hminus1_seminorm_sq_with(g: &ScalarField, norm: Normalization) -> Result<f64> {
    check_mean_free(g)?;
    let plan = plan_of(&g.grid);
    let c = plan.forward(&g.values, Even, Even);
    Ok(hminus1_sq_coeffs(&plan.lambda, &c) * norm.factor(&g.grid))
}

pub fn hminus1_sq_coeffs(lambda: &[f64], c: &[f64]) -> f64 {
    c.iter().zip(lambda).skip(1).map(|(c, l)| c * c / l).sum()
}

/// The advection term u·∇θ in skew-symmetric form ½[u·∇θ + ∇·(uθ)],
/// projected mean-free. For band-limited data it coincides with the
/// pointwise product; for any u it is exactly skew-adjoint in the nodal
/// inner product.
pub fn advect(u: &VectorField, theta: &ScalarField) -> Result<ScalarField> {
    u.grid().check_same(&theta.grid)?;
    let op = AdvectionOperator::new(plan_of(&theta.grid), u, Dealias::None);
    Ok(op.apply_field(theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub enum Dealias {
    None,
    /// Evaluate products on a grid padded by the 3/2 rule.
    #[default]
    ThreeHalves,
}

/// Linear map θ ↦ A θ = ½[u·∇θ + ∇·(uθ)] on cosine coefficients.
pub struct AdvectionOperator {
    plan: Arc<NeumannSpectralPlan>,
    dealias: Dealias,
    ux: Vec<f64>,
    uy: Vec<f64>,
}

impl AdvectionOperator {
    pub fn new(plan: Arc<NeumannSpectralPlan>, u: &VectorField, dealias: Dealias) -> Self {
        let (ux, uy) = match dealias {
            Dealias::None => (u.x.values.clone(), u.y.values.clone()),
            Dealias::ThreeHalves => {
                let (nx, ny) = (plan.nx(), plan.ny());
                let (fx, fy) = plan.padded_axes();
                let (mx, my) = (fx.n, fy.n);
                let cx = plan.forward(&u.x.values, Odd, Even);
                let cy = plan.forward(&u.y.values, Even, Odd);
                let mut ux = pad_coeffs(&cx, nx, ny, mx, my, Odd, Even);
                sweep_y(fy, mx, &mut ux, &[RowOp::Inverse(Even)]);
                sweep_x(fx, &mut ux, &[RowOp::Inverse(Odd)]);
                let mut uy = pad_coeffs(&cy, nx, ny, mx, my, Even, Odd);
                sweep_y(fy, mx, &mut uy, &[RowOp::Inverse(Odd)]);
                sweep_x(fx, &mut uy, &[RowOp::Inverse(Even)]);
                (ux, uy)
            }
        };
        Self { plan, dealias, ux, uy }
    }

    pub fn plan(&self) -> &Arc<NeumannSpectralPlan> {
        &self.plan
    }

    pub fn grid(&self) -> Grid {
        self.plan.grid
    }

    fn axes(&self) -> (&Axis, &Axis) {
        match self.dealias {
            Dealias::None => (&self.plan.ax, &self.plan.ay),
            Dealias::ThreeHalves => {
                let (a, b) = self.plan.padded_axes();
                (a, b)
            }
        }
    }

    /// A applied to cosine coefficients `c`, returning cosine coefficients
    /// with the constant mode removed.
    pub fn apply_coeffs(&self, c: &[f64]) -> Vec<f64> {
        let (nx, ny) = (self.plan.nx(), self.plan.ny());
        let (ax, ay) = self.axes();
        let (ex, ey) = (ax.n, ay.n);
        let p = if ex == nx && ey == ny {
            c.to_vec()
        } else {
            pad_coeffs(c, nx, ny, ex, ey, Even, Even)
        };

        // Coefficients in x, nodal in y.
        let mut half = p.clone();
        sweep_y(ay, ex, &mut half, &[RowOp::Inverse(Even)]);
        let mut theta = half.clone();
        sweep_x(ax, &mut theta, &[RowOp::Inverse(Even)]);
        let mut gx = half;
        sweep_x(ax, &mut gx, &[RowOp::Derivative(Even), RowOp::Inverse(Odd)]);
        let mut gy = p;
        sweep_y(ay, ex, &mut gy, &[RowOp::Derivative(Even), RowOp::Inverse(Odd)]);
        sweep_x(ax, &mut gy, &[RowOp::Inverse(Even)]);

        // Pointwise products: s = u·∇θ, qx = u_x θ, qy = u_y θ.
        let mut s = gx;
        let mut qx = gy;
        let mut qy = theta;
        for k in 0..s.len() {
            let th = qy[k];
            s[k] = self.ux[k] * s[k] + self.uy[k] * qx[k];
            qx[k] = self.ux[k] * th;
            qy[k] = self.uy[k] * th;
        }

        sweep_y(ay, ex, &mut qy, &[RowOp::Forward(Odd), RowOp::Derivative(Odd), RowOp::Inverse(Even)]);
        s.iter_mut().zip(&qy).for_each(|(a, b)| *a += b);
        sweep_x(ax, &mut s, &[RowOp::Forward(Even)]);
        sweep_x(ax, &mut qx, &[RowOp::Forward(Odd), RowOp::Derivative(Odd)]);
        s.iter_mut().zip(&qx).for_each(|(a, b)| *a = 0.5 * (*a + b));
        sweep_y(ay, ex, &mut s, &[RowOp::Forward(Even)]);

        let mut out = if ex == nx && ey == ny { s } else { truncate_coeffs(&s, ex, nx, ny) };
        out[0] = 0.0;
        out
    }

    pub fn apply_field(&self, theta: &ScalarField) -> ScalarField {
        let c = self.plan.forward(&theta.values, Even, Even);
        let a = self.apply_coeffs(&c);
        let values = self.plan.inverse(&a, Even, Even);
        ScalarField { grid: theta.grid, values, mean_free: true }
    }
}

/// ⟨a, b⟩ on coefficient vectors; equals the nodal mean of the product.
pub fn coeff_dot(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{domain_average, l2_inner, project_mean_free, Domain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn g64() -> Grid {
        Grid::square(Domain::two_pi_square(), 64).unwrap()
    }

    fn sinusoidal(grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| 0.5 * (2.0 * y).cos() - 0.5 * (2.0 * x).cos())
    }

    fn cellular(grid: Grid) -> VectorField {
        VectorField::from_fn(grid, |x, y| (x.sin() * y.cos(), -x.cos() * y.sin()))
    }

    fn random_smooth(grid: Grid, rng: &mut ChaCha8Rng, modes: usize) -> ScalarField {
        let mut c = vec![0.0; grid.len()];
        for ky in 0..modes {
            for kx in 0..modes {
                c[ky * grid.nx + kx] = rng.gen_range(-1.0..1.0) / (1.0 + (kx * kx + ky * ky) as f64);
            }
        }
        c[0] = 0.0;
        from_cos_coeffs(grid, &c)
    }

    fn random_psi(grid: Grid, rng: &mut ChaCha8Rng, modes: usize) -> ScalarField {
        let mut c = vec![0.0; grid.len()];
        for ky in 0..modes {
            for kx in 0..modes {
                c[ky * grid.nx + kx] = rng.gen_range(-1.0..1.0) / (1.0 + (kx * kx + ky * ky) as f64);
            }
        }
        let values = plan_of(&grid).inverse(&c, Odd, Odd);
        ScalarField { grid, values, mean_free: false }
    }

    #[test]
    fn lambda1_examples() {
        use std::f64::consts::PI;
        assert!((lambda1(&g64()) - 0.25).abs() < 1e-15);
        let g = Grid::square(Domain::unit_square(), 16).unwrap();
        assert!((lambda1(&g) - PI * PI / 4.0).abs() < 1e-14);
        let r = Grid::new(Domain::new(0.0, 2.0 * PI, 0.0, PI).unwrap(), 16, 8).unwrap();
        assert!((lambda1(&r) - 0.25).abs() < 1e-15);
        assert!((NeumannSpectralPlan::new(r).lambda1() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let g = g64();
        let th = ScalarField::from_fn(g, |x, _| (2.0 * x).cos());
        let d = gradient(&th);
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((d.x.at(i, j) + 2.0 * (2.0 * g.x(i)).sin()).abs() < 1e-12);
                assert!(d.y.at(i, j).abs() < 1e-12);
            }
        }
        assert!(gradient(&ScalarField::constant(g, 2.0)).max_abs() < 1e-12);
        let f = sinusoidal(g);
        assert!((gradient(&f).mean_square() - 1.0).abs() < 1e-12);
        assert!((dirichlet_energy(&f) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perp_gradient_of_cellular_stream_function() {
        let g = g64();
        let psi = ScalarField::from_fn(g, |x, y| x.sin() * y.sin());
        let u = perp_gradient(&psi).unwrap();
        let exact = cellular(g);
        for k in 0..g.len() {
            assert!((u.x.values[k] - exact.x.values[k]).abs() < 1e-12);
            assert!((u.y.values[k] - exact.y.values[k]).abs() < 1e-12);
        }
        assert!(perp_gradient(&ScalarField::zeros(g)).unwrap().max_abs() == 0.0);
        let bad = ScalarField::from_fn(g, |x, y| 1.0 + x.sin() * y.sin());
        assert!(matches!(perp_gradient(&bad), Err(FluxError::BoundaryViolation { .. })));
    }

    #[test]
    fn perp_gradient_is_divergence_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = Grid::new(Domain::unit_square(), 48, 40).unwrap();
        for _ in 0..5 {
            let psi = random_psi(g, &mut rng, 10);
            let u = perp_gradient_unchecked(&psi);
            let (div, scale) = divergence_with_scale(&u);
            assert!(div.max_abs() <= 1e-10 * scale);
            check_incompressible(&u).unwrap();
        }
    }

    #[test]
    fn inverse_laplacian_examples() {
        let g = g64();
        let src = ScalarField::from_fn(g, |x, _| -0.5 * (2.0 * x).cos());
        let h = inv_neumann_laplacian(&src).unwrap();
        for j in 0..g.ny {
            for i in 0..g.nx {
                assert!((h.at(i, j) - (2.0 * g.x(i)).cos() / 8.0).abs() < 1e-13);
            }
        }
        assert!(inv_neumann_laplacian(&ScalarField::zeros(g)).unwrap().max_abs() == 0.0);
        let not_mf = ScalarField::constant(g, 1.0);
        assert!(matches!(inv_neumann_laplacian(&not_mf), Err(FluxError::NotMeanFree { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_smooth(g, &mut rng, 20);
        let back = laplacian(&inv_neumann_laplacian(&r).unwrap());
        let err = back.sub(&r).unwrap().max_abs();
        assert!(err <= 1e-10 * r.max_abs());
        assert!(domain_average(&inv_neumann_laplacian(&r).unwrap()).abs() < 1e-12 * r.max_abs());
    }

    #[test]
    fn hminus1_examples() {
        let g = g64();
        let f = sinusoidal(g);
        assert!((hminus1_seminorm_sq(&f).unwrap() - 1.0 / 16.0).abs() < 1e-14);
        let c = ScalarField::from_fn(g, |x, _| (2.0 * x).cos());
        assert!((hminus1_seminorm_sq(&c).unwrap() - 1.0 / 8.0).abs() < 1e-14);
        let area = g.domain.area();
        let integrated = hminus1_seminorm_sq_with(&c, Normalization::Integrated).unwrap();
        assert!((integrated - area / 8.0).abs() < 1e-12);
        assert_eq!(hminus1_seminorm_sq(&ScalarField::zeros(g)).unwrap(), 0.0);
    }

    #[test]
    fn advection_of_cellular_pair_gives_source() {
        let g = g64();
        let u = cellular(g);
        let eta = ScalarField::from_fn(g, |x, y| -x.cos() * y.cos());
        let a = advect(&u, &eta).unwrap();
        let f = sinusoidal(g);
        assert!(a.sub(&f).unwrap().max_abs() < 1e-10);
        assert!(advect(&VectorField::zeros(g), &eta).unwrap().max_abs() == 0.0);
    }

    #[test]
    fn padded_and_unpadded_agree_on_band_limited_data() {
        let g = g64();
        let u = cellular(g);
        let eta = ScalarField::from_fn(g, |x, y| -x.cos() * y.cos() + 0.3 * (3.0 * x).cos());
        let plan = plan_of(&g);
        let a = AdvectionOperator::new(plan.clone(), &u, Dealias::None).apply_field(&eta);
        let b = AdvectionOperator::new(plan, &u, Dealias::ThreeHalves).apply_field(&eta);
        assert!(a.sub(&b).unwrap().max_abs() < 1e-11);
    }

    #[test]
    fn advection_is_skew_for_any_velocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid::new(Domain::unit_square(), 32, 24).unwrap();
        let plan = plan_of(&g);
        for dealias in [Dealias::None, Dealias::ThreeHalves] {
            let psi = random_psi(g, &mut rng, 8);
            let u = perp_gradient_unchecked(&psi);
            let op = AdvectionOperator::new(plan.clone(), &u, dealias);
            let a = random_smooth(g, &mut rng, 16);
            let b = random_smooth(g, &mut rng, 16);
            let ab = l2_inner(&op.apply_field(&a), &b).unwrap();
            let ba = l2_inner(&op.apply_field(&b), &a).unwrap();
            let scale = l2_inner(&op.apply_field(&a), &op.apply_field(&a)).unwrap().sqrt()
                * l2_inner(&b, &b).unwrap().sqrt();
            assert!((ab + ba).abs() <= 1e-12 * scale, "{ab} {ba}");
            let aa = l2_inner(&op.apply_field(&a), &a).unwrap();
            assert!(aa.abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn advection_output_is_mean_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::square(Domain::unit_square(), 32).unwrap();
        let u = perp_gradient_unchecked(&random_psi(g, &mut rng, 6));
        let th = project_mean_free(&random_smooth(g, &mut rng, 10));
        let a = advect(&u, &th).unwrap();
        assert!(domain_average(&a).abs() < 1e-13 * a.max_abs().max(1e-300));
    }
}
