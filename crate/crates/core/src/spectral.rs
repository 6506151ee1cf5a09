//! Cosine and sine transforms on cell-centred nodes.
//!
//! Coefficients are kept in the orthonormal normalisation of the midpoint
//! inner product: a nodal array `v` with cosine coefficients `c` satisfies
//! `mean(v²) = Σ c²`, and likewise for sines. Along one axis of `n` nodes,
//! cosine mode `k` (stored at index `k`, `0 ≤ k < n`) is `√2·cos(kπs/L)` for
//! `k > 0` and `1` for `k = 0`; sine mode `k` (stored at index `k − 1`,
//! `1 ≤ k ≤ n`) is `√2·sin(kπs/L)` except the Nyquist mode `k = n`, which is
//! `sin(nπs/L)` (unit amplitude, alternating sign on the nodes).
//!
//! Differentiation maps cosine mode `k` to sine mode `k` and back; in this
//! normalisation the two derivative matrices are exact negative transposes,
//! which makes the discrete advection operator exactly skew.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustdct::{DctPlanner, TransformType2And3};

use crate::field::Grid;

/// Parity of a field along one axis: even fields expand in cosines
/// (zero normal derivative), odd fields in sines (zero trace).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn flip(self) -> Self {
        match self {
            Parity::Even => Parity::Odd,
            Parity::Odd => Parity::Even,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum RowOp {
    /// Nodal values to coefficients.
    Forward(Parity),
    /// Coefficients to nodal values.
    Inverse(Parity),
    /// d/ds on coefficients of the given parity; the output has the other parity.
    Derivative(Parity),
    /// Multiply coefficient `k` by `-(kπ/L)²`; valid for either parity.
    SecondDerivative(Parity),
}

pub struct Axis {
    pub n: usize,
    pub length: f64,
    plan: Arc<dyn TransformType2And3<f64>>,
    /// `kπ/L` for `k = 0..=n`.
    pub wavenumber: Vec<f64>,
}

impl Axis {
    pub fn new(planner: &mut DctPlanner<f64>, n: usize, length: f64) -> Self {
        let plan = planner.plan_dct2(n);
        let wavenumber = (0..=n)
            .map(|k| k as f64 * std::f64::consts::PI / length)
            .collect();
        Self { n, length, plan, wavenumber }
    }

    pub fn scratch_len(&self) -> usize {
        self.plan.get_scratch_len()
    }

    pub fn apply(&self, op: RowOp, row: &mut [f64], scratch: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(row.len(), n);
        let inv_n = 1.0 / n as f64;
        let s2 = std::f64::consts::SQRT_2;
        match op {
            RowOp::Forward(Parity::Even) => {
                self.plan.process_dct2_with_scratch(row, scratch);
                row[0] *= inv_n;
                for v in &mut row[1..] {
                    *v *= s2 * inv_n;
                }
            }
            RowOp::Forward(Parity::Odd) => {
                self.plan.process_dst2_with_scratch(row, scratch);
                for v in &mut row[..n - 1] {
                    *v *= s2 * inv_n;
                }
                row[n - 1] *= inv_n;
            }
            RowOp::Inverse(Parity::Even) => {
                row[0] *= 2.0;
                for v in &mut row[1..] {
                    *v *= s2;
                }
                self.plan.process_dct3_with_scratch(row, scratch);
            }
            RowOp::Inverse(Parity::Odd) => {
                for v in &mut row[..n - 1] {
                    *v *= s2;
                }
                row[n - 1] *= 2.0;
                self.plan.process_dst3_with_scratch(row, scratch);
            }
            RowOp::Derivative(Parity::Even) => {
                for k in 1..n {
                    row[k - 1] = -self.wavenumber[k] * row[k];
                }
                row[n - 1] = 0.0;
            }
            RowOp::Derivative(Parity::Odd) => {
                // The Nyquist sine vanishes at every node once differentiated.
                for k in (1..n).rev() {
                    row[k] = self.wavenumber[k] * row[k - 1];
                }
                row[0] = 0.0;
            }
            RowOp::SecondDerivative(Parity::Even) => {
                for (k, v) in row.iter_mut().enumerate() {
                    *v *= -self.wavenumber[k] * self.wavenumber[k];
                }
            }
            RowOp::SecondDerivative(Parity::Odd) => {
                for (k, v) in row.iter_mut().enumerate() {
                    *v *= -self.wavenumber[k + 1] * self.wavenumber[k + 1];
                }
            }
        }
    }
}

/// Transform plans and the Neumann eigenvalue table for one grid.
pub struct NeumannSpectralPlan {
    pub grid: Grid,
    pub ax: Axis,
    pub ay: Axis,
    /// λ(kx, ky) = (πkx/Lx)² + (πky/Ly)², stored at `ky * nx + kx`.
    pub lambda: Vec<f64>,
    /// Plans on the 3/2-padded grid, built on first use.
    padded: OnceLock<(Axis, Axis)>,
}

impl NeumannSpectralPlan {
    pub fn new(grid: Grid) -> Self {
        let mut planner = DctPlanner::new();
        let ax = Axis::new(&mut planner, grid.nx, grid.domain.lx());
        let ay = Axis::new(&mut planner, grid.ny, grid.domain.ly());
        let mut lambda = Vec::with_capacity(grid.len());
        for ky in 0..grid.ny {
            for kx in 0..grid.nx {
                lambda.push(ax.wavenumber[kx].powi(2) + ay.wavenumber[ky].powi(2));
            }
        }
        Self { grid, ax, ay, lambda, padded: OnceLock::new() }
    }

    /// Shared plan for `grid`, cached process-wide.
    pub fn for_grid(grid: &Grid) -> Arc<NeumannSpectralPlan> {
        type Key = (usize, usize, [u64; 4]);
        static CACHE: OnceLock<Mutex<HashMap<Key, Arc<NeumannSpectralPlan>>>> = OnceLock::new();
        let d = grid.domain;
        let key = (
            grid.nx,
            grid.ny,
            [d.x_min.to_bits(), d.x_max.to_bits(), d.y_min.to_bits(), d.y_max.to_bits()],
        );
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut map = cache.lock().expect("plan cache poisoned");
        if let Some(p) = map.get(&key) {
            return p.clone();
        }
        // Large plans are only kept for the most recent grids.
        if map.len() > 16 {
            map.clear();
        }
        let plan = Arc::new(NeumannSpectralPlan::new(*grid));
        map.insert(key, plan.clone());
        plan
    }

    pub fn nx(&self) -> usize {
        self.grid.nx
    }

    pub fn ny(&self) -> usize {
        self.grid.ny
    }

    pub fn padded_axes(&self) -> &(Axis, Axis) {
        self.padded.get_or_init(|| {
            let mut planner = DctPlanner::new();
            let mx = padded_len(self.grid.nx);
            let my = padded_len(self.grid.ny);
            (
                Axis::new(&mut planner, mx, self.grid.domain.lx()),
                Axis::new(&mut planner, my, self.grid.domain.ly()),
            )
        })
    }

    /// Smallest nontrivial Neumann eigenvalue.
    pub fn lambda1(&self) -> f64 {
        self.ax.wavenumber[1].powi(2).min(self.ay.wavenumber[1].powi(2))
    }
}

pub fn padded_len(n: usize) -> usize {
    (3 * n).div_ceil(2)
}

/// Apply `ops` to every row (x direction) of a row-major `nx`-wide array.
pub fn sweep_x(axis: &Axis, data: &mut [f64], ops: &[RowOp]) {
    let mut scratch = vec![0.0; axis.scratch_len()];
    for row in data.chunks_exact_mut(axis.n) {
        for &op in ops {
            axis.apply(op, row, &mut scratch);
        }
    }
}

/// Apply `ops` along columns (y direction) of a row-major array `nx` wide.
pub fn sweep_y(axis: &Axis, nx: usize, data: &mut [f64], ops: &[RowOp]) {
    let ny = axis.n;
    debug_assert_eq!(data.len(), nx * ny);
    let mut t = vec![0.0; data.len()];
    transpose(data, &mut t, ny, nx);
    let mut scratch = vec![0.0; axis.scratch_len()];
    for col in t.chunks_exact_mut(ny) {
        for &op in ops {
            axis.apply(op, col, &mut scratch);
        }
    }
    transpose(&t, data, nx, ny);
}

/// Blocked transpose of a `rows x cols` row-major array.
pub fn transpose(src: &[f64], dst: &mut [f64], rows: usize, cols: usize) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Copy an `ny x nx` coefficient array into the top-left corner of a zeroed
/// `my x mx` array. Odd-parity Nyquist modes are renormalised to the larger
/// grid, where they are no longer Nyquist.
pub fn pad_coeffs(
    c: &[f64],
    nx: usize,
    ny: usize,
    mx: usize,
    my: usize,
    px: Parity,
    py: Parity,
) -> Vec<f64> {
    let mut out = vec![0.0; mx * my];
    let fx = |k: usize| if px == Parity::Odd && k == nx - 1 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    let fy = |k: usize| if py == Parity::Odd && k == ny - 1 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
    for ky in 0..ny {
        let wy = fy(ky);
        for kx in 0..nx {
            out[ky * mx + kx] = c[ky * nx + kx] * wy * fx(kx);
        }
    }
    out
}

/// Keep the leading `ny x nx` even-parity coefficients of an `my x mx` array.
pub fn truncate_coeffs(c: &[f64], mx: usize, nx: usize, ny: usize) -> Vec<f64> {
    let mut out = vec![0.0; nx * ny];
    for ky in 0..ny {
        out[ky * nx..(ky + 1) * nx].copy_from_slice(&c[ky * mx..ky * mx + nx]);
    }
    out
}

impl NeumannSpectralPlan {
    /// Nodal values to 2D coefficients of the given parities.
    pub fn forward(&self, nodal: &[f64], px: Parity, py: Parity) -> Vec<f64> {
        let mut c = nodal.to_vec();
        sweep_x(&self.ax, &mut c, &[RowOp::Forward(px)]);
        sweep_y(&self.ay, self.nx(), &mut c, &[RowOp::Forward(py)]);
        c
    }

    pub fn inverse(&self, coeffs: &[f64], px: Parity, py: Parity) -> Vec<f64> {
        let mut v = coeffs.to_vec();
        sweep_y(&self.ay, self.nx(), &mut v, &[RowOp::Inverse(py)]);
        sweep_x(&self.ax, &mut v, &[RowOp::Inverse(px)]);
        v
    }

    /// Nodal ∂x of a field with x-parity `px`; the y-parity is untouched.
    pub fn dx_nodal(&self, nodal: &[f64], px: Parity) -> Vec<f64> {
        let mut v = nodal.to_vec();
        sweep_x(
            &self.ax,
            &mut v,
            &[RowOp::Forward(px), RowOp::Derivative(px), RowOp::Inverse(px.flip())],
        );
        v
    }

    /// Nodal ∂y of a field with y-parity `py`.
    pub fn dy_nodal(&self, nodal: &[f64], py: Parity) -> Vec<f64> {
        let mut v = nodal.to_vec();
        sweep_y(
            &self.ay,
            self.nx(),
            &mut v,
            &[RowOp::Forward(py), RowOp::Derivative(py), RowOp::Inverse(py.flip())],
        );
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Domain;
    use std::f64::consts::PI;

    fn axis(n: usize, l: f64) -> Axis {
        Axis::new(&mut DctPlanner::new(), n, l)
    }

    fn nodes(n: usize, l: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 + 0.5) * l / n as f64).collect()
    }

    #[test]
    fn cosine_coefficients_are_orthonormal() {
        let n = 12;
        let a = axis(n, 2.0);
        let xs = nodes(n, 2.0);
        let mut scratch = vec![0.0; a.scratch_len()];
        for k in 0..n {
            let amp = if k == 0 { 1.0 } else { 2f64.sqrt() };
            let mut row: Vec<f64> = xs.iter().map(|x| amp * (k as f64 * PI * x / 2.0).cos()).collect();
            let orig = row.clone();
            a.apply(RowOp::Forward(Parity::Even), &mut row, &mut scratch);
            for (m, c) in row.iter().enumerate() {
                let e = if m == k { 1.0 } else { 0.0 };
                assert!((c - e).abs() < 1e-12, "k={k} m={m} c={c}");
            }
            a.apply(RowOp::Inverse(Parity::Even), &mut row, &mut scratch);
            for (u, v) in row.iter().zip(&orig) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sine_coefficients_are_orthonormal() {
        let n = 10;
        let a = axis(n, 3.0);
        let xs = nodes(n, 3.0);
        let mut scratch = vec![0.0; a.scratch_len()];
        for k in 1..=n {
            let amp = if k == n { 1.0 } else { 2f64.sqrt() };
            let mut row: Vec<f64> = xs.iter().map(|x| amp * (k as f64 * PI * x / 3.0).sin()).collect();
            let orig = row.clone();
            a.apply(RowOp::Forward(Parity::Odd), &mut row, &mut scratch);
            for (m, c) in row.iter().enumerate() {
                let e = if m + 1 == k { 1.0 } else { 0.0 };
                assert!((c - e).abs() < 1e-12, "k={k} m={m} c={c}");
            }
            a.apply(RowOp::Inverse(Parity::Odd), &mut row, &mut scratch);
            for (u, v) in row.iter().zip(&orig) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn derivative_matrices_are_negative_transposes() {
        let n = 9;
        let a = axis(n, 1.3);
        let mut scratch = vec![0.0; a.scratch_len()];
        let mut dc = vec![vec![0.0; n]; n];
        let mut ds = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let mut f = e.clone();
            a.apply(RowOp::Derivative(Parity::Even), &mut e, &mut scratch);
            a.apply(RowOp::Derivative(Parity::Odd), &mut f, &mut scratch);
            for i in 0..n {
                dc[i][j] = e[i];
                ds[i][j] = f[i];
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert!((dc[i][j] + ds[j][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nodal_derivative_of_cosine() {
        let g = Grid::new(Domain::two_pi_square(), 16, 24).unwrap();
        let plan = NeumannSpectralPlan::new(g);
        let v: Vec<f64> = (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| (2.0 * g.x(i)).cos() * (3.0 * g.y(j)).cos()))
            .collect();
        let dx = plan.dx_nodal(&v, Parity::Even);
        let dy = plan.dy_nodal(&v, Parity::Even);
        for j in 0..g.ny {
            for i in 0..g.nx {
                let (x, y) = (g.x(i), g.y(j));
                assert!((dx[j * g.nx + i] + 2.0 * (2.0 * x).sin() * (3.0 * y).cos()).abs() < 1e-12);
                assert!((dy[j * g.nx + i] + 3.0 * (2.0 * x).cos() * (3.0 * y).sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_preserves_the_interpolant() {
        let g = Grid::new(Domain::unit_square(), 8, 10).unwrap();
        let plan = NeumannSpectralPlan::new(g);
        let (px_axis, py_axis) = plan.padded_axes();
        let (mx, my) = (px_axis.n, py_axis.n);
        // Odd in x up to the Nyquist mode, even in y.
        let f = |x: f64, y: f64| (8.0 * PI * (x + 1.0) / 2.0).sin() * (PI * (y + 1.0)).cos()
            + 0.3 * (PI * (x + 1.0) / 2.0).sin();
        let v: Vec<f64> = (0..g.ny)
            .flat_map(|j| (0..g.nx).map(move |i| f(g.x(i), g.y(j))))
            .collect();
        let c = plan.forward(&v, Parity::Odd, Parity::Even);
        let cp = pad_coeffs(&c, g.nx, g.ny, mx, my, Parity::Odd, Parity::Even);
        let mut fine = cp;
        sweep_y(py_axis, mx, &mut fine, &[RowOp::Inverse(Parity::Even)]);
        sweep_x(px_axis, &mut fine, &[RowOp::Inverse(Parity::Odd)]);
        for j in 0..my {
            for i in 0..mx {
                let x = -1.0 + (i as f64 + 0.5) * 2.0 / mx as f64;
                let y = -1.0 + (j as f64 + 0.5) * 2.0 / my as f64;
                assert!((fine[j * mx + i] - f(x, y)).abs() < 1e-12);
            }
        }
    }
}
