//! Rectangular domains, cell-centred grids and nodal fields.
//!
//! Nodes sit at cell centres, so the arithmetic mean of nodal values is the
//! midpoint rule. That rule integrates every cosine mode the grid can carry
//! exactly, which is what the spectral calculus relies on.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FluxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Domain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let ok = x_min.is_finite() && x_max.is_finite() && y_min.is_finite() && y_max.is_finite();
        if !ok || x_max <= x_min || y_max <= y_min {
            return Err(FluxError::Parameter(format!(
                "degenerate domain ({x_min}, {x_max}) x ({y_min}, {y_max})"
            )));
        }
        Ok(Self { x_min, x_max, y_min, y_max })
    }

    /// The periodic-cell square (0, 2π)².
    pub fn two_pi_square() -> Self {
        let tau = 2.0 * std::f64::consts::PI;
        Self { x_min: 0.0, x_max: tau, y_min: 0.0, y_max: tau }
    }

    /// The centred square (−1, 1)².
    pub fn unit_square() -> Self {
        Self { x_min: -1.0, x_max: 1.0, y_min: -1.0, y_max: 1.0 }
    }

    pub fn lx(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn ly(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.lx() * self.ly()
    }

    pub fn diameter(&self) -> f64 {
        self.lx().hypot(self.ly())
    }

    pub fn approx_eq(&self, other: &Domain, tol: f64) -> bool {
        (self.x_min - other.x_min).abs() <= tol
            && (self.x_max - other.x_max).abs() <= tol
            && (self.y_min - other.y_min).abs() <= tol
            && (self.y_max - other.y_max).abs() <= tol
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: Domain,
    pub nx: usize,
    pub ny: usize,
}

impl Grid {
    pub const MIN_CELLS: usize = 8;

    pub fn new(domain: Domain, nx: usize, ny: usize) -> Result<Self> {
        if nx < Self::MIN_CELLS || ny < Self::MIN_CELLS {
            return Err(FluxError::Parameter(format!(
                "grid {nx}x{ny} is below the minimum of {} cells per axis",
                Self::MIN_CELLS
            )));
        }
        Ok(Self { domain, nx, ny })
    }

    pub fn square(domain: Domain, n: usize) -> Result<Self> {
        Self::new(domain, n, n)
    }

    pub fn hx(&self) -> f64 {
        self.domain.lx() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.domain.ly() / self.ny as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.domain.x_min + (i as f64 + 0.5) * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        self.domain.y_min + (j as f64 + 0.5) * self.hy()
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Area of one cell, i.e. the quadrature weight for unnormalised integrals.
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn same_as(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.domain.approx_eq(&other.domain, 1e-12)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(FluxError::Dimension(format!(
                "{}x{} on {:?} vs {}x{} on {:?}",
                self.nx, self.ny, self.domain, other.nx, other.ny, other.domain
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: Grid,
    /// Row-major nodal values: `values[j * nx + i]` sits at `(x_i, y_j)`.
    pub values: Vec<f64>,
    pub mean_free: bool,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()], mean_free: true }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()], mean_free: c == 0.0 }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(FluxError::Dimension(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values, mean_free: false })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                values.push(f(grid.x(i), y));
            }
        }
        Self { grid, values, mean_free: false }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.grid.nx + i]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            mean_free: false,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| a * v).collect(),
            mean_free: self.mean_free,
        }
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &ScalarField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| x + a * y).collect(),
            mean_free: self.mean_free && other.mean_free,
        })
    }

    pub fn add(&self, other: &ScalarField) -> Result<Self> {
        self.axpy(1.0, other)
    }

    pub fn sub(&self, other: &ScalarField) -> Result<Self> {
        self.axpy(-1.0, other)
    }

    pub fn mul(&self, other: &ScalarField) -> Result<Self> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| x * y).collect(),
            mean_free: false,
        })
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        let d = self.grid.domain;
        writeln!(w, "# nx,ny,x_min,x_max,y_min,y_max")?;
        writeln!(
            w,
            "# {},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            self.grid.nx, self.grid.ny, d.x_min, d.x_max, d.y_min, d.y_max
        )?;
        let mut line = String::new();
        for row in self.values.chunks(self.grid.nx) {
            line.clear();
            for (i, v) in row.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                write!(line, "{v:.16e}").expect("writing to a String cannot fail");
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut header: Option<Grid> = None;
        let mut values = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if header.is_none() {
                    header = parse_header(rest.trim())?;
                }
                continue;
            }
            for tok in line.split(',') {
                let v: f64 = tok
                    .trim()
                    .parse()
                    .map_err(|_| FluxError::Parse(format!("bad value {tok:?}")))?;
                values.push(v);
            }
        }
        let grid = header.ok_or_else(|| FluxError::Parse("missing grid header".into()))?;
        Self::from_values(grid, values)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(f))
    }
}

fn parse_header(s: &str) -> Result<Option<Grid>> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 6 || parts[0] == "nx" {
        return Ok(None);
    }
    let bad = |_| FluxError::Parse(format!("bad header {s:?}"));
    let nx: usize = parts[0].parse().map_err(bad)?;
    let ny: usize = parts[1].parse().map_err(bad)?;
    let mut b = [0.0; 4];
    for (k, p) in parts[2..].iter().enumerate() {
        b[k] = p.parse().map_err(|_| FluxError::Parse(format!("bad header {s:?}")))?;
    }
    let domain = Domain::new(b[0], b[1], b[2], b[3])?;
    Ok(Some(Grid::new(domain, nx, ny)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub x: ScalarField,
    pub y: ScalarField,
}

impl VectorField {
    pub fn new(x: ScalarField, y: ScalarField) -> Result<Self> {
        x.grid.check_same(&y.grid)?;
        Ok(Self { x, y })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self { x: ScalarField::zeros(grid), y: ScalarField::zeros(grid) }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> (f64, f64)) -> Self {
        let mut vx = Vec::with_capacity(grid.len());
        let mut vy = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            let y = grid.y(j);
            for i in 0..grid.nx {
                let (a, b) = f(grid.x(i), y);
                vx.push(a);
                vy.push(b);
            }
        }
        Self {
            x: ScalarField { grid, values: vx, mean_free: false },
            y: ScalarField { grid, values: vy, mean_free: false },
        }
    }

    pub fn grid(&self) -> Grid {
        self.x.grid
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { x: self.x.scaled(a), y: self.y.scaled(a) }
    }

    /// ⨍|v|² over the nodes.
    pub fn mean_square(&self) -> f64 {
        let s: f64 = self
            .x
            .values
            .iter()
            .zip(&self.y.values)
            .map(|(a, b)| a * a + b * b)
            .sum();
        s / self.grid().len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.x.max_abs().max(self.y.max_abs())
    }

    pub fn dot(&self, other: &VectorField) -> Result<f64> {
        Ok(l2_inner(&self.x, &other.x)? + l2_inner(&self.y, &other.y)?)
    }
}

/// ⨍_Ω field, by the midpoint rule.
pub fn domain_average(field: &ScalarField) -> f64 {
    mean(&field.values)
}

/// ⨍_Ω a·b.
pub fn l2_inner(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.grid.check_same(&b.grid)?;
    Ok(dot(&a.values, &b.values) / a.values.len() as f64)
}

pub fn project_mean_free(field: &ScalarField) -> ScalarField {
    let m = domain_average(field);
    let mut values: Vec<f64> = field.values.iter().map(|v| v - m).collect();
    // A second pass removes the rounding left by the first subtraction.
    let m2 = mean(&values);
    values.iter_mut().for_each(|v| *v -= m2);
    ScalarField { grid: field.grid, values, mean_free: true }
}

/// Unnormalised integral ∫_Ω field.
pub fn integral(field: &ScalarField) -> f64 {
    domain_average(field) * field.grid.domain.area()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoidal(grid: Grid) -> ScalarField {
        ScalarField::from_fn(grid, |x, y| 0.5 * (2.0 * y).cos() - 0.5 * (2.0 * x).cos())
    }

    fn grid64() -> Grid {
        Grid::square(Domain::two_pi_square(), 64).unwrap()
    }

    #[test]
    fn averages_of_closed_forms() {
        let g = grid64();
        assert!((domain_average(&ScalarField::constant(g, 3.5)) - 3.5).abs() < 1e-14);
        let f = sinusoidal(g);
        assert!(domain_average(&f).abs() < 1e-12);
        assert!((l2_inner(&f, &f).unwrap() - 0.25).abs() < 1e-14);
        let cx = ScalarField::from_fn(g, |x, _| (2.0 * x).cos());
        let cy = ScalarField::from_fn(g, |_, y| (2.0 * y).cos());
        assert!(l2_inner(&cx, &cy).unwrap().abs() < 1e-14);
        assert_eq!(l2_inner(&f, &ScalarField::zeros(g)).unwrap(), 0.0);
    }

    #[test]
    fn projection_removes_mean() {
        let g = grid64();
        let a = ScalarField::from_fn(g, |x, _| 1.0 + (2.0 * x).cos());
        let p = project_mean_free(&a);
        let expect = ScalarField::from_fn(g, |x, _| (2.0 * x).cos());
        for (u, v) in p.values.iter().zip(&expect.values) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(p.mean_free);
        let c = project_mean_free(&ScalarField::constant(g, 7.0));
        assert!(c.max_abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = ScalarField::zeros(grid64());
        let b = ScalarField::zeros(Grid::square(Domain::two_pi_square(), 32).unwrap());
        assert!(matches!(l2_inner(&a, &b), Err(FluxError::Dimension(_))));
    }

    #[test]
    fn invalid_grids_and_domains() {
        assert!(Grid::new(Domain::unit_square(), 4, 16).is_err());
        assert!(Domain::new(1.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip_is_bit_identical() {
        let g = Grid::new(Domain::unit_square(), 9, 12).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() * (y * 1.7).exp() / 3.0);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.grid, f.grid);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
