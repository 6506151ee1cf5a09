//! Sampled estimators for the BMO seminorm, the Hardy-space maximal
//! integral and L^p norms of gridded fields.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FluxError, Result};
use crate::field::ScalarField;
use crate::gallery::SourceProfile;
use crate::neumann::Normalization;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BmoOptions {
    /// Smallest square side, in cells.
    pub min_cells: usize,
    /// Squares of side s start at multiples of max(1, s / shift_denominator).
    pub shift_denominator: usize,
}

impl Default for BmoOptions {
    fn default() -> Self {
        Self { min_cells: 2, shift_denominator: 4 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BmoEstimate {
    pub value: f64,
    /// Side lengths (in x-cells) that were sampled.
    pub sizes: Vec<usize>,
    pub squares: usize,
    /// Lower-left cell and side (in x-cells) of the maximising square.
    pub argmax: (usize, usize, usize),
}

/// max over a dyadic family of squares Q of ⨍_Q |g − ⨍_Q g|.
pub fn bmo_norm(g: &ScalarField) -> f64 {
    bmo_norm_with(g, &BmoOptions::default()).value
}

fn offsets(n: usize, side: usize, step: usize) -> Vec<usize> {
    let mut v: Vec<usize> = (0..=n - side).step_by(step).collect();
    if *v.last().unwrap() != n - side {
        v.push(n - side);
    }
    v
}

pub fn bmo_norm_with(g: &ScalarField, opts: &BmoOptions) -> BmoEstimate {
    let grid = g.grid;
    let (nx, ny) = (grid.nx, grid.ny);
    let aspect = grid.hx() / grid.hy();
    let mut sizes = Vec::new();
    let mut s = opts.min_cells.max(1);
    while s <= nx && ((s as f64 * aspect).round() as usize).max(1) <= ny {
        sizes.push(s);
        s *= 2;
    }
    let denom = opts.shift_denominator.max(1);
    let per_size: Vec<(f64, usize, (usize, usize, usize))> = sizes
        .par_iter()
        .map(|&sx| {
            let sy = ((sx as f64 * aspect).round() as usize).max(1);
            let xs = offsets(nx, sx, (sx / denom).max(1));
            let ys = offsets(ny, sy, (sy / denom).max(1));
            let count = (sx * sy) as f64;
            let mut best = (0.0_f64, 0usize, (0, 0, sx));
            for &j0 in &ys {
                for &i0 in &xs {
                    // Shift by a sample of the square so constant data gives exactly zero.
                    let v0 = g.values[j0 * nx + i0];
                    let rows = (j0..j0 + sy).map(|j| &g.values[j * nx + i0..j * nx + i0 + sx]);
                    let m = rows.clone().flatten().map(|v| v - v0).sum::<f64>() / count;
                    let dev: f64 = rows.flatten().map(|v| (v - v0 - m).abs()).sum();
                    let osc = dev / count;
                    if osc > best.0 {
                        best.0 = osc;
                        best.2 = (i0, j0, sx);
                    }
                    best.1 += 1;
                }
            }
            best
        })
        .collect();
    let mut out = BmoEstimate { value: 0.0, sizes: sizes.clone(), squares: 0, argmax: (0, 0, 0) };
    for (v, n, arg) in per_size {
        out.squares += n;
        if v > out.value {
            out.value = v;
            out.argmax = arg;
        }
    }
    out
}

/// Mollifier, dilation ladder and refinement settings for the maximal
/// function M_ρ g = sup_δ |ρ_δ * g|.
#[derive(Debug, Clone, Serialize)]
pub struct MaximalPlan {
    pub mollifier: SourceProfile,
    /// Smallest dilation, in units of the grid spacing (≥ 1).
    pub delta_min_cells: f64,
    /// Dilations per octave.
    pub per_octave: usize,
    /// The ladder stops at the first octave δ ≥ diam(Ω) · reach.
    pub reach: f64,
}

impl Default for MaximalPlan {
    fn default() -> Self {
        Self { mollifier: SourceProfile::SmoothBump, delta_min_cells: 1.0, per_octave: 1, reach: 1.0 }
    }
}

impl MaximalPlan {
    /// Dilations in units of max(hx, hy).
    pub fn ladder(&self, h: f64, diameter: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let m = self.per_octave.max(1);
        let start = self.delta_min_cells.max(1.0);
        for k in 0.. {
            let d = start * 2f64.powf(k as f64 / m as f64);
            out.push(d);
            // Stop on an octave boundary so refined ladders contain coarser ones.
            if k % m == 0 && d * h >= diameter * self.reach {
                break;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximalEstimate {
    pub value: f64,
    /// Dilations used (physical units).
    pub deltas: Vec<f64>,
    /// Pyramid level used for each dilation.
    pub levels: Vec<usize>,
    /// Largest deviation from 1 of the un-normalised kernel quadrature.
    pub kernel_mass_error: f64,
}

/// Margin, in cells of each level, of the evaluation box beyond the data.
const MARGIN: usize = 8;

struct Level {
    n: (usize, usize),
    h: (f64, f64),
    /// Block averages of g over the data extent.
    avg: Vec<f64>,
}

/// ∫ max_δ |ρ_δ * g| over the evaluation box, with g extended by zero.
///
/// Dilation δ is evaluated on the coarsest block-averaged level whose cells
/// are still at most δ/4 wide, so every kernel has between 4 and 8 cells
/// per radius (fewer only at the finest level). Each kernel is normalised
/// to unit discrete mass, which makes δ = h the identity.
pub fn hardy_maximal_integral(g: &ScalarField, plan: &MaximalPlan) -> f64 {
    hardy_maximal_integral_with(g, plan).value
}

pub fn hardy_maximal_integral_with(g: &ScalarField, plan: &MaximalPlan) -> MaximalEstimate {
    let grid = g.grid;
    let h = grid.hx().max(grid.hy());
    let deltas = plan.ladder(h, grid.domain.diameter());
    let level_of = |d: f64| -> usize {
        if d < 4.0 {
            0
        } else {
            (d / 4.0).log2().floor().max(0.0) as usize
        }
    };
    let levels_for: Vec<usize> = deltas.iter().map(|&d| level_of(d)).collect();
    let top = *levels_for.iter().max().unwrap_or(&0);
    let block = 1usize << top;
    // Zero-extend the data to a multiple of the coarsest block.
    let px = grid.nx.div_ceil(block) * block;
    let py = grid.ny.div_ceil(block) * block;
    let mut base = vec![0.0; px * py];
    for j in 0..grid.ny {
        base[j * px..j * px + grid.nx].copy_from_slice(&g.values[j * grid.nx..(j + 1) * grid.nx]);
    }
    let mut pyramid = vec![Level { n: (px, py), h: (grid.hx(), grid.hy()), avg: base }];
    for _ in 0..top {
        let prev = pyramid.last().unwrap();
        let (nx, ny) = (prev.n.0 / 2, prev.n.1 / 2);
        let mut avg = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let a = &prev.avg;
                let w = prev.n.0;
                avg[j * nx + i] = 0.25
                    * (a[2 * j * w + 2 * i] + a[2 * j * w + 2 * i + 1] + a[(2 * j + 1) * w + 2 * i] + a[(2 * j + 1) * w + 2 * i + 1]);
            }
        }
        pyramid.push(Level { n: (nx, ny), h: (prev.h.0 * 2.0, prev.h.1 * 2.0), avg });
    }

    let mut mass_err = 0.0_f64;
    // V_ℓ: max over the dilations assigned to level ℓ, on the level's box.
    let per_level: Vec<Vec<f64>> = (0..=top)
        .into_par_iter()
        .map(|lv| {
            let level = &pyramid[lv];
            let (bx, by) = (level.n.0 + 2 * MARGIN, level.n.1 + 2 * MARGIN);
            let mut v = vec![0.0; bx * by];
            for (k, &d) in deltas.iter().enumerate() {
                if levels_for[k] != lv {
                    continue;
                }
                let (kernel, _) = kernel_taps(plan.mollifier, d * h, level.h);
                convolve_max(level, &kernel, &mut v);
            }
            v
        })
        .collect();
    for (k, &d) in deltas.iter().enumerate() {
        let (_, err) = kernel_taps(plan.mollifier, d * h, pyramid[levels_for[k]].h);
        mass_err = mass_err.max(err);
    }

    // Combine coarse to fine, integrating each level outside the next finer box.
    let mut total = 0.0;
    let mut upper: Option<Vec<f64>> = None;
    for lv in (0..=top).rev() {
        let level = &pyramid[lv];
        let (bx, by) = (level.n.0 + 2 * MARGIN, level.n.1 + 2 * MARGIN);
        let mut cur = per_level[lv].clone();
        if let Some(coarse) = upper.take() {
            let cb = pyramid[lv + 1].n.0 + 2 * MARGIN;
            // Level ℓ's box starts MARGIN/2 coarse cells inside level ℓ+1's box.
            let off = MARGIN / 2;
            for j in 0..by {
                for i in 0..bx {
                    let c = coarse[(off + j / 2) * cb + off + i / 2];
                    let x = &mut cur[j * bx + i];
                    *x = x.max(c);
                }
            }
            // Coarse cells not covered by this level's box.
            let area = pyramid[lv + 1].h.0 * pyramid[lv + 1].h.1;
            let cby = pyramid[lv + 1].n.1 + 2 * MARGIN;
            for j in 0..cby {
                for i in 0..cb {
                    let inside = i >= off && i < off + bx / 2 && j >= off && j < off + by / 2;
                    if !inside {
                        total += coarse[j * cb + i] * area;
                    }
                }
            }
        }
        upper = Some(cur);
    }
    if let Some(fine) = upper {
        let area = pyramid[0].h.0 * pyramid[0].h.1;
        total += fine.iter().sum::<f64>() * area;
    }
    MaximalEstimate {
        value: total,
        deltas: deltas.iter().map(|d| d * h).collect(),
        levels: levels_for,
        kernel_mass_error: mass_err,
    }
}

/// Discrete kernel taps (dx, dy, weight) of ρ_δ on cells of size `hh`,
/// normalised to unit sum, and the relative error of the raw quadrature.
fn kernel_taps(profile: SourceProfile, delta: f64, hh: (f64, f64)) -> (Vec<(isize, isize, f64)>, f64) {
    let rx = (delta / hh.0).ceil() as isize;
    let ry = (delta / hh.1).ceil() as isize;
    let mut taps = Vec::new();
    let mut sum = 0.0;
    for b in -ry..=ry {
        for a in -rx..=rx {
            let s = ((a as f64 * hh.0).powi(2) + (b as f64 * hh.1).powi(2)) / (delta * delta);
            let w = profile.value(s);
            if w > 0.0 {
                taps.push((a, b, w));
                sum += w;
            }
        }
    }
    let raw = sum * hh.0 * hh.1 / (delta * delta * profile.unit_mass());
    taps.iter_mut().for_each(|t| t.2 /= sum);
    (taps, (raw - 1.0).abs())
}

/// v ← max(v, |Σ w g(· + tap)|) over the level's box; windows that see no
/// data are skipped.
fn convolve_max(level: &Level, taps: &[(isize, isize, f64)], v: &mut [f64]) {
    let (nx, ny) = (level.n.0 as isize, level.n.1 as isize);
    let bx = level.n.0 + 2 * MARGIN;
    let by = level.n.1 + 2 * MARGIN;
    let m = MARGIN as isize;
    let reach = taps.iter().map(|t| t.0.abs().max(t.1.abs())).max().unwrap_or(0);
    for j in 0..by as isize {
        let y = j - m;
        if y + reach < 0 || y - reach >= ny {
            continue;
        }
        for i in 0..bx as isize {
            let x = i - m;
            if x + reach < 0 || x - reach >= nx {
                continue;
            }
            let mut acc = 0.0;
            for &(a, b, w) in taps {
                let (xi, yj) = (x + a, y + b);
                if xi >= 0 && xi < nx && yj >= 0 && yj < ny {
                    acc += w * level.avg[(yj * nx + xi) as usize];
                }
            }
            let slot = &mut v[j as usize * bx + i as usize];
            *slot = slot.max(acc.abs());
        }
    }
}

/// L^p norm by nodal quadrature; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(g: &ScalarField, p: f64) -> Result<f64> {
    lp_norm_with(g, p, Normalization::Integrated)
}

pub fn lp_norm_with(g: &ScalarField, p: f64, norm: Normalization) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(FluxError::Parameter(format!("p must be >= 1, got {p}")));
    }
    if p.is_infinite() {
        return Ok(g.max_abs());
    }
    let mean = g.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() / g.values.len() as f64;
    Ok((mean * norm.factor(&g.grid)).powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Domain, Grid};
    use crate::gallery::{log_test_function, sinusoidal_source, ConcentratedSource};
    use proptest::prelude::*;

    #[test]
    fn bmo_examples() {
        let g = Grid::square(Domain::two_pi_square(), 64).unwrap();
        assert_eq!(bmo_norm(&ScalarField::constant(g, 3.5)), 0.0);
        let f = sinusoidal_source(1.0, &g).unwrap();
        let b = bmo_norm(&f);
        assert!(b > 0.1 && b <= 2.0);
        let shifted = f.map(|v| v + 7.0);
        assert!((bmo_norm(&shifted) - b).abs() < 1e-12);
        assert!((bmo_norm(&f.scaled(-3.0)) - 3.0 * b).abs() < 1e-12);
    }

    #[test]
    fn bmo_refinement_is_monotone() {
        let g = Grid::square(Domain::unit_square(), 128).unwrap();
        let xi = log_test_function(1.0 / 32.0, &g).unwrap();
        let coarse = bmo_norm_with(&xi, &BmoOptions::default());
        let fine = bmo_norm_with(&xi, &BmoOptions { shift_denominator: 8, ..Default::default() });
        assert!(fine.value >= coarse.value);
        assert!(fine.squares > coarse.squares);
    }

    #[test]
    fn lp_examples() {
        let g = Grid::square(Domain::two_pi_square(), 32).unwrap();
        let c = ScalarField::constant(g, -2.0);
        assert!((lp_norm(&c, 2.0).unwrap() - 2.0 * 2.0 * std::f64::consts::PI).abs() < 1e-12);
        assert!((lp_norm_with(&c, 2.0, Normalization::Averaged).unwrap() - 2.0).abs() < 1e-12);
        let f = sinusoidal_source(1.0, &Grid::square(Domain::two_pi_square(), 64).unwrap()).unwrap();
        assert!(lp_norm(&f, f64::INFINITY).unwrap() <= 1.0);
        assert!(lp_norm(&f, 0.5).is_err());
    }

    #[test]
    fn maximal_integral_basics() {
        let g = Grid::square(Domain::unit_square(), 64).unwrap();
        let plan = MaximalPlan::default();
        assert_eq!(hardy_maximal_integral(&ScalarField::zeros(g), &plan), 0.0);
        let eps: f64 = 1.0 / 32.0;
        let s = ConcentratedSource::new(eps, SourceProfile::SmoothBump).unwrap();
        let fp = s.plus_field(&g).unwrap();
        let est = hardy_maximal_integral_with(&fp, &plan);
        let l1 = lp_norm(&fp, 1.0).unwrap();
        assert!(est.value >= l1 * (1.0 - 1e-12));
        // A finer ladder never lowers the estimate.
        let finer = hardy_maximal_integral(&fp, &MaximalPlan { per_octave: 2, ..Default::default() });
        assert!(finer >= est.value * (1.0 - 1e-12));
        // The identity kernel at δ = h.
        let (taps, _) = kernel_taps(SourceProfile::SmoothBump, g.hx(), (g.hx(), g.hy()));
        assert_eq!(taps.len(), 1);
    }

    #[test]
    fn maximal_integral_grows_with_the_box_for_nonzero_mean() {
        let g = Grid::square(Domain::unit_square(), 32).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let small = hardy_maximal_integral(&one, &MaximalPlan { reach: 0.5, ..Default::default() });
        let large = hardy_maximal_integral(&one, &MaximalPlan { reach: 4.0, ..Default::default() });
        assert!(large > small && small >= 4.0 * (1.0 - 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn bmo_is_shift_invariant_and_homogeneous(
            a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1usize..4, lam in -5.0f64..5.0, c in -10.0f64..10.0
        ) {
            let g = Grid::square(Domain::unit_square(), 32).unwrap();
            let f = ScalarField::from_fn(g, |x, y| a * (k as f64 * x).sin() + b * (y * y));
            let base = bmo_norm(&f);
            prop_assert!((bmo_norm(&f.map(|v| v + c)) - base).abs() <= 1e-9 * (1.0 + base));
            prop_assert!((bmo_norm(&f.scaled(lam)) - lam.abs() * base).abs() <= 1e-9 * (1.0 + base));
        }

        #[test]
        fn bmo_of_minimum_is_controlled(
            a in -3.0f64..3.0, b in -3.0f64..3.0, k in 1usize..5
        ) {
            let g = Grid::square(Domain::unit_square(), 32).unwrap();
            let f = ScalarField::from_fn(g, |x, y| a * (k as f64 * x).cos() + y);
            let h = ScalarField::from_fn(g, |x, y| b * (x * y).sin() - x);
            let m = ScalarField::from_values(g, f.values.iter().zip(&h.values).map(|(p, q)| p.min(*q)).collect()).unwrap();
            prop_assert!(bmo_norm(&m) <= 10.0 * (bmo_norm(&f) + bmo_norm(&h)) + 1e-12);
        }
    }
}
