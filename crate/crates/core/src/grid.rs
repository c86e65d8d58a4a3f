//! Uniform 2D lattice, complex fields over it, and the quadratures every
//! other module builds on.
//!
//! Storage is row-major with `x` fastest: the value at `(i, j)` lives at
//! `j * nx + i`. All reductions are accumulated per row and the row partials
//! are then summed in row order, so results do not depend on how many rayon
//! workers happen to run the rows.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as an empty state.
pub const DEGENERATE_NORM: f64 = 1e-14;

/// Uniform rectangular grid. Coordinates are dimensionless (hbar = m = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub x0: f64,
    pub y0: f64,
}

impl Grid {
    pub const MIN_POINTS: usize = 8;

    pub fn new(nx: usize, ny: usize, dx: f64, dy: f64, x0: f64, y0: f64) -> Result<Self> {
        if nx < Self::MIN_POINTS || ny < Self::MIN_POINTS {
            return Err(Error::invalid(format!(
                "grid needs at least {} points per axis, got {nx}x{ny}",
                Self::MIN_POINTS
            )));
        }
        if !(dx > 0.0 && dy > 0.0 && dx.is_finite() && dy.is_finite()) {
            return Err(Error::invalid(format!(
                "grid spacings must be positive and finite, got dx={dx}, dy={dy}"
            )));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(Self {
            nx,
            ny,
            dx,
            dy,
            x0,
            y0,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        self.y0 + j as f64 * self.dy
    }

    #[inline]
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.x(i), self.y(j))
    }

    /// Total extent along x, `nx * dx`.
    pub fn lx(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    /// Total extent along y, `ny * dy`.
    pub fn ly(&self) -> f64 {
        self.ny as f64 * self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    pub fn min_spacing(&self) -> f64 {
        self.dx.min(self.dy)
    }

    /// Coordinate of the last sample along x.
    pub fn x_last(&self) -> f64 {
        self.x(self.nx - 1)
    }

    pub fn y_last(&self) -> f64 {
        self.y(self.ny - 1)
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::invalid("fields live on different grids"))
        }
    }
}

/// Axis-aligned open rectangle used to post-select parts of a field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Region {
    pub const EVERYWHERE: Region = Region {
        x_min: f64::NEG_INFINITY,
        x_max: f64::INFINITY,
        y_min: f64::NEG_INFINITY,
        y_max: f64::INFINITY,
    };

    pub fn x_band(x_min: f64, x_max: f64) -> Self {
        Region {
            x_min,
            x_max,
            ..Self::EVERYWHERE
        }
    }

    #[inline]
    pub fn contains_x(&self, x: f64) -> bool {
        x > self.x_min && x < self.x_max
    }

    #[inline]
    pub fn contains_y(&self, y: f64) -> bool {
        y > self.y_min && y < self.y_max
    }

    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.contains_x(x) && self.contains_y(y)
    }

    /// Column indices whose x coordinate lies inside the region.
    pub fn columns(&self, grid: &Grid) -> std::ops::Range<usize> {
        let inside = |i: usize| self.contains_x(grid.x(i));
        match (0..grid.nx).position(inside) {
            None => 0..0,
            Some(lo) => lo..(lo + (lo..grid.nx).take_while(|&i| inside(i)).count()),
        }
    }
}

/// Complex amplitude per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    data: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "field has {} amplitudes, grid needs {}",
                data.len(),
                grid.len()
            )));
        }
        if let Some(k) = data.iter().position(|z| !z.is_finite()) {
            return Err(Error::invalid(format!("non-finite amplitude at index {k}")));
        }
        Ok(Self { grid, data })
    }

    /// Samples `f(x, y)` on every grid point.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> Complex64 + Sync) -> Result<Self> {
        let mut data = vec![Complex64::new(0.0, 0.0); grid.len()];
        data.par_chunks_mut(grid.nx).enumerate().for_each(|(j, row)| {
            let y = grid.y(j);
            for (i, z) in row.iter_mut().enumerate() {
                *z = f(grid.x(i), y);
            }
        });
        Self::from_vec(grid, data)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub(crate) fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[self.grid.idx(i, j)]
    }

    pub fn row(&self, j: usize) -> &[Complex64] {
        let nx = self.grid.nx;
        &self.data[j * nx..(j + 1) * nx]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|z| z.is_finite())
    }

    /// Multiplies every amplitude by `factor`.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            grid: self.grid,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    /// `alpha * self + other`.
    pub fn axpy(&self, alpha: Complex64, other: &ComplexField) -> Result<Self> {
        self.grid.ensure_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| alpha * a + b)
                .collect(),
        })
    }

    /// Copy of the field with everything outside `region` set to zero.
    pub fn restricted(&self, region: &Region) -> Self {
        let g = self.grid;
        let mut out = self.clone();
        out.data.par_chunks_mut(g.nx).enumerate().for_each(|(j, row)| {
            let y_in = region.contains_y(g.y(j));
            for (i, z) in row.iter_mut().enumerate() {
                if !(y_in && region.contains_x(g.x(i))) {
                    *z = Complex64::new(0.0, 0.0);
                }
            }
        });
        out
    }

    /// Rescales to unit norm; fails on an empty field.
    pub fn normalized(&self) -> Result<Self> {
        let n2 = norm_squared(self);
        if n2 < DEGENERATE_NORM {
            return Err(Error::DegenerateState(format!(
                "cannot normalize a field with norm^2 = {n2:e}"
            )));
        }
        Ok(self.scaled(Complex64::new(1.0 / n2.sqrt(), 0.0)))
    }
}

/// Sums `f(j, row)` over rows; the row partials are combined in row order.
pub(crate) fn sum_rows<T, F>(grid: &Grid, data: &[T], f: F) -> f64
where
    T: Sync,
    F: Fn(usize, &[T]) -> f64 + Sync,
{
    let partials: Vec<f64> = data
        .par_chunks(grid.nx)
        .enumerate()
        .map(|(j, row)| f(j, row))
        .collect();
    partials.iter().sum()
}

/// Complex analogue of [`sum_rows`].
pub(crate) fn sum_rows_complex<T, F>(grid: &Grid, data: &[T], f: F) -> Complex64
where
    T: Sync,
    F: Fn(usize, &[T]) -> Complex64 + Sync,
{
    let partials: Vec<Complex64> = data
        .par_chunks(grid.nx)
        .enumerate()
        .map(|(j, row)| f(j, row))
        .collect();
    partials.iter().sum()
}

/// Midpoint-rule inner product `sum conj(f) g dx dy`.
pub fn inner_product(f: &ComplexField, g: &ComplexField) -> Result<Complex64> {
    f.grid.ensure_same(&g.grid)?;
    let nx = f.grid.nx;
    let gd = &g.data;
    let s = sum_rows_complex(&f.grid, &f.data, |j, row| {
        row.iter()
            .zip(&gd[j * nx..(j + 1) * nx])
            .map(|(a, b)| a.conj() * b)
            .sum()
    });
    Ok(s * f.grid.cell_area())
}

pub fn norm_squared(f: &ComplexField) -> f64 {
    sum_rows(&f.grid, &f.data, |_, row| row.iter().map(|z| z.norm_sqr()).sum()) * f.grid.cell_area()
}

/// Centered x-derivative of row `row` at column `i`; second-order one-sided
/// stencils on the two outer columns.
#[inline]
fn d_dx(row: &[Complex64], i: usize, dx: f64) -> Complex64 {
    let n = row.len();
    if i == 0 {
        (-3.0 * row[0] + 4.0 * row[1] - row[2]) / (2.0 * dx)
    } else if i == n - 1 {
        (3.0 * row[n - 1] - 4.0 * row[n - 2] + row[n - 3]) / (2.0 * dx)
    } else {
        (row[i + 1] - row[i - 1]) / (2.0 * dx)
    }
}

/// Weight, position and beam-momentum moments of `|psi|^2` inside a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    /// Integral of `|psi|^2` over the region.
    pub weight: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub mean_x2: f64,
}

/// Moments of the field restricted to `region`, normalized by the weight
/// inside it. Derivatives use neighbours regardless of the region so that
/// restriction never introduces an artificial edge.
pub fn moments_in(f: &ComplexField, region: &Region) -> Result<Moments> {
    let g = f.grid;
    let cols = region.columns(&g);
    let inv2dx = 1.0 / (2.0 * g.dx);
    let partials: Vec<[f64; 4]> = f
        .data
        .par_chunks(g.nx)
        .enumerate()
        .map(|(j, row)| {
            let mut acc = [0.0; 4];
            if !region.contains_y(g.y(j)) {
                return acc;
            }
            let mut current = 0.0;
            for i in cols.clone() {
                let z = row[i];
                let x = g.x(i);
                let w = z.norm_sqr();
                acc[0] += w;
                acc[1] += x * w;
                acc[3] += x * x * w;
                if i == 0 || i == g.nx - 1 {
                    acc[2] += (z.conj() * d_dx(row, i, g.dx)).im;
                } else {
                    let d = row[i + 1] - row[i - 1];
                    current += z.re * d.im - z.im * d.re;
                }
            }
            acc[2] += current * inv2dx;
            acc
        })
        .collect();
    let mut tot = [0.0; 4];
    for p in &partials {
        for k in 0..4 {
            tot[k] += p[k];
        }
    }
    let area = g.cell_area();
    let weight = tot[0] * area;
    if weight < DEGENERATE_NORM {
        return Err(Error::DegenerateState(format!(
            "field weight {weight:e} too small for expectation values"
        )));
    }
    Ok(Moments {
        weight,
        mean_x: tot[1] / tot[0],
        mean_p: tot[2] / tot[0],
        mean_x2: tot[3] / tot[0],
    })
}

/// `<x> = int x |psi|^2 / int |psi|^2`.
pub fn expectation_x(f: &ComplexField) -> Result<f64> {
    moments_in(f, &Region::EVERYWHERE).map(|m| m.mean_x)
}

/// `<p_x> = Im int conj(psi) d_x psi / int |psi|^2` with hbar = 1.
pub fn expectation_p_beam(f: &ComplexField) -> Result<f64> {
    moments_in(f, &Region::EVERYWHERE).map(|m| m.mean_p)
}

/// Position variance along the beam axis.
pub fn variance_x(f: &ComplexField) -> Result<f64> {
    let m = moments_in(f, &Region::EVERYWHERE)?;
    Ok(m.mean_x2 - m.mean_x * m.mean_x)
}

/// Gaussian wave-packet parameters. `k0` is the mean beam momentum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketSpec {
    pub xc: f64,
    pub yc: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub k0: f64,
}

impl PacketSpec {
    /// Free-space kinetic energy of the carrier, `k0^2 / 2`.
    pub fn energy(&self) -> f64 {
        0.5 * self.k0 * self.k0
    }

    pub fn validate_on(&self, grid: &Grid) -> Result<()> {
        if !(self.sigma_x > 0.0 && self.sigma_y > 0.0) {
            return Err(Error::invalid(format!(
                "packet widths must be positive, got sigma_x={}, sigma_y={}",
                self.sigma_x, self.sigma_y
            )));
        }
        if self.sigma_x < 3.0 * grid.dx || self.sigma_y < 3.0 * grid.dy {
            return Err(Error::invalid(format!(
                "packet under-resolved: need sigma >= 3 spacings (sigma_x={} vs 3dx={}, sigma_y={} vs 3dy={})",
                self.sigma_x,
                3.0 * grid.dx,
                self.sigma_y,
                3.0 * grid.dy
            )));
        }
        let margins = [
            ("left", self.xc - grid.x0, self.sigma_x),
            ("right", grid.x_last() - self.xc, self.sigma_x),
            ("bottom", self.yc - grid.y0, self.sigma_y),
            ("top", grid.y_last() - self.yc, self.sigma_y),
        ];
        for (edge, dist, sigma) in margins {
            if dist < 4.0 * sigma {
                return Err(Error::invalid(format!(
                    "packet too close to the {edge} edge: distance {dist} < 4 sigma = {}",
                    4.0 * sigma
                )));
            }
        }
        Ok(())
    }
}

/// Normalized Gaussian packet
/// `exp(-(x-xc)^2/4sx^2 - (y-yc)^2/4sy^2) exp(i k0 x)`.
pub fn init_gaussian(grid: &Grid, spec: &PacketSpec) -> Result<ComplexField> {
    spec.validate_on(grid)?;
    let s = *spec;
    let raw = ComplexField::from_fn(*grid, move |x, y| {
        let ex = (x - s.xc) / (2.0 * s.sigma_x);
        let ey = (y - s.yc) / (2.0 * s.sigma_y);
        let env = (-(ex * ex) - ey * ey).exp();
        Complex64::from_polar(env, s.k0 * x)
    })?;
    raw.normalized()
}
