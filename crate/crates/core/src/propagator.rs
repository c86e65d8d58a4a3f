//! Crank-Nicolson time stepping for `i dpsi/dt = [-(1/2) lap + V] psi`,
//! split into 1D implicit sweeps. With `C_a(tau) = (1 + i tau/2 Ha)^-1 (1 - i tau/2 Ha)`
//! one step is the palindrome
//!
//! ```text
//! psi' = C_x(dt/2) C_y(dt) C_x(dt/2) psi
//! ```
//!
//! with `Hx = -(1/2) d_xx + V/2` and `Hy = -(1/2) d_yy + V/2`. Every factor
//! is a Cayley map, so the step is exactly unitary without an absorbing
//! layer and `dt -> -dt` inverts it. Wall sites are pinned rows in every
//! implicit solve, so psi is exactly zero there. The outer box is a
//! Dirichlet boundary.
//!
//! The state stays row-major and every sweep works in place. x sweeps take
//! a block of rows at a time. y sweeps walk down the rows over a strip of
//! columns, applying the explicit operator and the forward elimination for
//! the whole strip at once, then sweep back up. Every output element gets
//! the same arithmetic whatever the rayon partitioning, so results are
//! bit-identical across worker counts.

use std::collections::HashMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{smoothstep, RealField, WallMask};
use crate::grid::{ComplexField, Grid};
use crate::tridiag::{solve_lines, TridiagFactors};

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// Rows per task in an x sweep.
const ROW_BLOCK: usize = 8;
/// Columns per task in the y sweep.
const COL_STRIP: usize = 64;

/// Imaginary-potential sponge on the two outer x edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbsorbingLayer {
    pub width: f64,
    pub strength: f64,
}

impl AbsorbingLayer {
    /// Absorption rate `W(x) >= 0`; the layer adds `-i W` to the potential.
    pub fn rate(&self, grid: &Grid, x: f64) -> f64 {
        let left = grid.x0 + self.width;
        let right = grid.x_last() - self.width;
        let depth = if x < left {
            (left - x) / self.width
        } else if x > right {
            (x - right) / self.width
        } else {
            return 0.0;
        };
        let s = smoothstep(depth);
        self.strength * s * s
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.width > 0.0 && self.strength > 0.0) {
            return Err(Error::invalid("absorbing layer width and strength must be positive"));
        }
        if 2.0 * self.width >= grid.x_last() - grid.x0 {
            return Err(Error::invalid("absorbing layers overlap"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    pub dt: f64,
    pub cap: Option<AbsorbingLayer>,
}

impl StepperConfig {
    /// `dt = 0.25 min(dx, dy)^2`, no absorbing layer.
    pub fn default_for(grid: &Grid) -> Self {
        Self {
            dt: default_dt(grid),
            cap: None,
        }
    }
}

pub fn default_dt(grid: &Grid) -> f64 {
    0.25 * grid.min_spacing().powi(2)
}

/// What the packet moves through: an optional real potential and an
/// optional set of Dirichlet wall sites.
#[derive(Debug, Clone, Default)]
pub struct Medium {
    pub potential: Option<RealField>,
    pub mask: Option<WallMask>,
}

impl Medium {
    pub fn free() -> Self {
        Self::default()
    }
}

/// Pre-factored ADI operators for one grid, medium and time step.
#[derive(Debug, Clone)]
pub struct Propagator {
    grid: Grid,
    dt: f64,
    pinned: Vec<bool>,
    /// `i (tau/2) V / 2` per site (row-major) for the x sweeps (`tau = dt/2`)
    /// and the y sweep (`tau = dt`); `None` when identically zero.
    vzx: Option<Vec<Complex64>>,
    vzy: Option<Vec<Complex64>>,
    row_class: Vec<usize>,
    rows: Vec<TridiagFactors>,
    /// Maximal runs `(start, end, class)` of equal column class.
    col_runs: Vec<(usize, usize, usize)>,
    cols: Vec<TridiagFactors>,
    warnings: Vec<String>,
}

impl Propagator {
    /// Builds the operators. A negative `dt` runs time backwards, which the
    /// reversibility checks rely on; configs always carry `dt > 0`.
    pub fn new(grid: &Grid, medium: &Medium, cfg: &StepperConfig) -> Result<Self> {
        let dt = cfg.dt;
        if !(dt != 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be non-zero and finite, got {dt}")));
        }
        if let Some(v) = &medium.potential {
            if v.grid() != grid {
                return Err(Error::invalid("potential lives on a different grid"));
            }
            if v.as_slice().iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("potential has non-finite values"));
            }
        }
        if let Some(m) = &medium.mask {
            if m.grid() != grid {
                return Err(Error::invalid("wall mask lives on a different grid"));
            }
        }
        if let Some(cap) = &cfg.cap {
            cap.validate(grid)?;
        }

        // Crank-Nicolson weights: tau/2 with tau = dt/2 along x, dt along y.
        let (hx, hy) = (0.25 * dt, 0.5 * dt);
        let n = grid.len();
        let pinned = match &medium.mask {
            Some(m) => m.as_slice().to_vec(),
            None => vec![false; n],
        };

        let mut warnings = Vec::new();
        let vmax = medium.potential.as_ref().map_or(0.0, |v| v.max());
        if dt.abs() * vmax >= 0.5 {
            warnings.push(format!(
                "dt * max(V) = {:.3} >= 0.5; phases inside the barrier are under-resolved",
                dt.abs() * vmax
            ));
        }

        let has_v = medium.potential.as_ref().is_some_and(|v| v.as_slice().iter().any(|&x| x != 0.0));
        let (vzx, vzy) = if has_v || cfg.cap.is_some() {
            let mut z = vec![ZERO; n];
            for j in 0..grid.ny {
                for i in 0..grid.nx {
                    let k = grid.idx(i, j);
                    let vr = medium.potential.as_ref().map_or(0.0, |v| v.as_slice()[k]);
                    let w = cfg.cap.map_or(0.0, |c| c.rate(grid, grid.x(i)));
                    z[k] = Complex64::new(vr, -w) * 0.5;
                }
            }
            let scaled = |h: f64| z.iter().map(|&v| I * h * v).collect::<Vec<_>>();
            (Some(scaled(hx)), Some(scaled(hy)))
        } else {
            (None, None)
        };

        let rows_of = |j: usize| (0..grid.nx).map(move |i| grid.idx(i, j)).collect::<Vec<_>>();
        let cols_of = |i: usize| (0..grid.ny).map(move |j| grid.idx(i, j)).collect::<Vec<_>>();
        let (row_class, rows) = line_systems(grid.ny, rows_of, &pinned, vzx.as_deref(), hx / (grid.dx * grid.dx));
        let (col_class, cols) = line_systems(grid.nx, cols_of, &pinned, vzy.as_deref(), hy / (grid.dy * grid.dy));

        let mut col_runs: Vec<(usize, usize, usize)> = Vec::new();
        for (i, &c) in col_class.iter().enumerate() {
            match col_runs.last_mut() {
                Some(run) if run.2 == c => run.1 = i + 1,
                _ => col_runs.push((i, i + 1, c)),
            }
        }

        Ok(Self {
            grid: *grid,
            dt,
            pinned,
            vzx,
            vzy,
            row_class,
            rows,
            col_runs,
            cols,
            warnings,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Accuracy warnings raised while building the operators.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Number of distinct (row, column) systems after deduplication.
    pub fn distinct_systems(&self) -> (usize, usize) {
        (self.rows.len(), self.cols.len())
    }

    pub fn is_pinned(&self, i: usize, j: usize) -> bool {
        self.pinned[self.grid.idx(i, j)]
    }

    /// Starts an evolution from `psi0`. Wall sites are zeroed on entry.
    pub fn evolve(&self, psi0: &ComplexField) -> Result<Evolution<'_>> {
        if psi0.grid() != &self.grid {
            return Err(Error::invalid("initial field lives on a different grid"));
        }
        let g = self.grid;
        let src = psi0.as_slice();
        let data = src
            .iter()
            .zip(&self.pinned)
            .map(|(&z, &p)| if p { ZERO } else { z })
            .collect();
        let state = ComplexField::from_vec(g, data)?;
        Ok(Evolution {
            prop: self,
            state,
            steps: 0,
        })
    }

    /// Single step convenience wrapper.
    pub fn step(&self, psi: &ComplexField) -> Result<ComplexField> {
        let mut ev = self.evolve(psi)?;
        ev.advance(1)?;
        Ok(ev.field())
    }

    /// `C_x(dt/2)` applied `times` times to every row, in place. Returns
    /// false on a non-finite value.
    fn sweep_x(&self, psi: &mut [Complex64], times: usize) -> bool {
        let g = self.grid;
        let nx = g.nx;
        let w = 0.25 * self.dt / (g.dx * g.dx);
        let (centre, beta) = (Complex64::new(1.0, 0.0) - I * w, I * (0.5 * w));
        psi.par_chunks_mut(ROW_BLOCK * nx)
            .enumerate()
            .map(|(b, block)| {
                let j0 = b * ROW_BLOCK;
                let mut line = vec![ZERO; nx];
                for _ in 0..times {
                    for (jj, dst) in block.chunks_mut(nx).enumerate() {
                        let j = j0 + jj;
                        line.copy_from_slice(dst);
                        let vz = self.vzx.as_ref().map(|z| &z[j * nx..(j + 1) * nx]);
                        explicit_strip(&line, 0, dst, centre, beta, vz);
                    }
                    solve_lines(block, nx, |q| &self.rows[self.row_class[j0 + q]]);
                }
                block.iter().all(|z| z.re.is_finite() && z.im.is_finite())
            })
            .reduce(|| true, |a, b| a && b)
    }

    /// `C_y(dt)` on every column, in place.
    fn sweep_y(&self, psi: &mut [Complex64]) {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let w = 0.5 * self.dt / (g.dy * g.dy);
        let (centre, beta) = (Complex64::new(1.0, 0.0) - I * w, I * (0.5 * w));
        let strips = nx.div_ceil(COL_STRIP);
        let mut pieces: Vec<Vec<&mut [Complex64]>> = (0..strips).map(|_| Vec::with_capacity(ny)).collect();
        for row in psi.chunks_mut(nx) {
            for (c, piece) in row.chunks_mut(COL_STRIP).enumerate() {
                pieces[c].push(piece);
            }
        }
        pieces.into_par_iter().enumerate().for_each(|(c, mut rows)| {
            let i0 = c * COL_STRIP;
            let width = rows[0].len();
            let i1 = i0 + width;
            let runs: Vec<(usize, usize, &TridiagFactors)> = self
                .col_runs
                .iter()
                .filter(|r| r.0 < i1 && r.1 > i0)
                .map(|r| (r.0.max(i0) - i0, r.1.min(i1) - i0, &self.cols[r.2]))
                .collect();
            // Untouched values of the row above and of the current row.
            let mut above = vec![ZERO; width];
            let mut here = vec![ZERO; width];
            for j in 0..ny {
                let (before, rest) = rows.split_at_mut(j);
                let (cur, after) = rest.split_first_mut().expect("row in range");
                here.copy_from_slice(cur);
                let below = after.first().map(|r| &**r);
                let vz = self.vzy.as_ref().map(|z| &z[j * nx + i0..j * nx + i1]);
                for k in 0..width {
                    let c = vz.map_or(centre, |z| centre - z[k]);
                    let next = below.map_or(ZERO, |r| r[k]);
                    cur[k] = c * here[k] + beta * (above[k] + next);
                }
                std::mem::swap(&mut above, &mut here);
                match before.last() {
                    None => {
                        for &(a, b, f) in &runs {
                            let inv = f.inv_pivot()[0];
                            for z in &mut cur[a..b] {
                                *z *= inv;
                            }
                        }
                    }
                    Some(prev) => {
                        for &(a, b, f) in &runs {
                            let (inv, m) = (f.inv_pivot()[j], f.mult()[j]);
                            for (z, &p) in cur[a..b].iter_mut().zip(&prev[a..b]) {
                                *z = *z * inv - m * p;
                            }
                        }
                    }
                }
            }
            for j in (0..ny.saturating_sub(1)).rev() {
                let (head, tail) = rows.split_at_mut(j + 1);
                let (cur, next) = (&mut *head[j], &*tail[0]);
                for &(a, b, f) in &runs {
                    let u = f.upper_scaled()[j];
                    for (z, &n) in cur[a..b].iter_mut().zip(&next[a..b]) {
                        *z = *z - u * n;
                    }
                }
            }
        });
    }
}

/// Deduplicated tridiagonal systems `1 + i h H` for `count` lines, where
/// `w = h / d^2`. Returns the class of each line and the distinct systems.
fn line_systems(
    count: usize,
    sites: impl Fn(usize) -> Vec<usize>,
    pinned: &[bool],
    vz: Option<&[Complex64]>,
    w: f64,
) -> (Vec<usize>, Vec<TridiagFactors>) {
    let zat = |k: usize| vz.map_or(ZERO, |z| z[k]);
    let off = -I * (0.5 * w);
    let diag = Complex64::new(1.0, 0.0) + I * w;
    let mut class = Vec::with_capacity(count);
    let mut systems = Vec::new();
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    for line in 0..count {
        let ks = sites(line);
        let key = line_key(&ks, pinned, &zat);
        let id = *seen.entry(key).or_insert_with(|| {
            let d: Vec<Complex64> = ks.iter().map(|&k| diag + zat(k)).collect();
            let o = vec![off; ks.len()];
            let pin: Vec<bool> = ks.iter().map(|&k| pinned[k]).collect();
            systems.push(TridiagFactors::new(&o, &d, &o, &pin));
            systems.len() - 1
        });
        class.push(id);
    }
    (class, systems)
}

/// `out[k] = (centre - vz[k]) line[i0 + k] + beta (line[i0 + k - 1] + line[i0 + k + 1])`
/// with zero beyond the ends of `line`.
fn explicit_strip(
    line: &[Complex64],
    i0: usize,
    out: &mut [Complex64],
    centre: Complex64,
    beta: Complex64,
    vz: Option<&[Complex64]>,
) {
    let w = out.len();
    let at = |i: isize| -> Complex64 {
        if i < 0 || i as usize >= line.len() {
            ZERO
        } else {
            line[i as usize]
        }
    };
    let c = |k: usize| vz.map_or(centre, |z| centre - z[k]);
    let edge = |k: usize| {
        let i = (i0 + k) as isize;
        c(k) * at(i) + beta * (at(i - 1) + at(i + 1))
    };
    out[0] = edge(0);
    if w > 1 {
        out[w - 1] = edge(w - 1);
    }
    if w > 2 {
        let mid = &line[i0..i0 + w];
        let left = &line[i0..i0 + w - 2];
        let right = &line[i0 + 2..i0 + w];
        let inner = &mut out[1..w - 1];
        match vz {
            None => {
                for (((d, &m), &l), &r) in inner.iter_mut().zip(&mid[1..]).zip(left).zip(right) {
                    *d = centre * m + beta * (l + r);
                }
            }
            Some(z) => {
                for ((((d, &m), &l), &r), &v) in inner.iter_mut().zip(&mid[1..]).zip(left).zip(right).zip(&z[1..]) {
                    *d = (centre - v) * m + beta * (l + r);
                }
            }
        }
    }
}

fn line_key(ks: &[usize], pinned: &[bool], zat: &impl Fn(usize) -> Complex64) -> Vec<u64> {
    let mut key = Vec::with_capacity(2 * ks.len());
    for &k in ks {
        if pinned[k] {
            key.push(u64::MAX);
            key.push(u64::MAX);
        } else {
            let z = zat(k);
            key.push(z.re.to_bits());
            key.push(z.im.to_bits());
        }
    }
    key
}

/// A field being advanced by a [`Propagator`].
pub struct Evolution<'p> {
    prop: &'p Propagator,
    state: ComplexField,
    steps: usize,
}

impl Evolution<'_> {
    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.prop.dt
    }

    pub fn advance(&mut self, n: usize) -> Result<()> {
        // The closing x sweep of one step and the opening one of the next
        // are fused into a single pass over the rows.
        let psi = self.state.as_mut_slice();
        if n > 0 {
            self.prop.sweep_x(psi, 1);
        }
        for k in 0..n {
            self.prop.sweep_y(psi);
            let finite = self.prop.sweep_x(psi, if k + 1 < n { 2 } else { 1 });
            self.steps += 1;
            if !finite {
                return Err(Error::NumericalBlowup {
                    step: self.steps,
                    detail: "non-finite amplitude after ADI step".into(),
                });
            }
        }
        Ok(())
    }

    /// The current field.
    pub fn current(&self) -> &ComplexField {
        &self.state
    }

    pub fn field(&self) -> ComplexField {
        self.state.clone()
    }
}

/// Receives the field at every sampling instant of [`propagate`].
pub trait Observer {
    fn observe(&mut self, step: usize, t: f64, psi: &ComplexField) -> Result<()>;
}

/// Advances `psi0` by `n_steps`, handing the field to every observer at
/// steps `0, stride, 2 stride, ...`. Nothing is sampled when `n_steps == 0`.
pub fn propagate(
    prop: &Propagator,
    psi0: &ComplexField,
    n_steps: usize,
    stride: usize,
    observers: &mut [&mut dyn Observer],
) -> Result<ComplexField> {
    if stride == 0 {
        return Err(Error::invalid("sampling stride must be positive"));
    }
    if n_steps == 0 {
        return Ok(psi0.clone());
    }
    let mut ev = prop.evolve(psi0)?;
    let mut notify = |ev: &Evolution<'_>| -> Result<()> {
        if observers.is_empty() {
            return Ok(());
        }
        for obs in observers.iter_mut() {
            obs.observe(ev.steps_taken(), ev.time(), ev.current())?;
        }
        Ok(())
    };
    notify(&ev)?;
    let mut done = 0;
    while done < n_steps {
        let chunk = stride.min(n_steps - done);
        ev.advance(chunk)?;
        done += chunk;
        if chunk == stride {
            notify(&ev)?;
        }
    }
    Ok(ev.field())
}

/// One axis of the free scheme: `n` points at spacing `d`, Dirichlet ends.
struct Cayley1d {
    factors: TridiagFactors,
    centre: Complex64,
    beta: Complex64,
}

impl Cayley1d {
    fn new(n: usize, d: f64, h: f64) -> Self {
        let off = vec![-I * h / (2.0 * d * d); n];
        let diag = vec![Complex64::new(1.0, 0.0) + I * h / (d * d); n];
        Self {
            factors: TridiagFactors::new(&off, &diag, &off, &vec![false; n]),
            centre: Complex64::new(1.0, 0.0) - I * h / (d * d),
            beta: I * h / (2.0 * d * d),
        }
    }

    fn explicit(&self, v: &mut [Complex64], tmp: &mut Vec<Complex64>) {
        tmp.clear();
        tmp.extend_from_slice(v);
        let n = v.len();
        for k in 0..n {
            let l = if k > 0 { tmp[k - 1] } else { ZERO };
            let r = if k + 1 < n { tmp[k + 1] } else { ZERO };
            v[k] = self.centre * tmp[k] + self.beta * (l + r);
        }
    }
}

/// Free evolution of a product state `fx(x) gy(y)` in the box, with no
/// potential, walls or absorbing layer. The ADI step then factorises into a
/// 1D map per axis, so the result matches [`propagate`] on the full grid up
/// to rounding at a fraction of the cost. The product is normalised.
pub fn propagate_free_separable(
    grid: &Grid,
    dt: f64,
    fx: &[Complex64],
    gy: &[Complex64],
    n_steps: usize,
) -> Result<ComplexField> {
    if fx.len() != grid.nx || gy.len() != grid.ny {
        return Err(Error::invalid("separable factors do not match the grid"));
    }
    if !(dt != 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("time step must be non-zero and finite, got {dt}")));
    }
    let (ax, ay) = (Cayley1d::new(grid.nx, grid.dx, 0.25 * dt), Cayley1d::new(grid.ny, grid.dy, 0.5 * dt));
    let (mut f, mut g) = (fx.to_vec(), gy.to_vec());
    let mut tmp = Vec::new();
    for _ in 0..n_steps {
        for _ in 0..2 {
            ax.explicit(&mut f, &mut tmp);
            ax.factors.solve(&mut f);
        }
        ay.explicit(&mut g, &mut tmp);
        ay.factors.solve(&mut g);
    }
    let mut data = Vec::with_capacity(grid.len());
    for &gj in &g {
        data.extend(f.iter().map(|&fi| fi * gj));
    }
    ComplexField::from_vec(*grid, data)?.normalized()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{wall_mask, ChannelGeometry};
    use crate::grid::{init_gaussian, inner_product, norm_squared, PacketSpec};

    #[test]
    fn separable_free_run_matches_full_grid() {
        let (g, _) = setup();
        let spec = PacketSpec {
            xc: -1.0,
            yc: 0.5,
            sigma_x: 1.5,
            sigma_y: 1.2,
            k0: 1.3,
        };
        let psi = init_gaussian(&g, &spec).unwrap();
        let fx: Vec<Complex64> = (0..g.nx)
            .map(|i| {
                let u = (g.x(i) - spec.xc) / (2.0 * spec.sigma_x);
                Complex64::from_polar((-u * u).exp(), spec.k0 * g.x(i))
            })
            .collect();
        let gy: Vec<Complex64> = (0..g.ny)
            .map(|j| {
                let u = (g.y(j) - spec.yc) / (2.0 * spec.sigma_y);
                Complex64::new((-u * u).exp(), 0.0)
            })
            .collect();
        let cfg = StepperConfig::default_for(&g);
        let prop = Propagator::new(&g, &Medium::free(), &cfg).unwrap();
        let full = propagate(&prop, &psi, 300, 300, &mut []).unwrap();
        let sep = propagate_free_separable(&g, cfg.dt, &fx, &gy, 300).unwrap();
        let worst = full
            .as_slice()
            .iter()
            .zip(sep.as_slice())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(worst < 1e-12, "{worst}");
    }

    fn setup() -> (Grid, ComplexField) {
        let g = Grid::new(96, 64, 0.25, 0.25, -12.0, -8.0).unwrap();
        let spec = PacketSpec {
            xc: -1.0,
            yc: 0.0,
            sigma_x: 1.5,
            sigma_y: 1.5,
            k0: 1.0,
        };
        (g, init_gaussian(&g, &spec).unwrap())
    }

    #[test]
    fn free_step_conserves_norm() {
        let (g, psi) = setup();
        let p = Propagator::new(&g, &Medium::free(), &StepperConfig::default_for(&g)).unwrap();
        let out = p.step(&psi).unwrap();
        assert!((norm_squared(&out) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn forward_then_backward_is_identity() {
        let (g, psi) = setup();
        let geo = ChannelGeometry {
            x_in: 5.0,
            ell: 3.0,
            a: 4.0,
            y_center: 0.0,
        };
        let medium = Medium {
            potential: None,
            mask: Some(wall_mask(&g, &geo).unwrap()),
        };
        // Start with psi already zero on the wall so it is a valid state.
        let psi = psi.restricted(&crate::grid::Region::x_band(f64::NEG_INFINITY, 4.9));
        let psi = psi.normalized().unwrap();
        let dt = default_dt(&g);
        let fwd = Propagator::new(&g, &medium, &StepperConfig { dt, cap: None }).unwrap();
        let bwd = Propagator::new(&g, &medium, &StepperConfig { dt: -dt, cap: None }).unwrap();
        let back = bwd.step(&fwd.step(&psi).unwrap()).unwrap();
        let fid = inner_product(&back, &psi).unwrap().norm();
        assert!(fid > 1.0 - 1e-12, "fidelity {fid}");
    }

    #[test]
    fn wall_sites_stay_zero() {
        let (g, psi) = setup();
        let geo = ChannelGeometry {
            x_in: -1.0,
            ell: 2.0,
            a: 2.0,
            y_center: 0.0,
        };
        let mask = wall_mask(&g, &geo).unwrap();
        let medium = Medium {
            potential: None,
            mask: Some(mask.clone()),
        };
        let p = Propagator::new(&g, &medium, &StepperConfig::default_for(&g)).unwrap();
        let mut ev = p.evolve(&psi).unwrap();
        for _ in 0..20 {
            ev.advance(1).unwrap();
            let f = ev.field();
            for (z, m) in f.as_slice().iter().zip(mask.as_slice()) {
                if *m {
                    assert_eq!(*z, ZERO);
                }
            }
        }
        // Two distinct rows and two distinct columns for a straight slot.
        assert_eq!(p.distinct_systems(), (2, 2));
    }

    #[test]
    fn absorbing_layer_only_removes_norm() {
        let g = Grid::new(160, 40, 0.25, 0.25, 0.0, 0.0).unwrap();
        let spec = PacketSpec {
            xc: 30.0,
            yc: 4.0,
            sigma_x: 1.0,
            sigma_y: 1.0,
            k0: 3.0,
        };
        let psi = init_gaussian(&g, &spec).unwrap();
        let cfg = StepperConfig {
            dt: 0.02,
            cap: Some(AbsorbingLayer {
                width: 6.0,
                strength: 2.0,
            }),
        };
        let p = Propagator::new(&g, &Medium::free(), &cfg).unwrap();
        let mut ev = p.evolve(&psi).unwrap();
        let mut last = 1.0;
        for _ in 0..200 {
            ev.advance(5).unwrap();
            let n = norm_squared(&ev.field());
            assert!(n <= last + 1e-13);
            last = n;
        }
        assert!(last < 0.05, "packet should be absorbed, norm^2 = {last}");
    }

    #[test]
    fn zero_steps_returns_input_and_no_samples() {
        struct Count(usize);
        impl Observer for Count {
            fn observe(&mut self, _: usize, _: f64, _: &ComplexField) -> Result<()> {
                self.0 += 1;
                Ok(())
            }
        }
        let (g, psi) = setup();
        let p = Propagator::new(&g, &Medium::free(), &StepperConfig::default_for(&g)).unwrap();
        let mut c = Count(0);
        let out = propagate(&p, &psi, 0, 4, &mut [&mut c]).unwrap();
        assert_eq!(out, psi);
        assert_eq!(c.0, 0);

        let mut c = Count(0);
        propagate(&p, &psi, 12, 4, &mut [&mut c]).unwrap();
        assert_eq!(c.0, 12 / 4 + 1);
    }

    #[test]
    fn rejects_bad_step() {
        let (g, _) = setup();
        assert!(Propagator::new(&g, &Medium::free(), &StepperConfig { dt: 0.0, cap: None }).is_err());
        assert!(Propagator::new(&g, &Medium::free(), &StepperConfig { dt: f64::NAN, cap: None }).is_err());
    }

    #[test]
    fn warns_when_potential_is_under_resolved() {
        let (g, _) = setup();
        let v = RealField::from_fn(g, |_, _| 100.0);
        let medium = Medium {
            potential: Some(v),
            mask: None,
        };
        let p = Propagator::new(&g, &medium, &StepperConfig { dt: 0.01, cap: None }).unwrap();
        assert_eq!(p.warnings().len(), 1);
    }
}
