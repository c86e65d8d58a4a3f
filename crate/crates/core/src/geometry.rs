//! Barrier slab with a channel cut through it, and the three ways of
//! representing the barrier: a Dirichlet wall, a finite potential step, or
//! a step rounded over a finite edge width.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Slab `x in [x_in, x_in + ell]` with an open slot `|y - y_center| < a/2`.
///
/// `a = 0` closes the slot and leaves a solid wall across the beam.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelGeometry {
    pub x_in: f64,
    pub ell: f64,
    pub a: f64,
    pub y_center: f64,
}

impl ChannelGeometry {
    pub fn x_out(&self) -> f64 {
        self.x_in + self.ell
    }

    pub fn x_mid(&self) -> f64 {
        self.x_in + 0.5 * self.ell
    }

    pub fn y_lo(&self) -> f64 {
        self.y_center - 0.5 * self.a
    }

    pub fn y_hi(&self) -> f64 {
        self.y_center + 0.5 * self.a
    }

    pub fn is_closed(&self) -> bool {
        self.a == 0.0
    }

    pub fn validate_on(&self, grid: &Grid) -> Result<()> {
        if !(self.ell > 0.0 && self.ell.is_finite()) {
            return Err(Error::invalid(format!("channel length must be positive, got {}", self.ell)));
        }
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::invalid(format!("channel width must be non-negative, got {}", self.a)));
        }
        if !(self.x_in.is_finite() && self.y_center.is_finite()) {
            return Err(Error::invalid("channel position must be finite"));
        }
        if self.x_in <= grid.x0 || self.x_out() >= grid.x_last() {
            return Err(Error::invalid(format!(
                "barrier slab [{}, {}] is not inside the grid x range [{}, {}]",
                self.x_in,
                self.x_out(),
                grid.x0,
                grid.x_last()
            )));
        }
        // An opening wider than the box is allowed and simply removes the barrier.
        if self.y_center < grid.y0 || self.y_center > grid.y_last() {
            return Err(Error::invalid(format!(
                "channel centerline {} is not inside the grid y range [{}, {}]",
                self.y_center,
                grid.y0,
                grid.y_last()
            )));
        }
        Ok(())
    }

    fn eps(grid: &Grid) -> f64 {
        1e-9 * grid.min_spacing()
    }

    /// Slab columns are closed intervals: a sample exactly on a face is material.
    fn in_slab(&self, x: f64, eps: f64) -> bool {
        x >= self.x_in - eps && x <= self.x_out() + eps
    }

    /// The opening is open: a sample exactly on a channel wall is material.
    fn in_opening(&self, y: f64, eps: f64) -> bool {
        (y - self.y_center).abs() < 0.5 * self.a - eps
    }

    pub fn is_material(&self, grid: &Grid, x: f64, y: f64) -> bool {
        let eps = Self::eps(grid);
        self.in_slab(x, eps) && !self.in_opening(y, eps)
    }

    /// True for points strictly inside the channel interior.
    pub fn in_channel(&self, x: f64, y: f64) -> bool {
        x > self.x_in && x < self.x_out() && (y - self.y_center).abs() < 0.5 * self.a
    }

    /// Signed distance to the barrier material, positive inside it.
    pub fn signed_distance(&self, x: f64, y: f64) -> f64 {
        let (x0, x1) = (self.x_in, self.x_out());
        if self.is_closed() {
            return slab_distance(x, x0, x1);
        }
        let upper = block_distance(x, y, x0, x1, self.y_hi(), f64::INFINITY);
        let lower = block_distance(x, y, x0, x1, f64::NEG_INFINITY, self.y_lo());
        upper.max(lower)
    }
}

fn slab_distance(x: f64, x0: f64, x1: f64) -> f64 {
    (x - x0).min(x1 - x)
}

/// Signed distance to an axis-aligned rectangle (positive inside).
fn block_distance(x: f64, y: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    let inside_x = x >= x0 && x <= x1;
    let inside_y = y >= y0 && y <= y1;
    if inside_x && inside_y {
        (x - x0).min(x1 - x).min(y - y0).min(y1 - y)
    } else {
        let ox = if x < x0 { x0 - x } else if x > x1 { x - x1 } else { 0.0 };
        let oy = if y < y0 { y0 - y } else if y > y1 { y - y1 } else { 0.0 };
        -(ox * ox + oy * oy).sqrt()
    }
}

/// How the barrier acts on the packet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BarrierModel {
    /// psi = 0 on barrier material.
    HardWall,
    /// `V = v0` on barrier material.
    FiniteStep { v0: f64 },
    /// `V = v0 S(d/w + 1/2)` with smoothstep `S` over signed distance `d`.
    Smoothed { v0: f64, w: f64 },
}

impl BarrierModel {
    pub fn is_hard(&self) -> bool {
        matches!(self, BarrierModel::HardWall)
    }

    pub fn name(&self) -> &'static str {
        match self {
            BarrierModel::HardWall => "hard-wall",
            BarrierModel::FiniteStep { .. } => "finite-step",
            BarrierModel::Smoothed { .. } => "smoothed",
        }
    }

    pub fn validate_on(&self, grid: &Grid) -> Result<()> {
        match *self {
            BarrierModel::HardWall => Ok(()),
            BarrierModel::FiniteStep { v0 } => check_height(v0),
            BarrierModel::Smoothed { v0, w } => {
                check_height(v0)?;
                let min_w = 2.0 * grid.dx.max(grid.dy);
                if !(w >= min_w * (1.0 - 1e-12)) {
                    return Err(Error::invalid(format!(
                        "edge width w = {w} is unresolved; need w >= 2 max(dx, dy) = {min_w}"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn check_height(v0: f64) -> Result<()> {
    if v0 > 0.0 && v0.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("barrier height must be positive, got {v0}")))
    }
}

/// Default soft-barrier height for a packet of energy `energy`.
pub fn default_barrier_height(energy: f64) -> f64 {
    40.0 * energy
}

/// `3t^2 - 2t^3` clamped to `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Real scalar field on a grid (potentials).
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    data: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: Grid) -> Self {
        Self {
            grid,
            data: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for j in 0..grid.ny {
            for i in 0..grid.nx {
                data.push(f(grid.x(i), grid.y(j)));
            }
        }
        Self { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.grid.idx(i, j)]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Boolean field, `true` on barrier material.
#[derive(Debug, Clone, PartialEq)]
pub struct WallMask {
    grid: Grid,
    data: Vec<bool>,
}

impl WallMask {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn at(&self, i: usize, j: usize) -> bool {
        self.data[self.grid.idx(i, j)]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// Wall mask for the hard-wall model.
pub fn wall_mask(grid: &Grid, geom: &ChannelGeometry) -> Result<WallMask> {
    geom.validate_on(grid)?;
    let mut data = Vec::with_capacity(grid.len());
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            data.push(geom.is_material(grid, grid.x(i), grid.y(j)));
        }
    }
    Ok(WallMask { grid: *grid, data })
}

/// Potential for the soft models; identically zero for the hard wall, whose
/// barrier lives in [`wall_mask`] instead.
pub fn build_potential(grid: &Grid, geom: &ChannelGeometry, model: &BarrierModel) -> Result<RealField> {
    geom.validate_on(grid)?;
    model.validate_on(grid)?;
    let field = match *model {
        BarrierModel::HardWall => RealField::zeros(*grid),
        BarrierModel::FiniteStep { v0 } => RealField::from_fn(*grid, |x, y| {
            if geom.is_material(grid, x, y) {
                v0
            } else {
                0.0
            }
        }),
        BarrierModel::Smoothed { v0, w } => {
            RealField::from_fn(*grid, |x, y| v0 * smoothstep(geom.signed_distance(x, y) / w + 0.5))
        }
    };
    Ok(field)
}

/// One lattice site on a barrier face normal to the beam.
///
/// `(i, j)` is the material site; the vacuum neighbour sits at `i - 1` on an
/// entry face (`sign = -1`) and at `i + 1` on an exit face (`sign = +1`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacePoint {
    pub i: usize,
    pub j: usize,
    pub sign: i8,
}

impl FacePoint {
    pub fn vacuum_i(&self) -> usize {
        if self.sign < 0 {
            self.i - 1
        } else {
            self.i + 1
        }
    }
}

/// A path vacuum site -> face site -> vacuum site that leaves the face
/// site sideways: around a corner of the slab along y, or straight through
/// a slab one cell thick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceLink {
    pub face: FacePoint,
    /// The other vacuum site `(i, j)`.
    pub other: (usize, usize),
    pub along_y: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FaceSegments {
    pub entry: Vec<FacePoint>,
    pub exit: Vec<FacePoint>,
    pub links: Vec<FaceLink>,
}

impl FaceSegments {
    pub fn iter(&self) -> impl Iterator<Item = &FacePoint> {
        self.entry.iter().chain(self.exit.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_empty() && self.exit.is_empty()
    }
}

/// Material sites with a vacuum neighbour along x, split by face.
pub fn face_segments(mask: &WallMask) -> FaceSegments {
    let g = mask.grid;
    let mut faces = FaceSegments::default();
    for j in 0..g.ny {
        for i in 0..g.nx {
            if !mask.at(i, j) {
                continue;
            }
            let left = i > 0 && !mask.at(i - 1, j);
            let right = i + 1 < g.nx && !mask.at(i + 1, j);
            for (open, face) in [(left, FacePoint { i, j, sign: -1 }), (right, FacePoint { i, j, sign: 1 })] {
                if !open {
                    continue;
                }
                if face.sign < 0 {
                    faces.entry.push(face);
                } else {
                    faces.exit.push(face);
                }
                if j > 0 && !mask.at(i, j - 1) {
                    faces.links.push(FaceLink { face, other: (i, j - 1), along_y: true });
                }
                if j + 1 < g.ny && !mask.at(i, j + 1) {
                    faces.links.push(FaceLink { face, other: (i, j + 1), along_y: true });
                }
            }
            if left && right {
                faces.links.push(FaceLink { face: FacePoint { i, j, sign: -1 }, other: (i + 1, j), along_y: false });
                faces.links.push(FaceLink { face: FacePoint { i, j, sign: 1 }, other: (i - 1, j), along_y: false });
            }
        }
    }
    faces
}
