//! Measurables on a propagated field: beam momentum and its rate, the
//! forces a barrier exerts, the interferometric phase between two arms,
//! channel mode amplitudes and the transmitted weight.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{face_segments, ChannelGeometry, FaceSegments, RealField, WallMask};
use crate::grid::{inner_product, moments_in, norm_squared, sum_rows, ComplexField, Region};
use crate::propagator::Observer;

/// Overlap magnitudes below this make the extracted phase meaningless.
pub const MIN_OVERLAP: f64 = 0.1;

/// One sample of a run's time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub t: f64,
    pub norm2: f64,
    pub mean_x: f64,
    pub mean_p: f64,
    pub dpdt: f64,
    pub f_boundary: Option<f64>,
    pub f_potential: Option<f64>,
    pub transmitted: f64,
}

/// How `|d psi/dx|` is taken at a wall face.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceStencil {
    /// `psi_1 / dx` from the first vacuum site, plus the cross terms
    /// `Re(conj(psi_b) psi_1)` where a face site also borders vacuum along y
    /// (slab corners) or on both sides. With the centred momentum operator
    /// and the 5-point Laplacian this makes the boundary force the exact
    /// rate of change of `<p>` on the lattice.
    #[default]
    Lattice,
    /// Second-order one-sided difference `(psi_2 - 4 psi_1) / (2 dx)` through
    /// the wall zero.
    Continuum,
}

/// How `-<dV/dx>` is discretised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialStencil {
    /// Bond differences weighted by `Re(conj(psi_i) psi_{i+1})`; the exact
    /// lattice rate of change of `<p>`.
    #[default]
    Bond,
    /// Centred gradient of V weighted by `|psi|^2`.
    Site,
}

/// Force that hard walls exert on the packet along the beam axis: the line
/// integral of `sign |d psi/dx|^2 / 2` over the faces normal to the beam,
/// negative on the entry face and positive on the exit face.
pub fn boundary_force(psi: &ComplexField, faces: &FaceSegments, stencil: ForceStencil) -> Result<f64> {
    let g = *psi.grid();
    let mut total = 0.0;
    for fp in faces.iter() {
        if psi.at(fp.i, fp.j) != Complex64::new(0.0, 0.0) {
            return Err(Error::InvalidUse(format!(
                "field is non-zero on wall site ({}, {}); boundary force needs a hard-wall run",
                fp.i, fp.j
            )));
        }
        let step = fp.sign as isize;
        let v1 = fp.vacuum_i();
        let psi1 = psi.at(v1, fp.j);
        let deriv = match stencil {
            ForceStencil::Lattice => psi1 / g.dx,
            ForceStencil::Continuum => {
                let v2 = v1 as isize + step;
                if v2 >= 0 && (v2 as usize) < g.nx {
                    (psi.at(v2 as usize, fp.j) - 4.0 * psi1) / (2.0 * g.dx)
                } else {
                    psi1 / g.dx
                }
            }
        };
        total += f64::from(fp.sign) * 0.5 * deriv.norm_sqr() * g.dy;
    }
    if stencil == ForceStencil::Lattice {
        for link in &faces.links {
            let fp = link.face;
            let a = psi.at(fp.vacuum_i(), fp.j);
            let b = psi.at(link.other.0, link.other.1);
            let d = if link.along_y { g.dy } else { g.dx };
            total += f64::from(fp.sign) * (b.conj() * a).re * g.dy / (2.0 * d * d);
        }
    }
    Ok(total)
}

/// Boundary force for a medium given by its wall mask; soft runs have no
/// mask and get an invalid-use error.
pub fn boundary_force_for(psi: &ComplexField, mask: Option<&WallMask>, stencil: ForceStencil) -> Result<f64> {
    let mask = mask.ok_or_else(|| Error::InvalidUse("boundary force requires a hard-wall run".into()))?;
    boundary_force(psi, &face_segments(mask), stencil)
}

/// `-<dV/dx>` for a soft barrier.
pub fn potential_force(psi: &ComplexField, v: &RealField, stencil: PotentialStencil) -> Result<f64> {
    psi.grid().ensure_same(v.grid())?;
    let g = *psi.grid();
    let nx = g.nx;
    let vs = v.as_slice();
    let n2 = norm_squared(psi) / g.cell_area();
    let s = sum_rows(&g, psi.as_slice(), |j, row| {
        let vr = &vs[j * nx..(j + 1) * nx];
        match stencil {
            PotentialStencil::Bond => {
                let mut acc = 0.0;
                for i in 0..nx - 1 {
                    let dv = vr[i + 1] - vr[i];
                    if dv != 0.0 {
                        acc += dv * (row[i].conj() * row[i + 1]).re;
                    }
                }
                -acc / g.dx
            }
            PotentialStencil::Site => {
                let mut acc = 0.0;
                for i in 0..nx {
                    let grad = if i == 0 {
                        (-3.0 * vr[0] + 4.0 * vr[1] - vr[2]) / (2.0 * g.dx)
                    } else if i == nx - 1 {
                        (3.0 * vr[nx - 1] - 4.0 * vr[nx - 2] + vr[nx - 3]) / (2.0 * g.dx)
                    } else {
                        (vr[i + 1] - vr[i - 1]) / (2.0 * g.dx)
                    };
                    acc += grad * row[i].norm_sqr();
                }
                -acc
            }
        }
    });
    Ok(s / n2)
}

/// `d<p>/dt` from a uniformly sampled series: centred differences inside,
/// second-order one-sided differences at the two ends.
pub fn momentum_rate(t: &[f64], p: &[f64]) -> Result<Vec<f64>> {
    let n = t.len();
    if n != p.len() {
        return Err(Error::invalid("time and momentum series differ in length"));
    }
    if n < 3 {
        return Err(Error::invalid(format!("momentum rate needs at least 3 samples, got {n}")));
    }
    let h = (t[n - 1] - t[0]) / (n - 1) as f64;
    if !(h > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::invalid("momentum series must be uniformly sampled in increasing time"));
    }
    let mut out = Vec::with_capacity(n);
    out.push((-3.0 * p[0] + 4.0 * p[1] - p[2]) / (t[2] - t[0]));
    for k in 1..n - 1 {
        out.push((p[k + 1] - p[k - 1]) / (t[k + 1] - t[k - 1]));
    }
    out.push((3.0 * p[n - 1] - 4.0 * p[n - 2] + p[n - 3]) / (t[n - 1] - t[n - 3]));
    Ok(out)
}

/// Trapezoid integral of `y` over `t[lo..=hi]`.
pub fn integrate(t: &[f64], y: &[f64], lo: usize, hi: usize) -> f64 {
    (lo..hi).map(|k| 0.5 * (y[k] + y[k + 1]) * (t[k + 1] - t[k])).sum()
}

/// `max |dpdt - F| / max |F|` over a series, `F` being whichever force the
/// records carry. `None` if the records carry no force.
pub fn ehrenfest_residual(records: &[ObservableRecord]) -> Option<f64> {
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for r in records {
        let f = r.f_boundary.or(r.f_potential)?;
        worst = worst.max((r.dpdt - f).abs());
        scale = scale.max(f.abs());
    }
    (scale > 0.0).then(|| worst / scale)
}

/// Phase of `<reference|channel>` and the normalised overlap magnitude
/// `|<r|c>| / (|r| |c|)`.
pub fn phase_shift_overlap(channel: &ComplexField, reference: &ComplexField) -> Result<(f64, f64)> {
    let ov = inner_product(reference, channel)?;
    let scale = (norm_squared(reference) * norm_squared(channel)).sqrt();
    let magnitude = if scale > 0.0 { ov.norm() / scale } else { 0.0 };
    if !(magnitude >= MIN_OVERLAP) {
        return Err(Error::UnreliablePhase {
            magnitude,
            threshold: MIN_OVERLAP,
        });
    }
    let mut phase = ov.arg();
    if phase == -std::f64::consts::PI {
        phase = std::f64::consts::PI;
    }
    Ok((phase, magnitude))
}

/// Projections of the column nearest `x_probe` onto the channel modes
/// `sqrt(2/a) sin(n pi (y - y_lo) / a)`, `n = 1..=n_max`.
pub fn mode_coefficients(psi: &ComplexField, geom: &ChannelGeometry, x_probe: f64, n_max: usize) -> Result<Vec<Complex64>> {
    let g = psi.grid();
    if !(x_probe >= geom.x_in && x_probe <= geom.x_out()) {
        return Err(Error::invalid(format!(
            "probe x = {x_probe} lies outside the channel [{}, {}]",
            geom.x_in,
            geom.x_out()
        )));
    }
    if geom.is_closed() {
        return Err(Error::invalid("closed channel has no modes"));
    }
    let i = (((x_probe - g.x0) / g.dx).round() as usize).min(g.nx - 1);
    let rows: Vec<usize> = (0..g.ny).filter(|&j| geom.in_channel(g.x(i), g.y(j))).collect();
    if n_max > rows.len() {
        return Err(Error::invalid(format!(
            "n_max = {n_max} exceeds the {} rows resolving the opening",
            rows.len()
        )));
    }
    let norm = (2.0 / geom.a).sqrt();
    Ok((1..=n_max)
        .map(|n| {
            let k = n as f64 * std::f64::consts::PI / geom.a;
            rows.iter()
                .map(|&j| psi.at(i, j) * (norm * (k * (g.y(j) - geom.y_lo())).sin()))
                .sum::<Complex64>()
                * g.dy
        })
        .collect())
}

/// Weight and beam momentum of the channel field projected onto the ground
/// transverse mode `sqrt(2/a) sin(pi (y - y_lo) / a)`, over the columns
/// strictly inside the slab. `None` for a closed channel or a vanishing
/// projection.
pub fn ground_mode_momentum(psi: &ComplexField, geom: &ChannelGeometry) -> Option<(f64, f64)> {
    let g = *psi.grid();
    if geom.is_closed() {
        return None;
    }
    let cols = Region::x_band(geom.x_in, geom.x_out()).columns(&g);
    if cols.is_empty() {
        return None;
    }
    let rows: Vec<(usize, f64)> = (0..g.ny)
        .filter(|&j| (g.y(j) - geom.y_center).abs() < 0.5 * geom.a)
        .map(|j| (j, (2.0 / geom.a).sqrt() * (std::f64::consts::PI * (g.y(j) - geom.y_lo()) / geom.a).sin()))
        .collect();
    let lo = cols.start.saturating_sub(1);
    let hi = (cols.end + 1).min(g.nx);
    let phi: Vec<Complex64> = (lo..hi)
        .map(|i| rows.iter().map(|&(j, chi)| psi.at(i, j) * chi).sum::<Complex64>() * g.dy)
        .collect();
    let at = |i: usize| if i >= lo && i < hi { phi[i - lo] } else { Complex64::new(0.0, 0.0) };
    let (mut w, mut p) = (0.0, 0.0);
    for i in cols {
        let z = at(i);
        w += z.norm_sqr();
        let next = if i + 1 < g.nx { at(i + 1) } else { Complex64::new(0.0, 0.0) };
        let prev = if i > 0 { at(i - 1) } else { Complex64::new(0.0, 0.0) };
        p += (z.conj() * (next - prev)).im / (2.0 * g.dx);
    }
    (w > 1e-14).then(|| (w * g.dx, p / w))
}

/// `int |psi|^2 dy` over the channel opening at the column nearest `x_probe`.
pub fn channel_slice_weight(psi: &ComplexField, geom: &ChannelGeometry, x_probe: f64) -> f64 {
    let g = psi.grid();
    let i = (((x_probe - g.x0) / g.dx).round() as usize).min(g.nx - 1);
    (0..g.ny)
        .filter(|&j| geom.in_channel(g.x(i), g.y(j)))
        .map(|j| psi.at(i, j).norm_sqr())
        .sum::<f64>()
        * g.dy
}

/// Fraction of the weight beyond the exit face, `x > x_in + ell`.
pub fn transmitted_fraction(psi: &ComplexField, geom: &ChannelGeometry) -> f64 {
    let total = norm_squared(psi);
    if total == 0.0 {
        return 0.0;
    }
    let beyond = weight_in(psi, &Region::x_band(geom.x_out(), f64::INFINITY));
    (beyond / total).clamp(0.0, 1.0)
}

/// `int |psi|^2` over a region.
pub fn weight_in(psi: &ComplexField, region: &Region) -> f64 {
    let g = *psi.grid();
    let cols = region.columns(&g);
    sum_rows(&g, psi.as_slice(), |j, row| {
        if region.contains_y(g.y(j)) {
            row[cols.clone()].iter().map(|z| z.norm_sqr()).sum()
        } else {
            0.0
        }
    }) * g.cell_area()
}

/// `<H> / <psi|psi>` with the lattice Laplacian, a Dirichlet box and an
/// optional real potential.
pub fn energy(psi: &ComplexField, v: Option<&RealField>) -> Result<f64> {
    let g = *psi.grid();
    if let Some(v) = v {
        g.ensure_same(v.grid())?;
    }
    let n2 = norm_squared(psi);
    if n2 < 1e-14 {
        return Err(Error::DegenerateState("energy of a zero field".into()));
    }
    let nx = g.nx;
    let data = psi.as_slice();
    let (ix2, iy2) = (1.0 / (g.dx * g.dx), 1.0 / (g.dy * g.dy));
    let e = sum_rows(&g, data, |j, row| {
        let mut acc = 0.0;
        let above = (j + 1 < g.ny).then(|| &data[(j + 1) * nx..(j + 2) * nx]);
        for i in 0..nx {
            let right = if i + 1 < nx { row[i + 1] } else { Complex64::new(0.0, 0.0) };
            acc += 0.5 * ix2 * (right - row[i]).norm_sqr();
            let up = above.map_or(Complex64::new(0.0, 0.0), |a| a[i]);
            acc += 0.5 * iy2 * (up - row[i]).norm_sqr();
            if let Some(v) = v {
                acc += v.as_slice()[j * nx + i] * row[i].norm_sqr();
            }
        }
        // Bonds from the first column and the bottom row to the box wall.
        acc += 0.5 * ix2 * row[0].norm_sqr();
        if j == 0 {
            acc += 0.5 * iy2 * row.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        acc
    });
    Ok(e * g.cell_area() / n2)
}

/// The force an [`ObservableRecord`] carries.
#[derive(Debug, Clone)]
pub enum ForceProbe {
    None,
    Boundary(FaceSegments, ForceStencil),
    Potential(RealField, PotentialStencil),
}

/// Builds the per-sample [`ObservableRecord`] series of a run.
#[derive(Debug, Clone)]
pub struct SeriesRecorder {
    geom: ChannelGeometry,
    probe: ForceProbe,
    records: Vec<ObservableRecord>,
}

impl SeriesRecorder {
    pub fn new(geom: ChannelGeometry, probe: ForceProbe) -> Self {
        Self {
            geom,
            probe,
            records: Vec::new(),
        }
    }

    /// The recorded series with `dpdt` filled in. Fewer than three samples
    /// leave `dpdt` at zero.
    pub fn finish(mut self) -> Result<Vec<ObservableRecord>> {
        if self.records.len() >= 3 {
            let t: Vec<f64> = self.records.iter().map(|r| r.t).collect();
            let p: Vec<f64> = self.records.iter().map(|r| r.mean_p).collect();
            for (r, d) in self.records.iter_mut().zip(momentum_rate(&t, &p)?) {
                r.dpdt = d;
            }
        }
        Ok(self.records)
    }
}

impl Observer for SeriesRecorder {
    fn observe(&mut self, _step: usize, t: f64, psi: &ComplexField) -> Result<()> {
        let m = moments_in(psi, &Region::EVERYWHERE)?;
        let (f_boundary, f_potential) = match &self.probe {
            ForceProbe::None => (None, None),
            ForceProbe::Boundary(faces, s) => (Some(boundary_force(psi, faces, *s)?), None),
            ForceProbe::Potential(v, s) => (None, Some(potential_force(psi, v, *s)?)),
        };
        self.records.push(ObservableRecord {
            t,
            norm2: m.weight,
            mean_x: m.mean_x,
            mean_p: m.mean_p,
            dpdt: 0.0,
            f_boundary,
            f_potential,
            transmitted: transmitted_fraction(psi, &self.geom),
        });
        Ok(())
    }
}
