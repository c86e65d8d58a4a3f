//! End-to-end runs: transit through the channel against a free reference
//! arm, reflection from a closed wall, parameter sweeps with power-law fits,
//! and a comparison of barrier models.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{
    effective_step_height, phase_shift_approx, phase_shift_exact_mode, reduced_momentum_exact, step_transmission_1d,
    ChannelMomentum,
};
use crate::config::{ModelKind, RunConfig, RunPlan};
use crate::error::{Error, Result};
use crate::geometry::{build_potential, face_segments, wall_mask, BarrierModel, ChannelGeometry};
use crate::grid::{init_gaussian, moments_in, ComplexField, Grid, PacketSpec, Region};
use crate::observables::{
    boundary_force, ehrenfest_residual, ground_mode_momentum, integrate, phase_shift_overlap,
    potential_force, transmitted_fraction, ForceProbe, ForceStencil, ObservableRecord, PotentialStencil,
    SeriesRecorder,
};
use crate::propagator::{propagate, propagate_free_separable, Medium, Observer, Propagator};

/// Progress sink for human-readable status lines.
pub type Progress = dyn Fn(&str) + Sync;

/// A sink that drops everything.
pub fn silent(_: &str) {}

/// Minimum channel weight for the channel-restricted moments to count.
const CHANNEL_WEIGHT_FLOOR: f64 = 1e-4;
/// A force sample counts as contact once it exceeds this fraction of the peak.
const TOUCH_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentumBudget {
    /// Impulse from first contact until the channel-restricted centroid
    /// passes mid-channel.
    pub entry_impulse: f64,
    /// Impulse from the mid-channel crossing to the end of the run.
    pub exit_impulse: f64,
    /// Impulse over the whole run.
    pub net: f64,
}

/// Times bounding the impulse windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Windows {
    pub t_touch: f64,
    pub t_cross: Option<f64>,
}

/// Everything one propagation produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    /// The configuration with every default written out.
    pub config: RunConfig,
    pub model: String,
    pub n_steps: usize,
    pub dt: f64,
    #[serde(skip)]
    pub series: Vec<ObservableRecord>,
    /// Confinement phase `-arg <reference|channel>` over the transmitted
    /// region, principal value.
    pub delta_phi_sim: Option<f64>,
    pub overlap_magnitude: Option<f64>,
    pub delta_phi_exact_mode: Option<f64>,
    pub delta_phi_approx: Option<f64>,
    pub delta_phi_oracle_1d: Option<f64>,
    /// `<p>` of the channel field projected onto the ground transverse
    /// mode, read when the channel-restricted centroid crosses mid-channel.
    pub p_plateau: Option<f64>,
    /// `<p>` of the whole channel-restricted field at the same instant.
    pub p_plateau_all_modes: Option<f64>,
    pub p_reduced_exact: Option<f64>,
    /// Ground-mode share of the channel weight at the crossing.
    pub mode_purity: Option<f64>,
    /// Transmitted-region `<p>` at the end of a transit; whole-field `<p>`
    /// at the end of a reflection.
    pub p_exit: f64,
    /// Residual with the configured force stencil.
    pub ehrenfest_residual: Option<f64>,
    /// Residual with the other stencil.
    pub ehrenfest_residual_alt: Option<f64>,
    pub momentum_budget: MomentumBudget,
    /// `<p>` at the end minus `<p>` at the start.
    pub momentum_change: f64,
    pub peak_force: f64,
    pub windows: Option<Windows>,
    /// Entry impulse with the window closed at the quarter and the
    /// three-quarter point of the channel instead of mid-channel.
    pub window_sensitivity: Option<[f64; 2]>,
    pub transmitted_final: f64,
    pub warnings: Vec<String>,
}

/// `sigma (1 + (t / 2 sigma^2)^2)^{1/2}`, free spreading with hbar = m = 1.
pub fn spread(sigma: f64, t: f64) -> f64 {
    sigma * (1.0 + (t / (2.0 * sigma * sigma)).powi(2)).sqrt()
}

/// Time for the transmitted centroid to sit four widths past the exit face,
/// including the channel delay `ell (1/p' - 1/p)`.
pub fn transit_duration(packet: &PacketSpec, geom: &ChannelGeometry) -> f64 {
    let p = packet.k0;
    let delay = match reduced_momentum_exact(p, geom.a.max(1e-300)) {
        Ok(ChannelMomentum::Propagating(q)) if q > 0.0 => geom.ell * (1.0 / q - 1.0 / p),
        _ => 0.0,
    };
    let mut t = (geom.x_out() - packet.xc) / p;
    for _ in 0..100 {
        let next = (geom.x_out() + 4.0 * spread(packet.sigma_x, t) - packet.xc) / p + delay;
        if (next - t).abs() < 1e-9 {
            break;
        }
        t = next;
    }
    t
}

/// Time for the reflected centroid to sit four widths in front of the wall.
pub fn reflection_duration(packet: &PacketSpec, geom: &ChannelGeometry) -> f64 {
    let p = packet.k0;
    let mut t = (geom.x_in - packet.xc) / p;
    for _ in 0..100 {
        let next = (geom.x_in - packet.xc + 4.0 * spread(packet.sigma_x, t)) / p;
        if (next - t).abs() < 1e-9 {
            break;
        }
        t = next;
    }
    t
}

/// The x range a run of duration `t` needs free of the box walls.
pub fn transit_extent(packet: &PacketSpec, geom: &ChannelGeometry, t: f64) -> (f64, f64) {
    let s = spread(packet.sigma_x, t);
    let reflected = 2.0 * geom.x_in - (packet.xc + packet.k0 * t);
    let incoming_left = packet.xc - 4.0 * packet.sigma_x;
    (
        (reflected - 4.0 * s).min(incoming_left),
        geom.x_out() + 8.0 * s,
    )
}

pub fn reflection_extent(packet: &PacketSpec, geom: &ChannelGeometry, t: f64) -> (f64, f64) {
    let s = spread(packet.sigma_x, t);
    let incoming_left = packet.xc - 4.0 * packet.sigma_x;
    ((geom.x_in - 8.0 * s).min(incoming_left), geom.x_out())
}

fn check_extent(grid: &Grid, (lo, hi): (f64, f64)) -> Result<()> {
    if lo < grid.x0 || hi > grid.x_last() {
        let x0 = grid.x0.min(grid.x0 - ((grid.x0 - lo) / grid.dx).ceil() * grid.dx);
        let nx = ((hi.max(grid.x_last()) - x0) / grid.dx).ceil() as usize + 1;
        return Err(Error::config(
            "grid",
            format!(
                "the run needs x in [{lo:.2}, {hi:.2}] clear of the box walls but the grid spans [{}, {}]; \
                 try x0 = {x0} and nx = {nx}",
                grid.x0,
                grid.x_last()
            ),
        ));
    }
    Ok(())
}

/// A copy of `cfg` whose grid is widened along x, in whole cells, to cover
/// `[lo, hi]`.
pub fn widen_grid(cfg: &RunConfig, (lo, hi): (f64, f64)) -> RunConfig {
    let mut out = cfg.clone();
    let g = &mut out.grid;
    if lo < g.x0 {
        let cells = ((g.x0 - lo) / g.dx).ceil();
        g.x0 -= cells * g.dx;
        g.nx += cells as usize;
    }
    let last = g.x0 + (g.nx - 1) as f64 * g.dx;
    if hi > last {
        g.nx += ((hi - last) / g.dx).ceil() as usize;
    }
    out
}

fn steps_for(plan: &RunPlan, t: f64, what: &str) -> Result<usize> {
    let dt = plan.stepper.dt;
    let needed = (t / dt).ceil() as usize;
    match plan.n_steps {
        Some(n) if n < needed => Err(Error::config(
            "stepper.n_steps",
            format!("{n} steps cover t = {:.2} but the {what} needs t = {t:.2} ({needed} steps)", n as f64 * dt),
        )),
        Some(n) => Ok(n),
        None => Ok(needed.div_ceil(plan.sample_stride) * plan.sample_stride),
    }
}

fn other_force(stencil: ForceStencil) -> ForceStencil {
    match stencil {
        ForceStencil::Lattice => ForceStencil::Continuum,
        ForceStencil::Continuum => ForceStencil::Lattice,
    }
}

fn other_potential(stencil: PotentialStencil) -> PotentialStencil {
    match stencil {
        PotentialStencil::Bond => PotentialStencil::Site,
        PotentialStencil::Site => PotentialStencil::Bond,
    }
}

/// The barrier arm's medium, its force probe and the probe with the other
/// stencil.
fn barrier_medium(plan: &RunPlan) -> Result<(Medium, ForceProbe, ForceProbe)> {
    match plan.model {
        BarrierModel::HardWall => {
            let mask = wall_mask(&plan.grid, &plan.geometry)?;
            let faces = face_segments(&mask);
            let probe = ForceProbe::Boundary(faces.clone(), plan.force_stencil);
            let alt = ForceProbe::Boundary(faces, other_force(plan.force_stencil));
            Ok((
                Medium {
                    potential: None,
                    mask: Some(mask),
                },
                probe,
                alt,
            ))
        }
        model => {
            let v = build_potential(&plan.grid, &plan.geometry, &model)?;
            let probe = ForceProbe::Potential(v.clone(), plan.potential_stencil);
            let alt = ForceProbe::Potential(v.clone(), other_potential(plan.potential_stencil));
            Ok((
                Medium {
                    potential: Some(v),
                    mask: None,
                },
                probe,
                alt,
            ))
        }
    }
}

fn probe_force(probe: &ForceProbe, psi: &ComplexField) -> Result<Option<f64>> {
    Ok(match probe {
        ForceProbe::None => None,
        ForceProbe::Boundary(faces, s) => Some(boundary_force(psi, faces, *s)?),
        ForceProbe::Potential(v, s) => Some(potential_force(psi, v, *s)?),
    })
}

/// Per-sample channel diagnostics of a transit.
struct TransitProbe<'a> {
    geom: ChannelGeometry,
    region: Region,
    alt: ForceProbe,
    channel: Vec<Option<(f64, f64, f64)>>,
    ground: Vec<Option<(f64, f64)>>,
    alt_force: Vec<Option<f64>>,
    total_steps: usize,
    next_report: usize,
    label: String,
    progress: &'a Progress,
}

impl Observer for TransitProbe<'_> {
    fn observe(&mut self, step: usize, _t: f64, psi: &ComplexField) -> Result<()> {
        let m = match moments_in(psi, &self.region) {
            Ok(m) if m.weight >= CHANNEL_WEIGHT_FLOOR => Some((m.mean_x, m.mean_p, m.weight)),
            Ok(_) | Err(Error::DegenerateState(_)) => None,
            Err(e) => return Err(e),
        };
        self.channel.push(m);
        self.ground.push(ground_mode_momentum(psi, &self.geom));
        self.alt_force.push(probe_force(&self.alt, psi)?);
        if step >= self.next_report && self.total_steps > 0 {
            (self.progress)(&format!(
                "{}: step {step}/{} ({:.0}%)",
                self.label,
                self.total_steps,
                100.0 * step as f64 / self.total_steps as f64
            ));
            self.next_report += self.total_steps.div_ceil(10).max(1);
        }
        Ok(())
    }
}

/// Counts samples and reports progress; used when no other probe does.
struct ProgressProbe<'a> {
    total_steps: usize,
    next_report: usize,
    label: String,
    alt: ForceProbe,
    alt_force: Vec<Option<f64>>,
    progress: &'a Progress,
}

impl Observer for ProgressProbe<'_> {
    fn observe(&mut self, step: usize, _t: f64, psi: &ComplexField) -> Result<()> {
        self.alt_force.push(probe_force(&self.alt, psi)?);
        if step >= self.next_report && self.total_steps > 0 {
            (self.progress)(&format!("{}: step {step}/{}", self.label, self.total_steps));
            self.next_report += self.total_steps.div_ceil(10).max(1);
        }
        Ok(())
    }
}

fn force_of(r: &ObservableRecord) -> f64 {
    r.f_boundary.or(r.f_potential).unwrap_or(0.0)
}

/// First upward crossing of `level` by a sampled series, as
/// `(sample index before, interpolation fraction)`.
fn crossing(values: &[Option<f64>], level: f64) -> Option<(usize, f64)> {
    values.windows(2).enumerate().find_map(|(k, w)| match (w[0], w[1]) {
        (Some(a), Some(b)) if a < level && b >= level => Some((k, (level - a) / (b - a))),
        _ => None,
    })
}

/// Trapezoid integral of `y` from sample `lo` to the fractional position
/// `(k, s)` between samples `k` and `k + 1`.
fn integrate_to(t: &[f64], y: &[f64], lo: usize, (k, s): (usize, f64)) -> f64 {
    if k < lo {
        return -integrate_between(t, y, (k, s), lo);
    }
    let whole = integrate(t, y, lo, k);
    let yk = y[k] + s * (y[k + 1] - y[k]);
    whole + 0.5 * (y[k] + yk) * s * (t[k + 1] - t[k])
}

fn integrate_between(t: &[f64], y: &[f64], (k, s): (usize, f64), hi: usize) -> f64 {
    integrate(t, y, k, hi) - integrate_to(t, y, k, (k, s))
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + s * (b - a)
}

fn separable_factors(grid: &Grid, spec: &PacketSpec) -> (Vec<Complex64>, Vec<Complex64>) {
    let fx = (0..grid.nx)
        .map(|i| {
            let u = (grid.x(i) - spec.xc) / (2.0 * spec.sigma_x);
            Complex64::from_polar((-u * u).exp(), spec.k0 * grid.x(i))
        })
        .collect();
    let gy = (0..grid.ny)
        .map(|j| {
            let u = (grid.y(j) - spec.yc) / (2.0 * spec.sigma_y);
            Complex64::new((-u * u).exp(), 0.0)
        })
        .collect();
    (fx, gy)
}

/// The free reference arm: same box, same scheme, no barrier.
fn reference_arm(plan: &RunPlan, n_steps: usize) -> Result<ComplexField> {
    if plan.stepper.cap.is_none() {
        let (fx, gy) = separable_factors(&plan.grid, &plan.packet);
        return propagate_free_separable(&plan.grid, plan.stepper.dt, &fx, &gy, n_steps);
    }
    let prop = Propagator::new(&plan.grid, &Medium::free(), &plan.stepper)?;
    let psi0 = init_gaussian(&plan.grid, &plan.packet)?;
    propagate(&prop, &psi0, n_steps, n_steps.max(1), &mut [])
}

fn oracles(p: f64, ell: f64, a: f64) -> Result<(f64, f64, f64)> {
    let exact = phase_shift_exact_mode(p, ell, a)?;
    let approx = phase_shift_approx(p, ell, a)?;
    let one_d = step_transmission_1d(p, effective_step_height(a)?, ell)?.phase;
    Ok((exact, approx, one_d))
}

fn barrier_present(plan: &RunPlan) -> bool {
    let g = &plan.grid;
    let geo = &plan.geometry;
    geo.is_closed() || geo.y_lo() >= g.y0 || geo.y_hi() <= g.y_last()
}

/// Transit of the packet through the channel, with the free reference arm
/// for the phase.
pub fn run_transit(cfg: &RunConfig, progress: &Progress) -> Result<RunResult> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let geo = plan.geometry;
    let p = plan.packet.k0;
    if geo.is_closed() {
        return Err(Error::config("geometry.a", "a transit needs an open channel (a > 0)"));
    }
    let present = barrier_present(&plan);
    let reduced = if present {
        match reduced_momentum_exact(p, geo.a)? {
            ChannelMomentum::Propagating(q) => Some(q),
            ChannelMomentum::Evanescent { .. } => {
                return Err(Error::BelowCutoff {
                    p,
                    cutoff: PI / geo.a,
                })
            }
        }
    } else {
        None
    };
    let t_needed = transit_duration(&plan.packet, &geo);
    check_extent(&plan.grid, transit_extent(&plan.packet, &geo, t_needed))?;
    let n_steps = steps_for(&plan, t_needed, "transit")?;

    let label = format!("transit {} p={p} ell={} a={}", plan.model.name(), geo.ell, geo.a);
    progress(&format!("{label}: {n_steps} steps of dt = {}", plan.stepper.dt));
    let (medium, probe, alt) = barrier_medium(&plan)?;
    let prop = Propagator::new(&plan.grid, &medium, &plan.stepper)?;
    let mut warnings: Vec<String> = prop.warnings().to_vec();
    if plan.stepper.cap.is_some() {
        warnings.push("absorbing layer is on; the momentum budget does not close".into());
    }
    let psi0 = init_gaussian(&plan.grid, &plan.packet)?;

    let mut recorder = SeriesRecorder::new(geo, probe);
    let mut tp = TransitProbe {
        geom: geo,
        region: Region {
            x_min: geo.x_in,
            x_max: geo.x_out(),
            y_min: geo.y_lo(),
            y_max: geo.y_hi(),
        },
        alt,
        channel: Vec::new(),
        ground: Vec::new(),
        alt_force: Vec::new(),
        total_steps: n_steps,
        next_report: 0,
        label: label.clone(),
        progress,
    };
    let channel_final = propagate(&prop, &psi0, n_steps, plan.sample_stride, &mut [&mut recorder, &mut tp])?;
    let series = recorder.finish()?;
    let reference_final = reference_arm(&plan, n_steps)?;
    progress(&format!("{label}: done"));

    let beyond = Region::x_band(geo.x_out(), f64::INFINITY);
    let (phase, magnitude) = phase_shift_overlap(&channel_final.restricted(&beyond), &reference_final.restricted(&beyond))?;
    let delta_phi_sim = if phase == 0.0 { 0.0 } else { -phase };
    let p_exit = moments_in(&channel_final, &beyond)?.mean_p;

    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    let f: Vec<f64> = series.iter().map(force_of).collect();
    let peak_force = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let last = series.len() - 1;
    let touch = if peak_force > 0.0 {
        f.iter().position(|v| v.abs() > TOUCH_FRACTION * peak_force).unwrap_or(0)
    } else {
        0
    };
    let mean_x: Vec<Option<f64>> = tp.channel.iter().map(|c| c.map(|c| c.0)).collect();
    let cross = crossing(&mean_x, geo.x_mid());
    let net = integrate(&t, &f, 0, last);
    let mut p_plateau = None;
    let mut p_all = None;
    let mut purity = None;
    let (entry, exit, t_cross) = match cross {
        Some((k, s)) => {
            let entry = integrate_to(&t, &f, touch, (k, s));
            let exit = integrate_between(&t, &f, (k, s), last);
            let (c0, c1) = (tp.channel[k].unwrap(), tp.channel[k + 1].unwrap());
            p_all = Some(lerp(c0.1, c1.1, s));
            if let (Some(g0), Some(g1)) = (tp.ground[k], tp.ground[k + 1]) {
                p_plateau = Some(lerp(g0.1, g1.1, s));
                purity = Some(lerp(g0.0 / c0.2, g1.0 / c1.2, s));
            }
            (entry, exit, Some(lerp(t[k], t[k + 1], s)))
        }
        None => {
            warnings.push("the channel centroid never crossed mid-channel".into());
            (integrate(&t, &f, touch, last), 0.0, None)
        }
    };
    let window_sensitivity = [0.25, 0.75].map(|frac| {
        crossing(&mean_x, geo.x_in + frac * geo.ell).map(|c| integrate_to(&t, &f, touch, c))
    });
    let window_sensitivity = match window_sensitivity {
        [Some(a), Some(b)] => Some([a, b]),
        _ => None,
    };

    let (exact, approx, one_d) = if present {
        let (e, a, o) = oracles(p, geo.ell, geo.a)?;
        (Some(e), Some(a), Some(o))
    } else {
        (Some(0.0), Some(0.0), Some(0.0))
    };

    Ok(RunResult {
        config: cfg.resolved(n_steps)?,
        model: plan.model.name().into(),
        n_steps,
        dt: plan.stepper.dt,
        delta_phi_sim: Some(delta_phi_sim),
        overlap_magnitude: Some(magnitude),
        delta_phi_exact_mode: exact,
        delta_phi_approx: approx,
        delta_phi_oracle_1d: one_d,
        p_plateau,
        p_plateau_all_modes: p_all,
        p_reduced_exact: reduced.or(Some(p)),
        mode_purity: purity,
        p_exit,
        ehrenfest_residual: ehrenfest_residual(&series),
        ehrenfest_residual_alt: alt_residual(&series, &tp.alt_force),
        momentum_budget: MomentumBudget {
            entry_impulse: entry,
            exit_impulse: exit,
            net,
        },
        momentum_change: series[last].mean_p - series[0].mean_p,
        peak_force,
        windows: Some(Windows {
            t_touch: t[touch],
            t_cross,
        }),
        window_sensitivity,
        transmitted_final: series[last].transmitted,
        series,
        warnings,
    })
}

fn alt_residual(series: &[ObservableRecord], alt: &[Option<f64>]) -> Option<f64> {
    let swapped: Vec<ObservableRecord> = series
        .iter()
        .zip(alt)
        .map(|(r, f)| {
            let mut r = *r;
            if r.f_boundary.is_some() {
                r.f_boundary = *f;
            } else if r.f_potential.is_some() {
                r.f_potential = *f;
            }
            r
        })
        .collect();
    ehrenfest_residual(&swapped)
}

/// Packet that misses the channel (or meets a closed wall) and bounces back.
pub fn run_reflection(cfg: &RunConfig, progress: &Progress) -> Result<RunResult> {
    cfg.validate()?;
    let plan = cfg.plan()?;
    let geo = plan.geometry;
    let pk = plan.packet;
    let present = barrier_present(&plan);
    if present && !geo.is_closed() && (pk.yc - geo.y_center).abs() < 0.5 * geo.a + 4.0 * pk.sigma_y {
        return Err(Error::config(
            "packet.yc",
            "a reflection needs a closed wall (a = 0) or a packet aimed at barrier material",
        ));
    }
    let t_needed = reflection_duration(&pk, &geo);
    check_extent(&plan.grid, reflection_extent(&pk, &geo, t_needed))?;
    let n_steps = steps_for(&plan, t_needed, "reflection")?;
    let label = format!("reflect {} p={}", plan.model.name(), pk.k0);
    progress(&format!("{label}: {n_steps} steps of dt = {}", plan.stepper.dt));

    let (medium, probe, alt) = barrier_medium(&plan)?;
    let prop = Propagator::new(&plan.grid, &medium, &plan.stepper)?;
    let mut warnings: Vec<String> = prop.warnings().to_vec();
    if plan.stepper.cap.is_some() {
        warnings.push("absorbing layer is on; the momentum budget does not close".into());
    }
    let psi0 = init_gaussian(&plan.grid, &pk)?;
    let mut recorder = SeriesRecorder::new(geo, probe);
    let mut pp = ProgressProbe {
        total_steps: n_steps,
        next_report: 0,
        label: label.clone(),
        alt,
        alt_force: Vec::new(),
        progress,
    };
    let final_field = propagate(&prop, &psi0, n_steps, plan.sample_stride, &mut [&mut recorder, &mut pp])?;
    let series = recorder.finish()?;
    progress(&format!("{label}: done"));

    let t: Vec<f64> = series.iter().map(|r| r.t).collect();
    let f: Vec<f64> = series.iter().map(force_of).collect();
    let last = series.len() - 1;
    let peak_force = f.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let touch = if peak_force > 0.0 {
        f.iter().position(|v| v.abs() > TOUCH_FRACTION * peak_force).unwrap_or(0)
    } else {
        0
    };
    let net = integrate(&t, &f, 0, last);
    let p_exit = moments_in(&final_field, &Region::EVERYWHERE)?.mean_p;
    Ok(RunResult {
        config: cfg.resolved(n_steps)?,
        model: plan.model.name().into(),
        n_steps,
        dt: plan.stepper.dt,
        delta_phi_sim: None,
        overlap_magnitude: None,
        delta_phi_exact_mode: None,
        delta_phi_approx: None,
        delta_phi_oracle_1d: None,
        p_plateau: None,
        p_plateau_all_modes: None,
        p_reduced_exact: None,
        mode_purity: None,
        p_exit,
        ehrenfest_residual: ehrenfest_residual(&series),
        ehrenfest_residual_alt: alt_residual(&series, &pp.alt_force),
        momentum_budget: MomentumBudget {
            entry_impulse: net,
            exit_impulse: 0.0,
            net,
        },
        momentum_change: series[last].mean_p - series[0].mean_p,
        peak_force,
        windows: Some(Windows {
            t_touch: t[touch],
            t_cross: None,
        }),
        window_sensitivity: None,
        transmitted_final: transmitted_fraction(&final_field, &geo),
        series,
        warnings,
    })
}

/// Swept parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    /// Beam momentum; the fit is against the energy `p^2 / 2`.
    Momentum,
    Length,
    Width,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Momentum => "p",
            SweepAxis::Length => "ell",
            SweepAxis::Width => "a",
        }
    }

    /// Exponent the approximate phase law predicts.
    pub fn expected_exponent(&self) -> f64 {
        match self {
            SweepAxis::Momentum => -0.5,
            SweepAxis::Length => 1.0,
            SweepAxis::Width => -2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub p: f64,
    pub ell: f64,
    pub a: f64,
    pub energy: f64,
    /// Unwrapped along the sweep.
    pub delta_phi_sim: Option<f64>,
    pub delta_phi_principal: Option<f64>,
    pub overlap_magnitude: Option<f64>,
    pub delta_phi_exact_mode: f64,
    pub delta_phi_approx: f64,
    pub delta_phi_oracle_1d: f64,
    pub p_plateau: Option<f64>,
    pub p_exit: Option<f64>,
    pub ehrenfest_residual: Option<f64>,
    pub nx: usize,
    pub x0: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub series: Vec<ObservableRecord>,
}

impl SweepRow {
    /// The swept value: energy for the momentum axis.
    pub fn abscissa(&self) -> f64 {
        match self.axis {
            SweepAxis::Momentum => self.energy,
            SweepAxis::Length => self.ell,
            SweepAxis::Width => self.a,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
    pub exponent_sim: Option<f64>,
    pub exponent_exact_mode: Option<f64>,
    pub exponent_approx: Option<f64>,
    pub exponent_oracle_1d: Option<f64>,
    /// Simulated phase strictly increasing with the swept value.
    pub increasing: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub tables: Vec<SweepTable>,
    pub errors: Vec<String>,
}

impl SweepReport {
    pub fn table(&self, axis: SweepAxis) -> Option<&SweepTable> {
        self.tables.iter().find(|t| t.axis == axis)
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("a power-law fit needs at least two matched points"));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("a power-law fit needs positive data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("a power-law fit needs distinct abscissae"));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    Ok(sxy / sxx)
}

/// Unwraps principal phases by continuity, starting from the member with
/// the smallest predicted phase.
pub fn unwrap_by_continuity(principal: &[Option<f64>], predicted: &[f64]) -> Vec<Option<f64>> {
    let mut order: Vec<usize> = (0..principal.len()).collect();
    order.sort_by(|&a, &b| predicted[a].total_cmp(&predicted[b]));
    let mut out = vec![None; principal.len()];
    let mut prev: Option<f64> = None;
    for k in order {
        let Some(v) = principal[k] else { continue };
        let value = match prev {
            None => v,
            Some(q) => v + 2.0 * PI * ((q - v) / (2.0 * PI)).round(),
        };
        out[k] = Some(value);
        prev = Some(value);
    }
    out
}

fn fit(rows: &[SweepRow], value: impl Fn(&SweepRow) -> Option<f64>) -> Option<f64> {
    let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| value(r).map(|v| (r.abscissa(), v))).unzip();
    power_law_exponent(&x, &y).ok()
}

fn sweep_member(base: &RunConfig, axis: SweepAxis, value: f64, progress: &Progress) -> SweepRow {
    let mut cfg = base.clone();
    cfg.experiment.kind = Some(crate::config::ExperimentKind::Transit);
    match axis {
        SweepAxis::Momentum => cfg.packet.k0 = value,
        SweepAxis::Length => cfg.geometry.ell = value,
        SweepAxis::Width => cfg.geometry.a = value,
    }
    let (p, ell, a) = (cfg.packet.k0, cfg.geometry.ell, cfg.geometry.a);
    let (exact, approx, one_d) = oracles(p, ell, a).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
    let packet = cfg.packet_spec();
    let geo = cfg.channel();
    let t = transit_duration(&packet, &geo);
    let cfg = widen_grid(&cfg, transit_extent(&packet, &geo, t));
    let mut row = SweepRow {
        axis,
        p,
        ell,
        a,
        energy: 0.5 * p * p,
        delta_phi_sim: None,
        delta_phi_principal: None,
        overlap_magnitude: None,
        delta_phi_exact_mode: exact,
        delta_phi_approx: approx,
        delta_phi_oracle_1d: one_d,
        p_plateau: None,
        p_exit: None,
        ehrenfest_residual: None,
        nx: cfg.grid.nx,
        x0: cfg.grid.x0,
        error: None,
        series: Vec::new(),
    };
    match run_transit(&cfg, progress) {
        Ok(r) => {
            row.delta_phi_principal = r.delta_phi_sim;
            row.overlap_magnitude = r.overlap_magnitude;
            row.p_plateau = r.p_plateau;
            row.p_exit = Some(r.p_exit);
            row.ehrenfest_residual = r.ehrenfest_residual;
            row.series = r.series;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn sweep_table(base: &RunConfig, axis: SweepAxis, values: &[f64], progress: &Progress) -> SweepTable {
    let mut rows: Vec<SweepRow> = values.par_iter().map(|&v| sweep_member(base, axis, v, progress)).collect();
    let principal: Vec<Option<f64>> = rows.iter().map(|r| r.delta_phi_principal).collect();
    let predicted: Vec<f64> = rows.iter().map(|r| r.delta_phi_exact_mode).collect();
    for (r, v) in rows.iter_mut().zip(unwrap_by_continuity(&principal, &predicted)) {
        r.delta_phi_sim = v;
    }
    let mut sorted: Vec<&SweepRow> = rows.iter().filter(|r| r.delta_phi_sim.is_some()).collect();
    sorted.sort_by(|a, b| a.abscissa().total_cmp(&b.abscissa()));
    let increasing = (sorted.len() >= 2).then(|| sorted.windows(2).all(|w| w[1].delta_phi_sim > w[0].delta_phi_sim));
    SweepTable {
        axis,
        exponent_sim: fit(&rows, |r| r.delta_phi_sim),
        exponent_exact_mode: fit(&rows, |r| Some(r.delta_phi_exact_mode)),
        exponent_approx: fit(&rows, |r| Some(r.delta_phi_approx)),
        exponent_oracle_1d: fit(&rows, |r| Some(r.delta_phi_oracle_1d)),
        increasing,
        rows,
    }
}

/// Energy sweep over `experiment.p_list`, plus the length and width sweeps
/// over `ell_list` and `a_list` when those are non-empty. Members run
/// concurrently; a failed member leaves an error in its row.
pub fn run_energy_sweep(cfg: &RunConfig, progress: &Progress) -> Result<SweepReport> {
    cfg.validate()?;
    let ex = &cfg.experiment;
    if ex.p_list.len() < 5 {
        return Err(Error::config(
            "experiment.p_list",
            format!("the energy sweep needs at least 5 momenta, got {}", ex.p_list.len()),
        ));
    }
    for (axis, list, path) in [
        (SweepAxis::Momentum, &ex.p_list, "experiment.p_list"),
        (SweepAxis::Length, &ex.ell_list, "experiment.ell_list"),
        (SweepAxis::Width, &ex.a_list, "experiment.a_list"),
    ] {
        for (k, &v) in list.iter().enumerate() {
            let (p, a) = match axis {
                SweepAxis::Momentum => (v, cfg.geometry.a),
                SweepAxis::Length => (cfg.packet.k0, cfg.geometry.a),
                SweepAxis::Width => (cfg.packet.k0, v),
            };
            if p <= PI / a {
                return Err(Error::config(
                    format!("{path}[{k}]"),
                    format!("p = {p} is at or below the channel cutoff pi/a = {}", PI / a),
                ));
            }
        }
    }
    let axes: Vec<(SweepAxis, &Vec<f64>)> = [
        (SweepAxis::Momentum, &ex.p_list),
        (SweepAxis::Length, &ex.ell_list),
        (SweepAxis::Width, &ex.a_list),
    ]
    .into_iter()
    .filter(|(_, l)| !l.is_empty())
    .collect();
    let tables: Vec<SweepTable> = axes.par_iter().map(|(axis, list)| sweep_table(cfg, *axis, list, progress)).collect();
    let errors = tables
        .iter()
        .flat_map(|t| &t.rows)
        .filter_map(|r| r.error.as_ref().map(|e| format!("{} = {}: {e}", r.axis.name(), abscissa_label(r))))
        .collect();
    Ok(SweepReport { tables, errors })
}

fn abscissa_label(r: &SweepRow) -> f64 {
    match r.axis {
        SweepAxis::Momentum => r.p,
        SweepAxis::Length => r.ell,
        SweepAxis::Width => r.a,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub label: String,
    pub model: BarrierModel,
    pub delta_phi_sim: Option<f64>,
    pub p_plateau: Option<f64>,
    pub entry_impulse: Option<f64>,
    pub exit_impulse: Option<f64>,
    pub net_impulse: Option<f64>,
    pub ehrenfest_residual: Option<f64>,
    pub peak_force: Option<f64>,
    pub window_sensitivity: Option<[f64; 2]>,
    pub transmitted_final: Option<f64>,
    pub error: Option<String>,
    #[serde(skip)]
    pub series: Vec<ObservableRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelComparison {
    pub rows: Vec<ModelRow>,
    /// Largest relative deviation of a model's entry impulse from the
    /// hard wall's, over the default-height models.
    pub entry_spread: Option<f64>,
    pub phase_spread: Option<f64>,
    /// Relative phase change of the finite step when its height is scaled
    /// by `experiment.v0_factor`.
    pub stiff_phase_change: Option<f64>,
    /// Relative spread of the entry impulse across the smoothed widths.
    pub smoothed_impulse_spread: Option<f64>,
    /// Peak smoothed force strictly decreasing with edge width.
    pub smoothed_peak_decreasing: Option<bool>,
}

fn relative_spread(reference: Option<f64>, others: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let r = reference?;
    let mut worst: f64 = 0.0;
    for o in others {
        worst = worst.max(((o? - r) / r).abs());
    }
    Some(worst)
}

/// Hard wall, finite step and smoothed step at every configured edge width
/// on one geometry, plus the finite step at `v0_factor` times the height.
pub fn run_model_comparison(cfg: &RunConfig, progress: &Progress) -> Result<ModelComparison> {
    cfg.validate()?;
    let spacing = cfg.grid.dx.max(cfg.grid.dy);
    let mut variants: Vec<(String, crate::config::ModelConfig)> = Vec::new();
    let v0 = cfg.model.v0;
    let base = |kind, v0, w| crate::config::ModelConfig { kind, v0, w };
    variants.push(("hard-wall".into(), base(ModelKind::HardWall, None, None)));
    variants.push(("finite-step".into(), base(ModelKind::FiniteStep, v0, None)));
    for &w in &cfg.experiment.edge_widths {
        variants.push((format!("smoothed w={w}"), base(ModelKind::Smoothed, v0, Some(w * spacing))));
    }
    let default_v0 = cfg.barrier_model().ok().and_then(|_| {
        let mut c = cfg.clone();
        c.model = base(ModelKind::FiniteStep, v0, None);
        match c.barrier_model() {
            Ok(BarrierModel::FiniteStep { v0 }) => Some(v0),
            _ => None,
        }
    });
    let stiff_v0 = default_v0.map(|v| v * cfg.experiment.v0_factor);
    variants.push((
        format!("finite-step x{}", cfg.experiment.v0_factor),
        base(ModelKind::FiniteStep, stiff_v0, None),
    ));

    let rows: Vec<ModelRow> = variants
        .par_iter()
        .map(|(label, model)| {
            let mut c = cfg.clone();
            c.model = *model;
            let model = c.barrier_model().unwrap_or(BarrierModel::HardWall);
            let mut row = ModelRow {
                label: label.clone(),
                model,
                delta_phi_sim: None,
                p_plateau: None,
                entry_impulse: None,
                exit_impulse: None,
                net_impulse: None,
                ehrenfest_residual: None,
                peak_force: None,
                window_sensitivity: None,
                transmitted_final: None,
                error: None,
                series: Vec::new(),
            };
            match run_transit(&c, progress) {
                Ok(r) => {
                    row.delta_phi_sim = r.delta_phi_sim;
                    row.p_plateau = r.p_plateau;
                    row.entry_impulse = Some(r.momentum_budget.entry_impulse);
                    row.exit_impulse = Some(r.momentum_budget.exit_impulse);
                    row.net_impulse = Some(r.momentum_budget.net);
                    row.ehrenfest_residual = r.ehrenfest_residual;
                    row.peak_force = Some(r.peak_force);
                    row.window_sensitivity = r.window_sensitivity;
                    row.transmitted_final = Some(r.transmitted_final);
                    row.series = r.series;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();

    let n_default = rows.len() - 1;
    let hard = &rows[0];
    let entry_spread = relative_spread(hard.entry_impulse, rows[1..n_default].iter().map(|r| r.entry_impulse));
    let phase_spread = relative_spread(hard.delta_phi_sim, rows[1..n_default].iter().map(|r| r.delta_phi_sim));
    let stiff_phase_change = relative_spread(rows[1].delta_phi_sim, std::iter::once(rows[n_default].delta_phi_sim));
    let smoothed: Vec<&ModelRow> = rows[2..n_default].iter().collect();
    let smoothed_impulse_spread = match smoothed.split_first() {
        Some((first, rest)) if !rest.is_empty() => relative_spread(first.entry_impulse, rest.iter().map(|r| r.entry_impulse)),
        _ => None,
    };
    let smoothed_peak_decreasing = (smoothed.len() >= 2)
        .then(|| {
            let peaks: Option<Vec<f64>> = smoothed.iter().map(|r| r.peak_force).collect();
            peaks.map(|p| p.windows(2).all(|w| w[1] < w[0]))
        })
        .flatten();
    Ok(ModelComparison {
        rows,
        entry_spread,
        phase_spread,
        stiff_phase_change,
        smoothed_impulse_spread,
        smoothed_peak_decreasing,
    })
}

/// Closed-form predictions for one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleRow {
    pub p: f64,
    pub a: f64,
    pub ell: f64,
    pub p_reduced_exact: f64,
    pub p_reduced_approx: f64,
    pub delta_phi_exact_mode: f64,
    pub delta_phi_approx: f64,
    pub delta_phi_oracle_1d: f64,
}

/// Every combination of the given lists, in nested order `p`, `a`, `ell`.
pub fn oracle_table(ps: &[f64], as_: &[f64], ells: &[f64]) -> Result<Vec<OracleRow>> {
    let mut out = Vec::new();
    for &p in ps {
        for &a in as_ {
            for &ell in ells {
                let (exact, approx, one_d) = oracles(p, ell, a)?;
                out.push(OracleRow {
                    p,
                    a,
                    ell,
                    p_reduced_exact: reduced_momentum_exact(p, a)?.value(),
                    p_reduced_approx: crate::analytic::reduced_momentum_approx(p, a)?,
                    delta_phi_exact_mode: exact,
                    delta_phi_approx: approx,
                    delta_phi_oracle_1d: one_d,
                });
            }
        }
    }
    Ok(out)
}
