//! Closed-form predictions for a packet of free momentum `p` crossing a
//! channel of width `a` and length `ell`, plus a 1D rectangular-step
//! transmission oracle.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};

/// Free-space beam parameters (hbar = m = 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeamParams {
    pub p: f64,
}

impl BeamParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::invalid(format!("beam momentum must be positive, got {p}")));
        }
        Ok(Self { p })
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * PI / self.p
    }

    pub fn energy(&self) -> f64 {
        0.5 * self.p * self.p
    }
}

/// Longitudinal momentum of the ground transverse mode inside the channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum ChannelMomentum {
    Propagating(f64),
    /// At or below the mode cutoff; `kappa` is the decay rate
    /// `sqrt((pi/a)^2 - p^2)`.
    Evanescent { kappa: f64 },
}

impl ChannelMomentum {
    /// `p'`, zero for an evanescent mode.
    pub fn value(&self) -> f64 {
        match *self {
            ChannelMomentum::Propagating(p) => p,
            ChannelMomentum::Evanescent { .. } => 0.0,
        }
    }

    pub fn is_evanescent(&self) -> bool {
        matches!(self, ChannelMomentum::Evanescent { .. })
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Ground-mode cutoff momentum `pi / a`.
pub fn cutoff(a: f64) -> f64 {
    PI / a
}

/// `p' = sqrt(p^2 - (pi/a)^2)`.
pub fn reduced_momentum_exact(p: f64, a: f64) -> Result<ChannelMomentum> {
    check_positive("p", p)?;
    check_positive("a", a)?;
    let kc = cutoff(a);
    if p > kc {
        Ok(ChannelMomentum::Propagating((p * p - kc * kc).sqrt()))
    } else {
        Ok(ChannelMomentum::Evanescent {
            kappa: (kc * kc - p * p).sqrt(),
        })
    }
}

/// First-order expansion `p - pi^2 / (2 a^2 p)`. Defined down to the cutoff
/// itself, where it gives `p / 2` while the exact momentum is zero; strictly
/// below the cutoff it is an error.
pub fn reduced_momentum_approx(p: f64, a: f64) -> Result<f64> {
    check_positive("p", p)?;
    check_positive("a", a)?;
    if p < cutoff(a) {
        return Err(Error::BelowCutoff { p, cutoff: cutoff(a) });
    }
    Ok(p - PI * PI / (2.0 * a * a * p))
}

fn require_propagating(p: f64, a: f64) -> Result<f64> {
    match reduced_momentum_exact(p, a)? {
        ChannelMomentum::Propagating(q) => Ok(q),
        ChannelMomentum::Evanescent { .. } => Err(Error::BelowCutoff { p, cutoff: cutoff(a) }),
    }
}

/// `Delta Phi = pi^2 ell / (2 a^2 p) = (pi / 4) lambda ell / a^2`.
pub fn phase_shift_approx(p: f64, ell: f64, a: f64) -> Result<f64> {
    require_propagating(p, a)?;
    if !(ell >= 0.0 && ell.is_finite()) {
        return Err(Error::invalid(format!("ell must be non-negative, got {ell}")));
    }
    let momentum_form = PI * PI * ell / (2.0 * a * a * p);
    let wavelength_form = PI / 4.0 * BeamParams { p }.wavelength() * ell / (a * a);
    debug_assert!((momentum_form - wavelength_form).abs() <= 1e-12 * momentum_form.abs().max(1e-300));
    Ok(momentum_form)
}

/// `(p - p') ell` with the unexpanded ground-mode momentum.
pub fn phase_shift_exact_mode(p: f64, ell: f64, a: f64) -> Result<f64> {
    let q = require_propagating(p, a)?;
    if !(ell >= 0.0 && ell.is_finite()) {
        return Err(Error::invalid(format!("ell must be non-negative, got {ell}")));
    }
    Ok((p - q) * ell)
}

/// Transverse zero-point energy `pi^2 / (2 a^2)` acting as a longitudinal step.
pub fn effective_step_height(a: f64) -> Result<f64> {
    check_positive("a", a)?;
    Ok(PI * PI / (2.0 * a * a))
}

/// Scattering of a plane wave `e^{ipx}` by a rectangular step of height `V0`
/// on `0 < x < ell`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission1d {
    /// Coefficient of `e^{ipx}` beyond the step.
    pub t: Complex64,
    /// Coefficient of `e^{-ipx}` before the step.
    pub r: Complex64,
    /// Phase lag `-arg t`, unwrapped continuously from `ell = 0`.
    pub phase: f64,
}

fn step_denominator(p: f64, v0: f64, ell: f64) -> (Complex64, Complex64) {
    let q = Complex64::new(p * p - 2.0 * v0, 0.0).sqrt();
    let q2 = q * q;
    let ql = q * ell;
    // sin(q ell) / q, finite as q -> 0.
    let sinc = if q.norm() * ell < 1e-8 {
        Complex64::new(ell, 0.0)
    } else {
        ql.sin() / q
    };
    let i = Complex64::i();
    let d = ql.cos() - i * (p * p + q2) / (2.0 * p) * sinc;
    let n_r = i * (q2 - p * p) / (2.0 * p) * sinc;
    (d, n_r)
}

/// Exact transmission through the step; the phase is unwrapped by marching
/// `ell` up from zero in steps small enough that the phase moves by less
/// than a quarter turn per step.
pub fn step_transmission_1d(p: f64, v0: f64, ell: f64) -> Result<Transmission1d> {
    check_positive("p", p)?;
    if !(ell >= 0.0 && ell.is_finite() && v0.is_finite()) {
        return Err(Error::invalid("step length must be non-negative and the height finite"));
    }
    let (d, n_r) = step_denominator(p, v0, ell);
    let t = Complex64::from_polar(1.0, -p * ell) / d;
    let r = n_r / d;

    let q = Complex64::new(p * p - 2.0 * v0, 0.0).sqrt().norm();
    let rate = p + q + 1.0 / ell.max(1e-300);
    let n = ((ell * rate) / 0.25).ceil().max(1.0) as usize;
    let mut arg_d = 0.0;
    let mut prev = 0.0;
    for k in 1..=n {
        let l = ell * k as f64 / n as f64;
        let a = step_denominator(p, v0, l).0.arg();
        let mut delta = a - prev;
        delta -= 2.0 * PI * (delta / (2.0 * PI)).round();
        arg_d += delta;
        prev = a;
    }
    Ok(Transmission1d {
        t,
        r,
        phase: p * ell + arg_d,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_momentum_values() {
        // sqrt(1 - 0.0986960440) = 0.9493703 and 1 - 9.8696044 / 200.
        let exact = reduced_momentum_exact(1.0, 10.0).unwrap().value();
        assert!((exact - 0.949_370_3).abs() < 5e-8, "{exact}");
        let approx = reduced_momentum_approx(1.0, 10.0).unwrap();
        assert!((approx - 0.950_652).abs() < 5e-7, "{approx}");
        assert!((1.0 - approx - 0.049_348_0).abs() < 5e-8);
    }

    #[test]
    fn cutoff_behaviour() {
        let at = reduced_momentum_exact(1.0, PI).unwrap();
        assert!(at.is_evanescent());
        assert_eq!(at.value(), 0.0);
        assert_eq!(reduced_momentum_approx(1.0, PI).unwrap(), 0.5);
        assert!(matches!(
            reduced_momentum_approx(0.5, PI),
            Err(Error::BelowCutoff { .. })
        ));
        assert!(phase_shift_exact_mode(1.0, 10.0, PI).is_err());
        assert!(reduced_momentum_exact(0.0, 1.0).is_err());
        assert!(reduced_momentum_exact(1.0, -1.0).is_err());
    }

    #[test]
    fn wide_channel_leaves_momentum_unchanged() {
        let q = reduced_momentum_exact(1.0, 1e6).unwrap().value();
        assert!((q - 1.0).abs() < 1e-11);
        assert!(phase_shift_exact_mode(1.0, 50.0, 1e6).unwrap() < 1e-9);
        assert!(effective_step_height(1e6).unwrap() < 1e-11);
    }

    #[test]
    fn expansion_gap_at_pa_ten() {
        // (exact - approx) / Delta p at p a = 10 is about 2.5 %.
        let e = reduced_momentum_exact(1.0, 10.0).unwrap().value();
        let a = reduced_momentum_approx(1.0, 10.0).unwrap();
        let gap = (a - e) / (1.0 - e);
        assert!((gap - 0.025).abs() < 0.002, "{gap}");
        let e = reduced_momentum_exact(1.0, 100.0).unwrap().value();
        let a = reduced_momentum_approx(1.0, 100.0).unwrap();
        assert!((a - e) / (1.0 - e) < 0.001);
    }

    #[test]
    fn phase_shift_values() {
        let approx = phase_shift_approx(1.0, 50.0, 10.0).unwrap();
        assert!((approx - 2.467_40).abs() < 5e-6, "{approx}");
        let exact = phase_shift_exact_mode(1.0, 50.0, 10.0).unwrap();
        // (1 - 0.9493703) * 50.
        assert!((exact - 2.531_485).abs() < 5e-6, "{exact}");
        assert_eq!(phase_shift_approx(1.0, 0.0, 10.0).unwrap(), 0.0);
        let wide = phase_shift_approx(1.0, 50.0, 20.0).unwrap();
        assert!((wide * 4.0 - approx).abs() < 1e-14);
        let gap = (exact - approx) / exact;
        assert!((gap - 0.025).abs() < 0.002);
    }

    #[test]
    fn expansion_underestimates_on_a_lattice_of_parameters() {
        for &p in &[0.5, 0.8, 1.0, 1.5, 2.0, 4.0] {
            for &a in &[4.0, 8.0, 10.0, 16.0, 40.0] {
                if p <= cutoff(a) {
                    continue;
                }
                for &ell in &[1.0, 10.0, 50.0] {
                    let lo = phase_shift_approx(p, ell, a).unwrap();
                    let hi = phase_shift_exact_mode(p, ell, a).unwrap();
                    assert!(0.0 < lo && lo < hi, "p={p} a={a} ell={ell}");
                }
            }
        }
    }

    #[test]
    fn energy_law_is_exact() {
        let reference = phase_shift_approx(1.0, 50.0, 10.0).unwrap() * 1.0;
        for &p in &[0.8, 1.25, 1.5, 2.0, 3.0] {
            let e = BeamParams::new(p).unwrap().energy();
            let v = phase_shift_approx(p, 50.0, 10.0).unwrap() * (2.0 * e).sqrt();
            assert!((v - reference).abs() < 1e-13 * reference);
        }
    }

    #[test]
    fn effective_step_is_consistent() {
        assert!((effective_step_height(PI).unwrap() - 0.5).abs() < 1e-15);
        for &a in &[5.0, 10.0, 30.0] {
            let v = effective_step_height(a).unwrap();
            let p = 1.3;
            let q = reduced_momentum_exact(p, a).unwrap().value();
            assert!(((p * p - 2.0 * v).sqrt() - q).abs() < 1e-14);
        }
    }

    #[test]
    fn step_without_height_is_transparent() {
        let s = step_transmission_1d(1.0, 0.0, 37.0).unwrap();
        assert!((s.t - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        assert!(s.r.norm() < 1e-12);
        assert!(s.phase.abs() < 1e-12);
    }

    #[test]
    fn step_oracle_tracks_the_mode_formula() {
        let v = effective_step_height(10.0).unwrap();
        let s = step_transmission_1d(1.0, v, 50.0).unwrap();
        let mode = phase_shift_exact_mode(1.0, 50.0, 10.0).unwrap();
        // Fabry-Perot ripple of a weak step is bounded by about 2|r|.
        assert!((s.phase - mode).abs() <= 2.0 * s.r.norm() + 1e-12, "{} vs {mode}", s.phase);
        assert!((s.phase - mode).abs() < 0.05 * mode);
    }

    #[test]
    fn step_flux_is_conserved() {
        for &p in &[0.3, 1.0, 2.5] {
            for &v in &[0.01, 0.1, 0.04] {
                for &ell in &[0.5, 7.0, 50.0] {
                    if p * p <= 2.0 * v {
                        continue;
                    }
                    let s = step_transmission_1d(p, v, ell).unwrap();
                    let flux = s.t.norm_sqr() + s.r.norm_sqr();
                    assert!((flux - 1.0).abs() < 1e-12, "p={p} v={v} ell={ell}: {flux}");
                }
            }
        }
        // Also through a tunnelling step.
        let s = step_transmission_1d(1.0, 2.0, 3.0).unwrap();
        assert!((s.t.norm_sqr() + s.r.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tunnelling_decays_with_length() {
        let mut last = 1.0;
        for k in 1..20 {
            let t = step_transmission_1d(1.0, 2.0, 0.5 * k as f64).unwrap().t.norm();
            assert!(t < last);
            last = t;
        }
        assert!(last < 1e-3);
    }

    #[test]
    fn oracle_phase_grows_with_length() {
        let v = effective_step_height(10.0).unwrap();
        let mut last = 0.0;
        for k in 1..=40 {
            let ph = step_transmission_1d(1.0, v, 5.0 * k as f64).unwrap().phase;
            assert!(ph > last);
            last = ph;
        }
        // Far beyond a quarter turn: unwrapping was needed.
        assert!(last > 2.0 * PI);
    }
}
