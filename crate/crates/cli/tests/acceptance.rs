//! End-to-end acceptance checks. Each test prints one PASS/FAIL line with
//! the measured values to stderr, bypassing the test harness capture, and
//! then asserts the same verdict.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use chanphase::analytic::{reduced_momentum_exact, ChannelMomentum};
use chanphase::config::{ModelConfig, ModelKind};
use chanphase::experiments::{
    self, reflection_duration, reflection_extent, run_energy_sweep, run_model_comparison, run_reflection, run_transit,
    widen_grid, SweepAxis,
};
use chanphase::geometry::{wall_mask, ChannelGeometry};
use chanphase::grid::{init_gaussian, inner_product, norm_squared, variance_x};
use chanphase::propagator::{default_dt, propagate};
use chanphase::{parse_config, ComplexField, Grid, Medium, PacketSpec, Propagator, RunConfig, RunResult, StepperConfig};
use num_complex::Complex64;

const P: f64 = 1.0;
const A: f64 = 10.0;
const ELL: f64 = 50.0;
const P_REDUCED: f64 = 0.949368;
const P_REDUCED_APPROX: f64 = 0.950652;
const PHASE_EXACT: f64 = 2.53160;
const PHASE_APPROX: f64 = 2.46740;

fn verdict(criterion: u32, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {criterion}: {tag} {detail}");
}

fn rel(value: f64, target: f64) -> f64 {
    (value - target).abs() / target.abs()
}

fn default_config() -> RunConfig {
    parse_config("{}").unwrap()
}

fn default_transit() -> &'static RunResult {
    static RESULT: OnceLock<RunResult> = OnceLock::new();
    RESULT.get_or_init(|| run_transit(&default_config(), &experiments::silent).unwrap())
}

fn coarse(mut cfg: RunConfig) -> RunConfig {
    cfg.grid.dx = 0.5;
    cfg.grid.dy = 0.5;
    cfg.grid.nx /= 2;
    cfg.grid.ny /= 2;
    cfg
}

fn smoothed(mut cfg: RunConfig) -> RunConfig {
    cfg.model = ModelConfig {
        kind: ModelKind::Smoothed,
        v0: None,
        w: Some(1.0),
    };
    cfg
}

#[test]
fn criterion_1_momentum_plateau_and_recovery() {
    let r = default_transit();
    let plateau = r.p_plateau.expect("plateau reading");
    let all_modes = r.p_plateau_all_modes.unwrap_or(f64::NAN);
    let plateau_ok = rel(plateau, P_REDUCED) <= 0.02;
    let exit_ok = rel(r.p_exit, P) <= 0.01;
    verdict(
        1,
        plateau_ok && exit_ok,
        &format!(
            "p_plateau={plateau:.6} (target {P_REDUCED}, rel {:.4}, tol 0.02; all modes {all_modes:.6}) \
             p_exit={:.6} (target {P}, rel {:.4}, tol 0.01)",
            rel(plateau, P_REDUCED),
            r.p_exit,
            rel(r.p_exit, P)
        ),
    );
    assert!(plateau_ok && exit_ok);
}

#[test]
fn criterion_2_phase_shift() {
    let r = default_transit();
    let sim = r.delta_phi_sim.expect("phase reading");
    let oracle = r.delta_phi_oracle_1d.expect("1D oracle");
    let exact = r.delta_phi_exact_mode.expect("exact-mode phase");
    // A slab with interface reflectivity r shifts the transmitted phase by
    // at most asin(r^2) relative to the reflection-free value.
    let q = match reduced_momentum_exact(P, A).unwrap() {
        ChannelMomentum::Propagating(q) => q,
        other => panic!("below cutoff: {other:?}"),
    };
    let refl = (P - q) / (P + q);
    let fp_bound = (refl * refl).asin();
    let fp_residual = (oracle - exact).abs();

    let sim_ok = rel(sim, PHASE_EXACT) <= 0.05;
    let approx_ok = rel(PHASE_APPROX, PHASE_EXACT) <= 0.05;
    let oracle_ok = rel(sim, oracle) <= 0.05 && fp_residual <= fp_bound;
    verdict(
        2,
        sim_ok && approx_ok && oracle_ok,
        &format!(
            "dphi_sim={sim:.5} (target {PHASE_EXACT}, rel {:.4}, tol 0.05; overlap {:.3}) \
             approx={PHASE_APPROX} (rel {:.4}) oracle_1d={oracle:.5} (sim rel {:.4}) \
             fabry_perot_residual={fp_residual:.2e} (bound {fp_bound:.2e})",
            rel(sim, PHASE_EXACT),
            r.overlap_magnitude.unwrap_or(f64::NAN),
            rel(PHASE_APPROX, PHASE_EXACT),
            rel(sim, oracle)
        ),
    );
    assert!(sim_ok && approx_ok && oracle_ok);
}

#[test]
fn criterion_3_ehrenfest_balance() {
    let hard_fine = default_transit().ehrenfest_residual.expect("hard-wall residual");
    let hard_coarse = run_transit(&coarse(default_config()), &experiments::silent)
        .unwrap()
        .ehrenfest_residual
        .expect("hard-wall residual");
    let soft_fine = run_transit(&smoothed(default_config()), &experiments::silent)
        .unwrap()
        .ehrenfest_residual
        .expect("smoothed residual");
    let soft_coarse = run_transit(&coarse(smoothed(default_config())), &experiments::silent)
        .unwrap()
        .ehrenfest_residual
        .expect("smoothed residual");
    let hard_ok = hard_fine <= 0.05 && hard_fine < hard_coarse;
    let soft_ok = soft_fine <= 0.02 && soft_fine < soft_coarse;
    verdict(
        3,
        hard_ok && soft_ok,
        &format!(
            "hard-wall residual {hard_coarse:.2e} (dx 0.5) -> {hard_fine:.2e} (dx 0.25), tol 0.05; \
             smoothed w=1 residual {soft_coarse:.2e} (dx 0.5) -> {soft_fine:.2e} (dx 0.25), tol 0.02"
        ),
    );
    assert!(hard_ok && soft_ok);
}

fn reflection_config(d: f64) -> RunConfig {
    let ny = (8.0 / d) as usize;
    let nx = (72.0 / d) as usize + 1;
    let cfg = parse_config(&format!(
        r#"{{
            "grid": {{"nx": {nx}, "ny": {ny}, "dx": {d}, "dy": {d}, "x0": 10, "y0": 0}},
            "packet": {{"xc": 40, "yc": {yc}, "sx": 6, "sy": 0.75, "k0": {P}}},
            "geometry": {{"x_in": 70, "ell": 10, "a": 0, "y_center": 4}}
        }}"#,
        yc = 0.5 * (ny - 1) as f64 * d
    ))
    .unwrap();
    let (packet, geom) = (cfg.packet_spec(), cfg.channel());
    widen_grid(&cfg, reflection_extent(&packet, &geom, reflection_duration(&packet, &geom)))
}

#[test]
fn criterion_4_reflection_budget() {
    let fine = run_reflection(&reflection_config(0.125), &experiments::silent).unwrap();
    let default = run_reflection(&reflection_config(0.25), &experiments::silent).unwrap();
    let target = -2.0 * P;
    let net = fine.momentum_budget.net;
    let pass = rel(net, target) <= 0.01;
    verdict(
        4,
        pass,
        &format!(
            "net impulse {net:.5} at dx 0.125 (target {target}, rel {:.4}, tol 0.01; \
             dx 0.25 gives {:.5}, rel {:.4}; measured momentum change {:.5})",
            rel(net, target),
            default.momentum_budget.net,
            rel(default.momentum_budget.net, target),
            fine.momentum_change
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_5_energy_length_width_scaling() {
    let report = run_energy_sweep(&default_config(), &experiments::silent).unwrap();
    let mut pass = report.errors.is_empty();
    let mut parts = Vec::new();
    for axis in [SweepAxis::Momentum, SweepAxis::Length, SweepAxis::Width] {
        let table = report.table(axis).expect("sweep table");
        let expected = axis.expected_exponent();
        let got = table.exponent_sim;
        let ok = got.is_some_and(|e| (e - expected).abs() <= 0.05);
        pass &= ok;
        parts.push(format!(
            "{}: exponent {} (expected {expected}, tol 0.05; exact-mode {})",
            axis.name(),
            got.map_or("n/a".into(), |e| format!("{e:.4}")),
            table.exponent_exact_mode.map_or("n/a".into(), |e| format!("{e:.4}"))
        ));
    }
    if !report.errors.is_empty() {
        parts.push(format!("member errors: {}", report.errors.join("; ")));
    }
    verdict(5, pass, &parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_model_independence() {
    let cmp = run_model_comparison(&default_config(), &experiments::silent).unwrap();
    let entry = cmp.entry_spread.unwrap_or(f64::INFINITY);
    let phase = cmp.phase_spread.unwrap_or(f64::INFINITY);
    let pass = entry <= 0.03 && phase <= 0.03;
    let rows: Vec<String> = cmp
        .rows
        .iter()
        .map(|r| match &r.error {
            Some(e) => format!("{} error {e}", r.label),
            None => format!(
                "{} entry {:.5} dphi {:.5}",
                r.label,
                r.entry_impulse.unwrap_or(f64::NAN),
                r.delta_phi_sim.unwrap_or(f64::NAN)
            ),
        })
        .collect();
    verdict(
        6,
        pass,
        &format!(
            "entry spread {entry:.4}, phase spread {phase:.4} (tol 0.03); stiff step phase change {}; [{}]",
            cmp.stiff_phase_change.map_or("n/a".into(), |v| format!("{v:.4}")),
            rows.join(", ")
        ),
    );
    assert!(pass);
}

fn channel_state(grid: &Grid, geom: &ChannelGeometry, spec: &PacketSpec) -> (Medium, ComplexField) {
    let mask = wall_mask(grid, geom).unwrap();
    let psi = init_gaussian(grid, spec).unwrap();
    let data = psi
        .as_slice()
        .iter()
        .zip(mask.as_slice())
        .map(|(&z, &m)| if m { Complex64::new(0.0, 0.0) } else { z })
        .collect();
    let psi = ComplexField::from_vec(*grid, data).unwrap().normalized().unwrap();
    let medium = Medium {
        potential: None,
        mask: Some(mask),
    };
    (medium, psi)
}

fn unitarity_and_reversibility() -> (f64, f64) {
    let grid = Grid::new(128, 64, 0.25, 0.25, 0.0, 0.0).unwrap();
    let geom = ChannelGeometry {
        x_in: 18.0,
        ell: 6.0,
        a: 4.0,
        y_center: 8.0,
    };
    let spec = PacketSpec {
        xc: 9.0,
        yc: 8.0,
        sigma_x: 2.0,
        sigma_y: 1.5,
        k0: 1.5,
    };
    let (medium, psi) = channel_state(&grid, &geom, &spec);
    let dt = default_dt(&grid);
    let fwd = Propagator::new(&grid, &medium, &StepperConfig { dt, cap: None }).unwrap();
    let bwd = Propagator::new(&grid, &medium, &StepperConfig { dt: -dt, cap: None }).unwrap();
    let there = propagate(&fwd, &psi, 10_000, 10_000, &mut []).unwrap();
    let drift = (norm_squared(&there) - 1.0).abs();
    let back = propagate(&bwd, &there, 10_000, 10_000, &mut []).unwrap();
    (drift, inner_product(&back, &psi).unwrap().norm())
}

/// Relative error of the free-packet width against
/// `sigma(t) = sigma0 (1 + (t / 2 sigma0^2)^2)^{1/2}`.
fn dispersion_error() -> f64 {
    let grid = Grid::new(320, 320, 0.25, 0.25, -40.0, -40.0).unwrap();
    let sigma0 = 2.0;
    let spec = PacketSpec {
        xc: 0.0,
        yc: 0.0,
        sigma_x: sigma0,
        sigma_y: sigma0,
        k0: 0.0,
    };
    let cfg = StepperConfig::default_for(&grid);
    let prop = Propagator::new(&grid, &Medium::free(), &cfg).unwrap();
    let n = 1280;
    let out = propagate(&prop, &init_gaussian(&grid, &spec).unwrap(), n, n, &mut []).unwrap();
    let expected = experiments::spread(sigma0, n as f64 * cfg.dt);
    rel(variance_x(&out).unwrap().sqrt(), expected)
}

/// Phase-insensitive L2 distance between normalized fields.
fn distance(a: &ComplexField, b: &ComplexField) -> f64 {
    (2.0 * (1.0 - inner_product(a, b).unwrap().norm())).max(0.0).sqrt()
}

const CONVERGENCE_PACKET: PacketSpec = PacketSpec {
    xc: -6.0,
    yc: 0.0,
    sigma_x: 1.5,
    sigma_y: 1.5,
    k0: 1.5,
};

/// Error ratios under successive dt halvings, through a channel.
fn dt_ratios() -> Vec<f64> {
    let grid = Grid::new(192, 96, 0.25, 0.25, -24.0, -12.0).unwrap();
    let geom = ChannelGeometry {
        x_in: -1.0,
        ell: 4.0,
        a: 4.0,
        y_center: 0.0,
    };
    let (medium, psi) = channel_state(&grid, &geom, &CONVERGENCE_PACKET);
    let t_end = 4.0;
    let run = |dt: f64| {
        let prop = Propagator::new(&grid, &medium, &StepperConfig { dt, cap: None }).unwrap();
        let n = (t_end / dt).round() as usize;
        propagate(&prop, &psi, n, n, &mut []).unwrap()
    };
    let reference = run(0.01 / 16.0);
    let errors: Vec<f64> = [0.01, 0.005, 0.0025].iter().map(|&dt| distance(&run(dt), &reference)).collect();
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

/// Continuum free packet in 1D, up to a constant factor.
fn free_packet_1d(x: f64, x0: f64, s: f64, k: f64, t: f64) -> Complex64 {
    let alpha = Complex64::new(1.0, t / (2.0 * s * s));
    let u = x - x0 - k * t;
    (-(u * u) / (4.0 * s * s * alpha) + Complex64::new(0.0, k * (x - x0 - 0.5 * k * t))).exp()
}

/// Error ratios against the continuum solution under successive dx halvings.
fn dx_ratios() -> Vec<f64> {
    let t_end = 4.0;
    let s = CONVERGENCE_PACKET;
    let error_at = |d: f64| {
        let n = |len: f64| (len / d).round() as usize;
        let grid = Grid::new(n(48.0), n(24.0), d, d, -24.0, -12.0).unwrap();
        let dt = 0.1 * d * d;
        let prop = Propagator::new(&grid, &Medium::free(), &StepperConfig { dt, cap: None }).unwrap();
        let steps = (t_end / dt).round() as usize;
        let out = propagate(&prop, &init_gaussian(&grid, &s).unwrap(), steps, steps, &mut []).unwrap();
        let t = steps as f64 * dt;
        let exact = ComplexField::from_fn(grid, move |x, y| {
            free_packet_1d(x, s.xc, s.sigma_x, s.k0, t) * free_packet_1d(y, s.yc, s.sigma_y, 0.0, t)
        })
        .unwrap()
        .normalized()
        .unwrap();
        distance(&out, &exact)
    };
    let errors: Vec<f64> = [0.5, 0.25, 0.125].iter().map(|&d| error_at(d)).collect();
    errors.windows(2).map(|w| w[0] / w[1]).collect()
}

const SMALL_TRANSIT: &str = r#"{
    "grid": {"nx": 384, "ny": 96, "dx": 0.5, "dy": 0.5, "x0": -52, "y0": 0},
    "packet": {"xc": 20, "yc": 24, "sx": 5, "sy": 5, "k0": 1.0},
    "geometry": {"x_in": 42, "ell": 16, "a": 8, "y_center": 24},
    "stepper": {"sample_stride": 8},
    "experiment": {"p_list": [0.9, 1.0, 1.2, 1.5, 2.0], "ell_list": [12, 16], "a_list": [8, 10], "edge_widths": [2]}
}"#;

fn output_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let mut bytes = fs::read(&p).unwrap();
                if p.file_name().is_some_and(|n| n == "manifest.json") {
                    let text = String::from_utf8(bytes).unwrap();
                    let kept: Vec<&str> = text.lines().filter(|l| !l.contains("wall_clock_seconds")).collect();
                    bytes = kept.join("\n").into_bytes();
                }
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), bytes));
            }
        }
    }
    out.sort();
    out
}

/// Runs every subcommand with 1 and 4 worker threads and returns the
/// subcommands whose output trees differ.
fn thread_dependent_outputs() -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    fs::write(&cfg, SMALL_TRANSIT).unwrap();
    let mut differing = Vec::new();
    for cmd in ["transit", "sweep", "model-compare"] {
        let trees: Vec<_> = ["1", "4"]
            .iter()
            .map(|threads| {
                let out = dir.path().join(format!("{cmd}-{threads}"));
                let status = Command::new(env!("CARGO_BIN_EXE_chanphase"))
                    .args([cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
                    .args(["--quiet", "--threads", threads])
                    .status()
                    .unwrap();
                assert!(status.success(), "{cmd} with {threads} threads failed");
                output_files(&out)
            })
            .collect();
        if trees[0] != trees[1] {
            differing.push(cmd.to_string());
        }
    }
    differing
}

#[test]
fn criterion_7_numerics() {
    let (drift, fidelity) = unitarity_and_reversibility();
    let dispersion = dispersion_error();
    let dt = dt_ratios();
    let dx = dx_ratios();
    let differing = thread_dependent_outputs();
    let second_order = |r: &[f64]| r.iter().all(|x| (3.5..=4.6).contains(x));
    let checks = [
        drift <= 1e-9,
        fidelity > 1.0 - 1e-9,
        dispersion <= 0.005,
        second_order(&dt),
        second_order(&dx),
        differing.is_empty(),
    ];
    let pass = checks.iter().all(|&c| c);
    verdict(
        7,
        pass,
        &format!(
            "norm drift {drift:.2e} over 1e4 steps (tol 1e-9); reversibility 1-fidelity {:.2e} (tol 1e-9); \
             dispersion rel {dispersion:.2e} (tol 5e-3); dt halving ratios {dt:.3?}; dx halving ratios {dx:.3?} \
             (second order: 3.5..4.6); thread-dependent outputs {differing:?}",
            1.0 - fidelity
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_8_oracle_values() {
    let out = Command::new(env!("CARGO_BIN_EXE_chanphase"))
        .args(["oracle", "--p", &P.to_string(), "--a", &A.to_string(), "--ell", &ELL.to_string()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
    let values: Vec<f64> = text.lines().nth(1).unwrap().split_whitespace().map(|v| v.parse().unwrap()).collect();
    let column = |name: &str| values[header.iter().position(|h| *h == name).unwrap_or_else(|| panic!("{name} column"))];
    let six_figures = |v: f64| format!("{v:.5e}");
    let checks = [
        ("p'_exact", column("p'_exact"), P_REDUCED),
        ("p'_approx", column("p'_approx"), P_REDUCED_APPROX),
        ("dphi_exact", column("dphi_exact"), PHASE_EXACT),
        ("dphi_approx", column("dphi_approx"), PHASE_APPROX),
    ];
    let pass = checks.iter().all(|&(_, got, want)| six_figures(got) == six_figures(want));
    let parts: Vec<String> = checks
        .iter()
        .map(|&(name, got, want)| {
            let mark = if six_figures(got) == six_figures(want) { "ok" } else { "mismatch" };
            format!("{name} {got} vs {want} ({mark})")
        })
        .collect();
    verdict(8, pass, &parts.join("; "));
    assert!(pass);
}
