use chanphase::geometry::{wall_mask, ChannelGeometry};
use chanphase::grid::init_gaussian;
use chanphase::tridiag::TridiagFactors;
use chanphase::{Grid, Medium, PacketSpec, Propagator, StepperConfig};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

fn packet() -> PacketSpec {
    PacketSpec {
        xc: 24.0,
        yc: 32.0,
        sigma_x: 5.0,
        sigma_y: 5.0,
        k0: 1.0,
    }
}

fn adi_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("adi_step");
    for &(nx, ny) in &[(256usize, 256usize), (1200, 400)] {
        let grid = Grid::new(nx, ny, 0.25, 0.25, 0.0, 0.0).unwrap();
        let geom = ChannelGeometry {
            x_in: 48.0,
            ell: 8.0,
            a: 8.0,
            y_center: 32.0,
        };
        let medium = Medium {
            potential: None,
            mask: Some(wall_mask(&grid, &geom).unwrap()),
        };
        let prop = Propagator::new(&grid, &medium, &StepperConfig::default_for(&grid)).unwrap();
        let psi = init_gaussian(&grid, &packet()).unwrap();
        let mut ev = prop.evolve(&psi).unwrap();
        group.bench_function(BenchmarkId::from_parameter(format!("{nx}x{ny}")), |b| {
            b.iter(|| ev.advance(black_box(1)).unwrap())
        });
    }
    group.finish();
}

fn thomas_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("thomas_solve");
    for &n in &[400usize, 1200, 4096] {
        let off = vec![Complex64::new(-0.5, 0.0); n];
        let diag = vec![Complex64::new(1.0, 0.3); n];
        let pinned = vec![false; n];
        let factors = TridiagFactors::new(&off, &diag, &off, &pinned);
        let rhs: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, k as f64 * 0.1)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &rhs, |b, rhs| {
            b.iter_batched_ref(
                || rhs.clone(),
                |v| factors.solve(black_box(v)),
                criterion::BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, adi_step, thomas_solve);
criterion_main!(benches);
