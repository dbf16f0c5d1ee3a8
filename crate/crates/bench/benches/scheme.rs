use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ferroflow_bench::{unit_square, warmed_up};
use ferroflow_core::assembly::MagneticDrive;
use ferroflow_core::fem::{interpolate_scalar, interpolate_vector};
use ferroflow_core::magnetics::{solve_potential_with, Gauge, PotentialSolver, QuadField};
use ferroflow_core::scheme::Mode;
use ferroflow_core::transport::{PassiveScalar, ScalarStepper};

fn assembly(c: &mut Criterion) {
    let mut g = c.benchmark_group("assemble");
    for n in [8, 16] {
        let (st, s) = warmed_up(n, Mode::Coupled);
        let p = st.params.clone();
        let h_a = st.sample_field(s.t);
        g.bench_with_input(BenchmarkId::new("magnetization", n), &n, |b, _| {
            b.iter(|| {
                let drive = MagneticDrive::Potential { h_a: &h_a, extra: None };
                st.assembler.magnetization_system(&p, 0.02, &s.u, &s.w, &s.m, &drive, None)
            })
        });
        g.bench_with_input(BenchmarkId::new("flow", n), &n, |b, _| {
            b.iter(|| st.assembler.flow_system(&p, 0.02, &s.u, &s.u, &s.w, &s.m, &s.h, None, None))
        });
    }
    g.finish();
}

fn steps(c: &mut Criterion) {
    let mut g = c.benchmark_group("step");
    g.sample_size(10);
    for mode in [Mode::Coupled, Mode::Simplified] {
        let (mut st, s) = warmed_up(8, mode);
        g.bench_function(format!("{mode:?}/8"), |b| b.iter(|| st.step(&s, 0.02).expect("converges")));
    }
    g.finish();
}

fn potential(c: &mut Criterion) {
    let s = unit_square(16);
    let solver = PotentialSolver::new(&s.x, Gauge::PinAndProject).expect("nonsingular");
    let m = interpolate_vector(&s.m, |x| [x[1], x[0] * x[0]]);
    let h_a = QuadField::sample(&s.mesh, &s.x.tables, |x| [1.0, x[0]]);
    c.bench_function("potential/16", |b| b.iter(|| solve_potential_with(&solver, &s, &m, &h_a)));
}

fn scalar(c: &mut Criterion) {
    let s = unit_square(16);
    let u = interpolate_vector(&s.u, |x| [x[1] - 0.5, 0.5 - x[0]]);
    let mut stepper = ScalarStepper::new(&s.x);
    let c0 = PassiveScalar::new(interpolate_scalar(&s.x, |x| x[1]), 1e-3).expect("positive diffusivity");
    c.bench_function("scalar_step/16", |b| b.iter(|| stepper.step(&c0, &u, 0.01).expect("solves")));
}

criterion_group!(benches, assembly, steps, potential, scalar);
criterion_main!(benches);
