//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use ferroflow_core::config::{Preset, Scale};
use ferroflow_core::fem::{build_spaces, gradient_into, interpolate_scalar, l2_inner, DirichletSides, FEFunction, FESpace, SpaceBundle};
use ferroflow_core::forms::{a_h, b_h, b_h_m, cell_integral, curl_h, dg_seminorm};
use ferroflow_core::magnetics::{
    dipole_field, dipole_potential, potential_identity_defect, solve_potential, FieldSchedule, Gauge, Intensity,
    Placement, QuadField, ScheduledDipole,
};
use ferroflow_core::mesh::build_rect_mesh;
use ferroflow_core::residual::scheme_residuals;
use ferroflow_core::scheme::{MaterialParams, Mode, SourceSet, Stepper};
use ferroflow_core::transport::{PassiveScalar, ScalarStepper};
use ferroflow_core::{convergence_study, run, RunOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = (bool, String);

fn report(n: usize, title: &str, v: &Verdict) {
    let line = format!("criterion {n} [{title}]: {} | {}\n", if v.0 { "PASS" } else { "FAIL" }, v.1);
    // bypasses the test harness capture so the lines always appear
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

fn bundle(n: usize) -> SpaceBundle {
    let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n).unwrap());
    build_spaces(mesh, 2, DirichletSides::ALL).unwrap()
}

fn random(space: &Arc<FESpace>, rng: &mut ChaCha8Rng, zero_trace: bool) -> FEFunction {
    let mut f = FEFunction::zeros(space);
    f.coeffs.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0));
    if zero_trace {
        f.apply_zero_trace();
    }
    f
}

/// `‖f‖ + |f|₁` with cellwise gradients.
fn broken_h1(f: &FEFunction) -> f64 {
    let nc = f.components();
    let v = cell_integral(&[f], |_, p| {
        (0..nc).map(|c| p[0].value[c].powi(2) + p[0].grad[c][0].powi(2) + p[0].grad[c][1].powi(2)).sum()
    })
    .unwrap();
    v.sqrt()
}

fn l2(f: &FEFunction) -> f64 {
    l2_inner(f, f).sqrt()
}

fn criterion_1() -> Verdict {
    let clock = Instant::now();
    let ns = Preset::validation_levels(Scale::Desk);
    let s = convergence_study(&ns, Preset::VALIDATION_T_FINAL, 2).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    let fmt = |v: &[f64]| v.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>().join("/");
    let ok = s.min_order() >= 1.8 && secs < 900.0;
    (
        ok,
        format!(
            "n = {ns:?}, orders u {} w {} m {} grad phi {}, min {:.3} (need >= 1.8), {secs:.0} s (limit 900 s)",
            fmt(&s.velocity_orders),
            fmt(&s.spin_orders),
            fmt(&s.magnetization_orders),
            fmt(&s.field_orders),
            s.min_order()
        ),
    )
}

fn criterion_2() -> Verdict {
    let cfg = Preset::Relaxation.config(Scale::Desk);
    let out = run(&cfg, None).unwrap();
    let law = out.energy_law.as_ref().expect("energy law checked on the relaxation preset");
    let ok = law.passed && out.seconds < 60.0 && cfg.mesh.nx == 16 && out.steps == 50;
    (
        ok,
        format!(
            "{}x{} mesh, {} steps, min slack {:.2e} >= -{:.1e}, telescoped {:.6e} <= {:.6e}, {:.1} s",
            cfg.mesh.nx, cfg.mesh.ny, out.steps, law.min_slack, law.tolerance, law.telescoped_lhs, law.telescoped_rhs,
            out.seconds
        ),
    )
}

fn criterion_3() -> Verdict {
    let b = bundle(4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let u = random(&b.u, &mut rng, true);
        let v = random(&b.u, &mut rng, false);
        let w = random(&b.w, &mut rng, false);
        let z = random(&b.m, &mut rng, false);
        let hu = broken_h1(&u);
        worst = worst.max(b_h(&u, &v, &v).unwrap().abs() / (hu * broken_h1(&v) * l2(&v)));
        worst = worst.max(b_h(&u, &w, &w).unwrap().abs() / (hu * broken_h1(&w) * l2(&w)));
        let zs = broken_h1(&z) + dg_seminorm(&z).unwrap();
        worst = worst.max(b_h_m(&u, &z, &z).unwrap().abs() / (hu * zs * l2(&z)));
    }
    (worst <= 1e-12, format!("50 random triples on 4x4, worst relative |b(U,V,V)| = {worst:.2e} (limit 1e-12)"))
}

fn criterion_4() -> Verdict {
    let b = bundle(4);
    let eta = MaterialParams::default().penalty(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut constant_worst = 0.0f64;
    let mut pairing_worst = 0.0f64;
    let mut c_stab = f64::INFINITY;
    for _ in 0..100 {
        let (cx, cy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let mut k = FEFunction::zeros(&b.m);
        let ns = b.m.n_scalar();
        k.coeffs[..ns].iter_mut().for_each(|v| *v = cx);
        k.coeffs[ns..].iter_mut().for_each(|v| *v = cy);
        let z = random(&b.m, &mut rng, false);
        let zs = dg_seminorm(&z).unwrap() + l2(&z);
        constant_worst = constant_worst.max(a_h(&k, &z, eta).unwrap().abs() / (l2(&k) * zs));

        let m = random(&b.m, &mut rng, false);
        let g = gradient_into(&random(&b.x, &mut rng, false), &b.m);
        let scale = (a_h(&m, &m, eta).unwrap() * a_h(&g, &g, eta).unwrap()).sqrt();
        pairing_worst = pairing_worst.max(curl_h(&m, &g, eta).unwrap().abs() / scale);

        let semi = dg_seminorm(&m).unwrap();
        c_stab = c_stab.min(a_h(&m, &m, eta).unwrap() / (semi * semi));
    }
    let ok = constant_worst <= 1e-12 && pairing_worst <= 1e-12 && c_stab > 0.0;
    (
        ok,
        format!(
            "eta = {eta}: |a_h(const, Z)| {constant_worst:.1e}, |curl_h(M, grad Phi)| {pairing_worst:.1e} (limits 1e-12), \
             min a_h(M,M)/|M|_a^2 over 100 samples = {c_stab:.3}"
        ),
    )
}

fn criterion_5() -> Verdict {
    // identity after potential solves: random data, then every step of a run
    let b = bundle(6);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut solves = 0;
    for _ in 0..10 {
        let m = random(&b.m, &mut rng, false);
        let (xs, d) = ([rng.gen_range(-1.0..2.0), -rng.gen_range(0.2..1.0)], [rng.gen_range(-1.0..1.0), 1.0]);
        let ha = QuadField::sample(&b.mesh, &b.x.tables, |x| dipole_field(x, xs, d, 3.0).unwrap());
        let (_, h) = solve_potential(&b, &m, &ha, Gauge::PinAndProject).unwrap();
        let (defect, scale) = potential_identity_defect(&h, &m, &ha);
        worst = worst.max(defect.abs() / scale);
        solves += 1;
    }
    let cfg = Preset::SpinningMagnet.config(Scale::Desk);
    let b16 = bundle(8);
    let mut st =
        Stepper::new(b16.clone(), cfg.params.clone(), cfg.field.clone(), SourceSet::none(), Mode::Coupled).unwrap();
    let mut prev = st.initialize(|_| [0.0; 2], |_| 0.0, |_| [0.0; 2]);
    for _ in 0..20 {
        let (next, _) = st.step(&prev, 0.04).unwrap();
        let (defect, scale) = potential_identity_defect(&next.h, &next.m, &st.sample_field(next.t));
        worst = worst.max(defect.abs() / scale.max(f64::MIN_POSITIVE));
        solves += 1;
        prev = next;
    }

    // harmonicity of dipole fields by fourth-order central differences
    let mut harm = 0.0f64;
    let e = 1e-4;
    let d4 = |f: &dyn Fn(f64) -> f64| (8.0 * (f(e) - f(-e)) - (f(2.0 * e) - f(-2.0 * e))) / (12.0 * e);
    for _ in 0..100 {
        let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let xs = [rng.gen_range(-0.5..1.5), -rng.gen_range(0.1..0.6)];
        let a = rng.gen_range(-1.0..1.0f64) * std::f64::consts::PI;
        let d = [a.cos(), a.sin()];
        let h = |dx: f64, dy: f64| dipole_field([x[0] + dx, x[1] + dy], xs, d, 1.0).unwrap();
        let dhx_dx = d4(&|s| h(s, 0.0)[0]);
        let dhy_dy = d4(&|s| h(0.0, s)[1]);
        let dhy_dx = d4(&|s| h(s, 0.0)[1]);
        let dhx_dy = d4(&|s| h(0.0, s)[0]);
        let size = dhx_dx.abs() + dhy_dy.abs() + dhy_dx.abs() + dhx_dy.abs();
        let div = (dhx_dx + dhy_dy).abs() / size;
        let curl = (dhy_dx - dhx_dy).abs() / size;
        let phi = |dx: f64, dy: f64| dipole_potential([x[0] + dx, x[1] + dy], xs, d).unwrap();
        let h0 = h(0.0, 0.0);
        let grad = [d4(&|s| phi(s, 0.0)), d4(&|s| phi(0.0, s))];
        let gradient = ((grad[0] - h0[0]).powi(2) + (grad[1] - h0[1]).powi(2)).sqrt() / h0[0].hypot(h0[1]);
        harm = harm.max(div).max(curl).max(gradient);
    }
    let ok = worst <= 1e-10 && harm <= 1e-6;
    (
        ok,
        format!(
            "identity defect over {solves} solves {worst:.1e} (limit 1e-10), \
             dipole div/curl/gradient FD at 100 points {harm:.1e} (limit 1e-6)"
        ),
    )
}

/// Worst relative residual over three steps with the given Picard tolerance.
fn fixed_point_residual(b: &SpaceBundle, mode: Mode, tolerance: f64) -> f64 {
    let sched = FieldSchedule {
        dipoles: vec![ScheduledDipole {
            placement: Placement::Fixed { position: [0.3, -0.3], direction: [0.6, 0.8] },
            intensity: Intensity::Ramp { start: 0.0, end: 1.0, from: 0.0, to: 8.0 },
        }],
    };
    let p = MaterialParams { relaxation_time: 0.05, ..Default::default() };
    let mut st = Stepper::new(b.clone(), p.clone(), sched.clone(), SourceSet::none(), mode).unwrap();
    st.picard.tolerance = tolerance;
    let mut prev = st.initialize(|x| [x[1] * (1.0 - x[1]) * x[0] * (1.0 - x[0]), 0.0], |_| 0.0, |x| [x[0], 0.2]);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let (next, _) = st.step(&prev, 0.1).unwrap();
        let r = scheme_residuals(b, &p, 0.1, &prev, &next, &|x| sched.applied_field(next.t, x), mode == Mode::Coupled)
            .unwrap();
        worst = worst.max(r.worst_relative());
        prev = next;
    }
    worst
}

fn criterion_6() -> Verdict {
    // The fixed point is approximated by iterating to 1e-12; the iterate
    // returned at the default stopping tolerance is reported alongside.
    let b = bundle(4);
    let default_tol = ferroflow_core::PicardSettings::default().tolerance;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for mode in [Mode::Coupled, Mode::Simplified] {
        let converged = fixed_point_residual(&b, mode, 1e-12);
        let stopped = fixed_point_residual(&b, mode, default_tol);
        detail.push(format!("{mode:?} {converged:.1e} (at the default stop {default_tol:.0e}: {stopped:.1e})"));
        worst = worst.max(converged);
    }
    (
        worst <= 1e-9,
        format!("worst relative residual of all equations at the fixed point: {} (limit 1e-9)", detail.join(", ")),
    )
}

fn criterion_7() -> Verdict {
    let mut cfg = Preset::Relaxation.config(Scale::Desk);
    cfg.mode = Mode::Simplified;
    cfg.name = "relaxation_simplified".into();
    let out = run(&cfg, None).unwrap();
    let m = out
        .monitors
        .iter()
        .find(|m| m.name == "prescribed-field stability bound")
        .expect("bound monitored in simplified mode");
    (m.passed, format!("{}x{}, {} steps, constant dipole: {}", cfg.mesh.nx, cfg.mesh.ny, out.steps, m.detail))
}

fn monitor<'a>(o: &'a RunOutcome, name: &str) -> &'a ferroflow_core::Monitor {
    o.monitors.iter().find(|m| m.name == name).unwrap_or_else(|| panic!("{name} not monitored"))
}

fn criterion_8(stirring: &[RunOutcome]) -> Verdict {
    let spin = run(&Preset::SpinningMagnet.config(Scale::Desk), None).unwrap();
    let pump = run(&Preset::Pumping.config(Scale::Desk), None).unwrap();
    let a = monitor(&spin, "positive mean spin");
    let flux = monitor(&pump, "positive exit flux");
    let pattern = monitor(&pump, "mid-channel spin pattern");
    let mix = |o: &RunOutcome| o.observations.last().and_then(|ob| ob.mixing).expect("scalar enabled");
    let (alt, wave) = (mix(&stirring[0]), mix(&stirring[1]));
    let frequency = match &Preset::StirringWave.config(Scale::Desk).field.dipoles[0].intensity {
        Intensity::TravelingPulse { frequency, .. } => *frequency,
        other => panic!("unexpected stirring law {other:?}"),
    };
    let periods = stirring[1].observations.last().unwrap().t * frequency;
    let c = wave < alt && periods >= 20.0 - 1e-9;
    let ok = a.passed && flux.passed && pattern.passed && c;
    (
        ok,
        format!(
            "(a) {} {}; (b) {} {}; {} {}; (c) {} after {periods:.0} periods: wave {wave:.5} < alternating {alt:.5}",
            if a.passed { "ok" } else { "FAILED" },
            a.detail,
            if flux.passed { "ok" } else { "FAILED" },
            flux.detail,
            if pattern.passed { "ok" } else { "FAILED" },
            pattern.detail,
            if c { "ok" } else { "FAILED" },
        ),
    )
}

fn criterion_9(stirring: &[RunOutcome]) -> Verdict {
    let mut worst = 0.0f64;
    for o in stirring {
        let masses: Vec<f64> = o.observations.iter().filter_map(|ob| ob.scalar_mass).collect();
        for w in masses.windows(2) {
            worst = worst.max((w[1] - w[0]).abs() / w[0].abs());
        }
    }
    // a separate rotating flow that is not discretely solenoidal
    let b = bundle(8);
    let u = ferroflow_core::fem::interpolate_vector(&b.u, |x| {
        let (sx, sy) = ((std::f64::consts::PI * x[0]).sin(), (std::f64::consts::PI * x[1]).sin());
        [sx * sx * (2.0 * std::f64::consts::PI * x[1]).sin(), -sy * sy * (2.0 * std::f64::consts::PI * x[0]).sin()]
    });
    let mut c = PassiveScalar::bottom_strip(&b.x, 0.2, 1e-3).unwrap();
    let mut st = ScalarStepper::new(&b.x);
    for _ in 0..20 {
        let next = st.step(&c, &u, 0.05).unwrap();
        worst = worst.max((next.mass() - c.mass()).abs() / c.mass().abs());
        c = next;
    }

    let b16 = bundle(16);
    let (alpha, dt) = (0.01, 0.5);
    let pi = std::f64::consts::PI;
    let c0 = interpolate_scalar(&b16.x, |x| (pi * x[0]).cos() * (pi * x[1]).cos());
    let c1 = ScalarStepper::new(&b16.x)
        .step(&PassiveScalar::new(c0.clone(), alpha).unwrap(), &FEFunction::zeros(&b16.u), dt)
        .unwrap()
        .c;
    let observed = l2_inner(&c1, &c0) / l2_inner(&c0, &c0);
    let expected = 1.0 / (1.0 + 2.0 * pi * pi * alpha * dt);
    let rel = (observed / expected - 1.0).abs();
    let ok = worst <= 1e-10 && rel < 0.02;
    (
        ok,
        format!(
            "worst per-step relative mass change {worst:.1e} (limit 1e-10); heat decay at h = 1/16: \
             {observed:.5} vs {expected:.5}, off by {:.2}% (limit 2%)",
            100.0 * rel
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let mut record = |n: usize, title: &str, v: Verdict| {
        report(n, title, &v);
        results.push((n, v.0));
    };
    record(1, "manufactured convergence", guarded(criterion_1));
    record(2, "discrete energy law", guarded(criterion_2));
    record(3, "skew-symmetry", guarded(criterion_3));
    record(4, "interior-penalty identities", guarded(criterion_4));
    record(5, "magnetostatics identities", guarded(criterion_5));
    record(6, "Picard fixed point", guarded(criterion_6));
    record(7, "prescribed-field stability", guarded(criterion_7));
    let stirring: Vec<RunOutcome> = [Preset::StirringAlternating, Preset::StirringWave]
        .iter()
        .filter_map(|p| run(&p.config(Scale::Desk), None).ok())
        .collect();
    if stirring.len() == 2 {
        record(8, "qualitative experiments", guarded(|| criterion_8(&stirring)));
        record(9, "passive scalar", guarded(|| criterion_9(&stirring)));
    } else {
        record(8, "qualitative experiments", (false, "stirring runs failed".into()));
        record(9, "passive scalar", (false, "stirring runs failed".into()));
    }
    let failed: Vec<usize> = results.iter().filter(|r| !r.1).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
