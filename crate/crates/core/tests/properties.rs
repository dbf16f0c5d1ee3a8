use std::sync::Arc;

use ferroflow_core::config::{parse_config, Preset, Scale, TimeConfig};
use ferroflow_core::diagnostics::{dissipation, energy, increment_energy};
use ferroflow_core::fem::{build_spaces, interpolate_scalar, DirichletSides, FEFunction, FESpace, SpaceBundle};
use ferroflow_core::forms::{a_h, b_h, b_h_m, dg_seminorm};
use ferroflow_core::magnetics::dipole_field;
use ferroflow_core::mesh::build_rect_mesh;
use ferroflow_core::scheme::{MaterialParams, State};
use ferroflow_core::transport::mixing_metric;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bundle(n: usize) -> SpaceBundle {
    let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n).unwrap());
    build_spaces(mesh, 2, DirichletSides::ALL).unwrap()
}

fn random(space: &Arc<FESpace>, seed: u64, zero_trace: bool) -> FEFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = FEFunction::zeros(space);
    f.coeffs.iter_mut().for_each(|c| *c = rng.gen_range(-1.0..1.0));
    if zero_trace {
        f.apply_zero_trace();
    }
    f
}

fn random_state(b: &SpaceBundle, seed: u64) -> State {
    let mut s = State::zeros(b);
    s.u = random(&b.u, seed, true);
    s.w = random(&b.w, seed + 1, true);
    s.m = random(&b.m, seed + 2, false);
    s.h = random(&b.m, seed + 3, false);
    s
}

fn scaled(s: &State, a: f64) -> State {
    let mut out = s.clone();
    for f in [&mut out.u, &mut out.w, &mut out.m, &mut out.h] {
        f.scale(a);
    }
    out
}

fn params() -> impl Strategy<Value = MaterialParams> {
    (0.1..2.0f64, 0.1..2.0f64, 0.1..2.0f64, 0.01..1.0f64, 0.0..3.0f64).prop_map(|(nu, nu_r, c1, tr, k)| {
        MaterialParams { nu, nu_r, c1, relaxation_time: tr, kappa0: k, ..Default::default() }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn convection_is_skew(seed in any::<u64>(), n in 1usize..4) {
        let b = bundle(n);
        let u = random(&b.u, seed, true);
        let v = random(&b.u, seed ^ 1, false);
        let z = random(&b.m, seed ^ 2, false);
        let w = random(&b.w, seed ^ 3, false);
        prop_assert!(b_h(&u, &v, &v).unwrap().abs() < 1e-11);
        prop_assert!(b_h(&u, &w, &w).unwrap().abs() < 1e-11);
        prop_assert!(b_h_m(&u, &z, &z).unwrap().abs() < 1e-11);
    }

    #[test]
    fn convection_is_antisymmetric_in_last_two(seed in any::<u64>()) {
        let b = bundle(2);
        let u = random(&b.u, seed, true);
        let (y, z) = (random(&b.m, seed ^ 5, false), random(&b.m, seed ^ 6, false));
        let lhs = b_h_m(&u, &y, &z).unwrap();
        let rhs = b_h_m(&u, &z, &y).unwrap();
        prop_assert!((lhs + rhs).abs() < 1e-11 * (1.0 + lhs.abs()));
    }

    #[test]
    fn penalty_form_kills_constants_and_is_symmetric(seed in any::<u64>(), cx in -5.0..5.0f64, cy in -5.0..5.0f64) {
        let b = bundle(2);
        let eta = MaterialParams::default().penalty(2);
        let ns = b.m.n_scalar();
        let mut k = FEFunction::zeros(&b.m);
        k.coeffs[..ns].iter_mut().for_each(|v| *v = cx);
        k.coeffs[ns..].iter_mut().for_each(|v| *v = cy);
        let (y, z) = (random(&b.m, seed, false), random(&b.m, seed ^ 9, false));
        prop_assert!(a_h(&k, &z, eta).unwrap().abs() < 1e-11);
        let (yz, zy) = (a_h(&y, &z, eta).unwrap(), a_h(&z, &y, eta).unwrap());
        prop_assert!((yz - zy).abs() < 1e-10 * (1.0 + yz.abs()));
        prop_assert!(dg_seminorm(&y).unwrap() > 0.0);
        prop_assert!(a_h(&y, &y, eta).unwrap() > 0.0);
    }

    #[test]
    fn energy_is_quadratic_and_dissipation_nonnegative(seed in any::<u64>(), a in -3.0..3.0f64, p in params()) {
        let b = bundle(2);
        let s = random_state(&b, seed);
        let t = scaled(&s, a);
        for with_field in [true, false] {
            let e = energy(&s, &p, with_field);
            prop_assert!(e >= 0.0);
            prop_assert!((energy(&t, &p, with_field) - a * a * e).abs() <= 1e-12 * (1.0 + e) * (1.0 + a * a));
            let d = dissipation(&s, &p, with_field);
            prop_assert!(d >= 0.0);
            prop_assert!((dissipation(&t, &p, with_field) - a * a * d).abs() <= 1e-11 * (1.0 + d) * (1.0 + a * a));
            prop_assert!(increment_energy(&s, &s, &p, with_field) == 0.0);
        }
    }

    #[test]
    fn mixing_is_shift_invariant_and_nonnegative(seed in any::<u64>(), shift in -10.0..10.0f64) {
        let b = bundle(3);
        let c = random(&b.x, seed, false);
        let mut d = c.clone();
        d.axpy(shift, &interpolate_scalar(&b.x, |_| 1.0));
        let (vc, vd) = (mixing_metric(&c), mixing_metric(&d));
        prop_assert!(vc >= 0.0);
        prop_assert!((vc - vd).abs() < 1e-10 * (1.0 + vc));
    }

    #[test]
    fn dipole_field_is_linear_in_strength(
        x in prop::array::uniform2(0.0..1.0f64),
        xs in prop::array::uniform2(-2.0..-0.1f64),
        angle in 0.0..6.28f64,
        alpha in -10.0..10.0f64,
    ) {
        let d = [angle.cos(), angle.sin()];
        let one = dipole_field(x, xs, d, 1.0).unwrap();
        let many = dipole_field(x, xs, d, alpha).unwrap();
        for i in 0..2 {
            prop_assert!((many[i] - alpha * one[i]).abs() <= 1e-12 * (1.0 + many[i].abs()));
        }
        let flipped = dipole_field(x, xs, [-d[0], -d[1]], alpha).unwrap();
        prop_assert!((flipped[0] + many[0]).abs() < 1e-12 * (1.0 + many[0].abs()));
    }

    #[test]
    fn presets_round_trip_through_toml(
        idx in 0usize..Preset::ALL.len(),
        full in any::<bool>(),
        steps in 1usize..500,
        tau in 1e-4..1e-1f64,
    ) {
        let scale = if full { Scale::Full } else { Scale::Desk };
        let mut cfg = Preset::ALL[idx].config(scale);
        cfg.time = TimeConfig { tau: Some(tau), steps: Some(steps), t_final: None };
        let back = parse_config(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
