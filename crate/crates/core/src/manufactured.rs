//! Smooth exact solution on the unit square and the sources that make it
//! solve the continuous system, used to measure convergence rates.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::scheme::{MaterialParams, SourceSet};

/// Closed-form fields and derivatives of the reference solution.
#[derive(Clone, Copy, Debug, Default)]
pub struct Manufactured;

impl Manufactured {
    pub fn velocity(x: [f64; 2], t: f64) -> [f64; 2] {
        let yy = PI * (x[1] + 0.5);
        let s = t.sin();
        [s * (PI * x[0]).sin() * yy.sin(), s * (PI * x[0]).cos() * yy.cos()]
    }

    /// `grad[c] = [∂x u_c, ∂y u_c]`.
    pub fn velocity_grad(x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let yy = PI * (x[1] + 0.5);
        let s = t.sin() * PI;
        let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), yy.sin(), yy.cos());
        [[s * cx * sy, s * sx * cy], [-s * sx * cy, -s * cx * sy]]
    }

    pub fn pressure(x: [f64; 2], t: f64) -> f64 {
        (2.0 * PI * (x[0] - x[1]) + t).sin()
    }

    pub fn spin(x: [f64; 2], t: f64) -> f64 {
        (2.0 * PI * x[0] + t).sin() * (2.0 * PI * x[1] + t).sin()
    }

    pub fn spin_grad(x: [f64; 2], t: f64) -> [f64; 2] {
        let (a, b) = (2.0 * PI * x[0] + t, 2.0 * PI * x[1] + t);
        [2.0 * PI * a.cos() * b.sin(), 2.0 * PI * a.sin() * b.cos()]
    }

    pub fn magnetization(x: [f64; 2], t: f64) -> [f64; 2] {
        let (a, b) = (2.0 * PI * x[0] + t, 2.0 * PI * x[1] + t);
        [a.sin() * b.cos(), a.cos() * b.sin()]
    }

    pub fn potential(x: [f64; 2], t: f64) -> f64 {
        (PI * x[0] + t).sin() * (PI * x[1] + t).sin()
    }

    /// `h = ∇φ`.
    pub fn field(x: [f64; 2], t: f64) -> [f64; 2] {
        let (c, d) = (PI * x[0] + t, PI * x[1] + t);
        [PI * c.cos() * d.sin(), PI * c.sin() * d.cos()]
    }

    fn field_grad(x: [f64; 2], t: f64) -> [[f64; 2]; 2] {
        let (c, d) = (PI * x[0] + t, PI * x[1] + t);
        let p2 = PI * PI;
        let (ss, cc) = (c.sin() * d.sin(), c.cos() * d.cos());
        [[-p2 * ss, p2 * cc], [p2 * cc, -p2 * ss]]
    }

    pub fn momentum_source(p: &MaterialParams, x: [f64; 2], t: f64) -> [f64; 2] {
        let u = Self::velocity(x, t);
        let g = Self::velocity_grad(x, t);
        let yy = PI * (x[1] + 0.5);
        let ut = [t.cos() * (PI * x[0]).sin() * yy.sin(), t.cos() * (PI * x[0]).cos() * yy.cos()];
        let lap = [-2.0 * PI * PI * u[0], -2.0 * PI * PI * u[1]];
        let pc = 2.0 * PI * (2.0 * PI * (x[0] - x[1]) + t).cos();
        let gp = [pc, -pc];
        let gw = Self::spin_grad(x, t);
        let curl_w = [gw[1], -gw[0]];
        let m = Self::magnetization(x, t);
        let gh = Self::field_grad(x, t);
        let nu0 = p.nu + p.nu_r;
        let mut f = [0.0; 2];
        for c in 0..2 {
            let conv = u[0] * g[c][0] + u[1] * g[c][1];
            let kelvin = m[0] * gh[c][0] + m[1] * gh[c][1];
            f[c] = ut[c] + conv - nu0 * lap[c] + gp[c] - 2.0 * p.nu_r * curl_w[c] - p.mu0 * kelvin;
        }
        f
    }

    pub fn spin_source(p: &MaterialParams, x: [f64; 2], t: f64) -> f64 {
        let (a, b) = (2.0 * PI * x[0] + t, 2.0 * PI * x[1] + t);
        let w = Self::spin(x, t);
        let wt = (a + b).sin();
        let gw = Self::spin_grad(x, t);
        let u = Self::velocity(x, t);
        let g = Self::velocity_grad(x, t);
        let curl_u = g[1][0] - g[0][1];
        let m = Self::magnetization(x, t);
        let h = Self::field(x, t);
        p.inertia * (wt + u[0] * gw[0] + u[1] * gw[1]) + p.c1 * 8.0 * PI * PI * w + 4.0 * p.nu_r * w
            - 2.0 * p.nu_r * curl_u
            - p.mu0 * (m[0] * h[1] - m[1] * h[0])
    }

    pub fn magnetization_source(p: &MaterialParams, x: [f64; 2], t: f64) -> [f64; 2] {
        let (a, b) = (2.0 * PI * x[0] + t, 2.0 * PI * x[1] + t);
        let m = Self::magnetization(x, t);
        let mt = [(a + b).cos(), (a + b).cos()];
        let gm = [
            [2.0 * PI * a.cos() * b.cos(), -2.0 * PI * a.sin() * b.sin()],
            [-2.0 * PI * a.sin() * b.sin(), 2.0 * PI * a.cos() * b.cos()],
        ];
        let u = Self::velocity(x, t);
        let w = Self::spin(x, t);
        let h = Self::field(x, t);
        let w_cross_m = [-w * m[1], w * m[0]];
        let mut f = [0.0; 2];
        for c in 0..2 {
            let conv = u[0] * gm[c][0] + u[1] * gm[c][1];
            f[c] = mt[c] + conv - w_cross_m[c] + (m[c] - p.kappa0 * h[c]) / p.relaxation_time
                + p.sigma * 8.0 * PI * PI * m[c];
        }
        f
    }

    /// Load `g` in `(∇Φ,∇X) = (h_a − M,∇X) + (g,∇X)` with `h_a = 0`:
    /// `g = ∇φ + m`.
    pub fn potential_load(x: [f64; 2], t: f64) -> [f64; 2] {
        let h = Self::field(x, t);
        let m = Self::magnetization(x, t);
        [h[0] + m[0], h[1] + m[1]]
    }

    /// Sources and boundary traces for a run with parameters `p` and no
    /// applied field. The magnetic diffusion term is only the volume part.
    pub fn source_set(p: &MaterialParams) -> SourceSet {
        let (pu, pw, pm) = (p.clone(), p.clone(), p.clone());
        SourceSet {
            momentum: Some(Arc::new(move |x, t| Self::momentum_source(&pu, x, t))),
            spin: Some(Arc::new(move |x, t| Self::spin_source(&pw, x, t))),
            magnetization: Some(Arc::new(move |x, t| Self::magnetization_source(&pm, x, t))),
            potential: Some(Arc::new(Self::potential_load)),
            velocity_trace: Some(Arc::new(Self::velocity)),
            spin_trace: Some(Arc::new(Self::spin)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type M = Manufactured;
    const H: f64 = 1e-3;

    // fourth-order central differences
    fn d1(g: impl Fn(f64) -> f64) -> f64 {
        (8.0 * (g(H) - g(-H)) - (g(2.0 * H) - g(-2.0 * H))) / (12.0 * H)
    }

    fn d2(g: impl Fn(f64) -> f64) -> f64 {
        (16.0 * (g(H) + g(-H)) - (g(2.0 * H) + g(-2.0 * H)) - 30.0 * g(0.0)) / (12.0 * H * H)
    }

    fn dx<F: Fn([f64; 2], f64) -> f64>(f: &F, x: [f64; 2], t: f64, k: usize) -> f64 {
        d1(|e| {
            let mut y = x;
            y[k] += e;
            f(y, t)
        })
    }

    fn dt<F: Fn([f64; 2], f64) -> f64>(f: &F, x: [f64; 2], t: f64) -> f64 {
        d1(|e| f(x, t + e))
    }

    fn lap<F: Fn([f64; 2], f64) -> f64>(f: &F, x: [f64; 2], t: f64) -> f64 {
        d2(|e| f([x[0] + e, x[1]], t)) + d2(|e| f([x[0], x[1] + e], t))
    }

    fn comp(f: fn([f64; 2], f64) -> [f64; 2], c: usize) -> impl Fn([f64; 2], f64) -> f64 {
        move |x, t| f(x, t)[c]
    }

    fn close(a: f64, b: f64, scale: f64) -> bool {
        (a - b).abs() <= 1e-6 * scale.max(1.0)
    }

    /// Strong-form residuals computed only from field values by finite
    /// differences.
    #[test]
    fn sources_match_finite_difference_residuals() {
        let p = MaterialParams {
            nu: 0.7,
            nu_r: 1.3,
            mu0: 0.9,
            inertia: 1.1,
            c1: 0.6,
            relaxation_time: 0.8,
            kappa0: 1.7,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = [comp(M::velocity, 0), comp(M::velocity, 1)];
        let m = [comp(M::magnetization, 0), comp(M::magnetization, 1)];
        let phi = M::potential;
        for _ in 0..20 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let t = rng.gen_range(0.0..2.0);
            let uv = M::velocity(x, t);
            let mv = M::magnetization(x, t);
            let hv = [dx(&phi, x, t, 0), dx(&phi, x, t, 1)];
            let hf = [|y: [f64; 2], s: f64| dx(&M::potential, y, s, 0), |y: [f64; 2], s: f64| dx(&M::potential, y, s, 1)];
            let w = M::spin(x, t);
            let wx = dx(&M::spin, x, t, 0);
            let wy = dx(&M::spin, x, t, 1);
            let nu0 = p.nu + p.nu_r;

            let f = M::momentum_source(&p, x, t);
            for c in 0..2 {
                let conv = uv[0] * dx(&u[c], x, t, 0) + uv[1] * dx(&u[c], x, t, 1);
                let kelvin = mv[0] * dx(&hf[c], x, t, 0) + mv[1] * dx(&hf[c], x, t, 1);
                let curl_w = if c == 0 { wy } else { -wx };
                let r = dt(&u[c], x, t) + conv - nu0 * lap(&u[c], x, t) + dx(&M::pressure, x, t, c)
                    - 2.0 * p.nu_r * curl_w
                    - p.mu0 * kelvin;
                assert!(close(r, f[c], f[c].abs()), "momentum {c}: {r} vs {}", f[c]);
            }

            let curl_u = dx(&u[1], x, t, 0) - dx(&u[0], x, t, 1);
            let r = p.inertia * (dt(&M::spin, x, t) + uv[0] * wx + uv[1] * wy) - p.c1 * lap(&M::spin, x, t)
                + 4.0 * p.nu_r * w
                - 2.0 * p.nu_r * curl_u
                - p.mu0 * (mv[0] * hv[1] - mv[1] * hv[0]);
            let f = M::spin_source(&p, x, t);
            assert!(close(r, f, f.abs()), "spin: {r} vs {f}");

            let f = M::magnetization_source(&p, x, t);
            let wxm = [-w * mv[1], w * mv[0]];
            for c in 0..2 {
                let conv = uv[0] * dx(&m[c], x, t, 0) + uv[1] * dx(&m[c], x, t, 1);
                let r = dt(&m[c], x, t) + conv - wxm[c] + (mv[c] - p.kappa0 * hv[c]) / p.relaxation_time;
                assert!(close(r, f[c], f[c].abs()), "magnetization {c}: {r} vs {}", f[c]);
            }

            let g = M::potential_load(x, t);
            assert!(close(g[0], hv[0] + mv[0], 1.0) && close(g[1], hv[1] + mv[1], 1.0));
            let analytic = M::field(x, t);
            assert!(close(analytic[0], hv[0], 1.0) && close(analytic[1], hv[1], 1.0));
        }
    }

    #[test]
    fn velocity_is_solenoidal_and_starts_at_rest() {
        let g = M::velocity_grad([0.3, 0.8], 0.7);
        assert!((g[0][0] + g[1][1]).abs() < 1e-14);
        assert_eq!(M::velocity([0.3, 0.8], 0.0), [0.0, 0.0]);
    }
}
