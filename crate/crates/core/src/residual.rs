//! Residuals of the discrete equations, evaluated term by term through the
//! generic forms rather than the assembled blocks. Used to check converged
//! nonlinear iterates independently of the solver.

use std::sync::Arc;

use crate::fem::{FEFunction, FESpace, SpaceBundle};
use crate::forms::{
    a_h, b_h, b_h_m, cell_integral, cross, cross_spin, curl_of_scalar, curl_of_vector, div_of_vector, dot,
    robin_boundary_forms, FormError,
};
use crate::scheme::{MaterialParams, State};

/// Largest absolute residual over the test functions, and the largest sum
/// of absolute term values as its scale.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EquationResidual {
    pub max_abs: f64,
    pub scale: f64,
}

impl EquationResidual {
    fn push(&mut self, terms: &[f64]) {
        let r: f64 = terms.iter().sum();
        let s: f64 = terms.iter().map(|t| t.abs()).sum();
        self.max_abs = self.max_abs.max(r.abs());
        self.scale = self.scale.max(s);
    }

    pub fn relative(&self) -> f64 {
        if self.max_abs == 0.0 {
            0.0
        } else {
            self.max_abs / self.scale.max(f64::MIN_POSITIVE)
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SchemeResiduals {
    pub momentum: EquationResidual,
    pub incompressibility: EquationResidual,
    pub spin: EquationResidual,
    pub magnetization: EquationResidual,
    /// Absent when the field is prescribed.
    pub potential: Option<EquationResidual>,
}

impl SchemeResiduals {
    pub fn worst_relative(&self) -> f64 {
        let mut w = self
            .momentum
            .relative()
            .max(self.incompressibility.relative())
            .max(self.spin.relative())
            .max(self.magnetization.relative());
        if let Some(p) = &self.potential {
            w = w.max(p.relative());
        }
        w
    }
}

fn free_basis(space: &Arc<FESpace>) -> impl Iterator<Item = FEFunction> + '_ {
    let ns = space.n_scalar();
    (0..space.n_dofs()).filter(move |&i| !space.is_constrained(i % ns)).map(move |i| FEFunction::basis(space, i))
}

/// Residuals of all equations of one implicit step from `prev` to `cur`.
/// `h_a` is the applied field at the new time; `coupled` selects whether
/// the potential equation is part of the system.
pub fn scheme_residuals(
    spaces: &SpaceBundle,
    p: &MaterialParams,
    tau: f64,
    prev: &State,
    cur: &State,
    h_a: &dyn Fn([f64; 2]) -> [f64; 2],
    coupled: bool,
) -> Result<SchemeResiduals, FormError> {
    let mut out = SchemeResiduals::default();
    let eta = p.penalty(spaces.degree);

    for v in free_basis(&spaces.u) {
        let dt = cell_integral(&[&cur.u, &prev.u, &v], |_, f| {
            dot([f[0].value[0] - f[1].value[0], f[0].value[1] - f[1].value[1]], f[2].value) / tau
        })?;
        let conv = b_h(&cur.u, &cur.u, &v)?;
        let visc = cell_integral(&[&cur.u, &v], |_, f| {
            let (a, b) = (f[0].grad, f[1].grad);
            (p.nu + p.nu_r) * (a[0][0] * b[0][0] + a[0][1] * b[0][1] + a[1][0] * b[1][0] + a[1][1] * b[1][1])
        })?;
        let pres = cell_integral(&[&cur.p, &v], |_, f| -f[0].value[0] * div_of_vector(&f[1].grad))?;
        let micro = cell_integral(&[&cur.w, &v], |_, f| -2.0 * p.nu_r * dot(curl_of_scalar(f[0].grad[0]), f[1].value))?;
        let kelvin = -p.mu0 * b_h_m(&v, &cur.h, &cur.m)?;
        out.momentum.push(&[dt, conv, visc, pres, micro, kelvin]);
    }

    for q in (0..spaces.p.n_dofs()).map(|i| FEFunction::basis(&spaces.p, i)) {
        let d = cell_integral(&[&q, &cur.u], |_, f| f[0].value[0] * div_of_vector(&f[1].grad))?;
        // scale by the size of the velocity gradient seen by this test function
        let s = cell_integral(&[&q, &cur.u], |_, f| {
            let g = f[1].grad;
            f[0].value[0].abs() * (g[0][0].abs() + g[1][1].abs())
        })?;
        out.incompressibility.max_abs = out.incompressibility.max_abs.max(d.abs());
        out.incompressibility.scale = out.incompressibility.scale.max(s);
    }

    for x in free_basis(&spaces.w) {
        let dt = cell_integral(&[&cur.w, &prev.w, &x], |_, f| {
            p.inertia * (f[0].value[0] - f[1].value[0]) * f[2].value[0] / tau
        })?;
        let conv = p.inertia * b_h(&cur.u, &cur.w, &x)?;
        let diff = cell_integral(&[&cur.w, &x], |_, f| p.c1 * dot(f[0].grad[0], f[1].grad[0]))?;
        let react = cell_integral(&[&cur.w, &x], |_, f| 4.0 * p.nu_r * f[0].value[0] * f[1].value[0])?;
        let curl = cell_integral(&[&cur.u, &x], |_, f| -2.0 * p.nu_r * curl_of_vector(&f[0].grad) * f[1].value[0])?;
        let torque = cell_integral(&[&cur.m, &cur.h, &x], |_, f| -p.mu0 * cross(f[0].value, f[1].value) * f[2].value[0])?;
        out.spin.push(&[dt, conv, diff, react, curl, torque]);
    }

    for z in free_basis(&spaces.m) {
        let dt = cell_integral(&[&cur.m, &prev.m, &z], |_, f| {
            dot([f[0].value[0] - f[1].value[0], f[0].value[1] - f[1].value[1]], f[2].value) / tau
        })?;
        let conv = -b_h_m(&cur.u, &z, &cur.m)?;
        let diffusion = if p.sigma > 0.0 { p.sigma * a_h(&cur.m, &z, eta)? } else { 0.0 };
        let spin = cell_integral(&[&cur.m, &cur.w, &z], |_, f| dot(cross_spin(f[0].value, f[1].value[0]), f[2].value))?;
        let relax = cell_integral(&[&cur.m, &cur.h, &z], |_, f| {
            dot([f[0].value[0] - p.kappa0 * f[1].value[0], f[0].value[1] - p.kappa0 * f[1].value[1]], f[2].value)
                / p.relaxation_time
        })?;
        let (rl, rr) = robin_boundary_forms(&cur.m, &z, &cur.h, p.sigma, p.gamma, p.kappa0)?;
        out.magnetization.push(&[dt, conv, diffusion, spin, relax, rl, -rr]);
    }

    if coupled {
        let mut res = EquationResidual::default();
        for x in (0..spaces.x.n_dofs()).map(|i| FEFunction::basis(&spaces.x, i)) {
            let lap = cell_integral(&[&cur.phi, &x], |_, f| dot(f[0].grad[0], f[1].grad[0]))?;
            let src = cell_integral(&[&cur.m, &x], |xq, f| {
                let ha = h_a(xq);
                -dot([ha[0] - f[0].value[0], ha[1] - f[0].value[1]], f[1].grad[0])
            })?;
            res.push(&[lap, src]);
        }
        out.potential = Some(res);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_spaces, DirichletSides};
    use crate::magnetics::{FieldSchedule, Intensity, Placement, ScheduledDipole};
    use crate::mesh::build_rect_mesh;
    use crate::scheme::{Mode, SourceSet, Stepper};

    fn schedule() -> FieldSchedule {
        FieldSchedule {
            dipoles: vec![ScheduledDipole {
                placement: Placement::Fixed { position: [0.3, -0.3], direction: [0.6, 0.8] },
                intensity: Intensity::Ramp { start: 0.0, end: 1.0, from: 0.0, to: 8.0 },
            }],
        }
    }

    fn check(mode: Mode, sigma: f64) {
        let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, 3, 3).unwrap());
        let s = build_spaces(mesh, 2, DirichletSides::ALL).unwrap();
        let p = MaterialParams { relaxation_time: 0.05, sigma, ..Default::default() };
        let sched = schedule();
        let mut st = Stepper::new(s.clone(), p.clone(), sched.clone(), SourceSet::none(), mode).unwrap();
        st.picard.tolerance = 1e-12;
        let mut prev = st.initialize(|x| [x[1] * (1.0 - x[1]) * x[0] * (1.0 - x[0]), 0.0], |_| 0.0, |x| [x[0], 0.2]);
        for _ in 0..3 {
            let (next, _) = st.step(&prev, 0.1).unwrap();
            let r = scheme_residuals(&s, &p, 0.1, &prev, &next, &|x| sched.applied_field(next.t, x), mode == Mode::Coupled)
                .unwrap();
            assert!(r.worst_relative() < 1e-9, "{r:?}");
            prev = next;
        }
    }

    #[test]
    fn coupled_fixed_point_satisfies_equations() {
        check(Mode::Coupled, 0.0);
    }

    #[test]
    fn simplified_fixed_point_satisfies_equations() {
        check(Mode::Simplified, 0.0);
    }

    #[test]
    fn diffusive_magnetization_fixed_point() {
        check(Mode::Coupled, 0.5);
    }

    #[test]
    fn perturbed_state_is_detected() {
        let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap());
        let s = build_spaces(mesh, 2, DirichletSides::ALL).unwrap();
        let p = MaterialParams::default();
        let sched = schedule();
        let mut st = Stepper::new(s.clone(), p.clone(), sched.clone(), SourceSet::none(), Mode::Coupled).unwrap();
        let prev = st.initialize(|_| [0.0; 2], |_| 0.0, |_| [1.0, 0.0]);
        let (mut next, _) = st.step(&prev, 0.1).unwrap();
        next.m.coeffs[3] += 1e-3;
        let r = scheme_residuals(&s, &p, 0.1, &prev, &next, &|x| sched.applied_field(next.t, x), true).unwrap();
        assert!(r.magnetization.relative() > 1e-6);
    }
}
