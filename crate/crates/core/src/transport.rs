//! Passive scalar carried by the computed velocity.

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{interpolate_scalar, FEFunction, FESpace};
use crate::linalg::{CachedSolver, CsrMatrix, LinalgError, PatternBuilder};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("diffusivity must be positive, got {0}")]
    Diffusivity(f64),
    #[error("time step must be positive, got {0}")]
    TimeStep(f64),
    #[error("velocity lives on a different mesh")]
    MeshMismatch,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Concentration on a continuous scalar space with its diffusivity.
#[derive(Clone, Debug)]
pub struct PassiveScalar {
    pub c: FEFunction,
    pub alpha: f64,
}

impl PassiveScalar {
    pub fn new(c: FEFunction, alpha: f64) -> Result<Self, TransportError> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(TransportError::Diffusivity(alpha));
        }
        Ok(Self { c, alpha })
    }

    /// `c = 1` below `y_min + thickness`, zero above, interpolated.
    pub fn bottom_strip(space: &Arc<FESpace>, thickness: f64, alpha: f64) -> Result<Self, TransportError> {
        let y0 = space.mesh.ymin;
        Self::new(interpolate_scalar(space, |x| if x[1] <= y0 + thickness { 1.0 } else { 0.0 }), alpha)
    }

    pub fn mass(&self) -> f64 {
        self.c.integral(0)
    }

    /// Amount by which the nodal values leave `[lo, hi]`.
    pub fn overshoot(&self, lo: f64, hi: f64) -> f64 {
        self.c.coeffs.iter().fold(0.0f64, |m, &v| m.max(v - hi).max(lo - v))
    }
}

/// Backward Euler for `c_t + div(c u) − αΔc = 0` with zero total flux,
/// i.e. `(c − c_old)/dt, X) − (c u, ∇X) + α(∇c, ∇X) = 0`. Testing with
/// `X = 1` shows the integral of `c` is preserved exactly.
pub struct ScalarStepper {
    space: Arc<FESpace>,
    mass: CsrMatrix,
    stiffness: CsrMatrix,
    system: CsrMatrix,
    solver: CachedSolver,
}

impl ScalarStepper {
    pub fn new(space: &Arc<FESpace>) -> Self {
        let mesh = &space.mesh;
        let t = &space.tables;
        let n = t.n_loc;
        let mut pb = PatternBuilder::new(space.n_dofs(), space.n_dofs());
        for cell in 0..mesh.n_cells() {
            let d = space.cell_dofs(cell);
            pb.add_block(d, d);
        }
        let mut mass = pb.build();
        let mut stiffness = mass.clone();
        let (mut lm, mut lk) = (vec![0.0; n * n], vec![0.0; n * n]);
        for cell in 0..mesh.n_cells() {
            let g = mesh.geom(cell);
            let (sx, sy, jac) = (2.0 / g.hx, 2.0 / g.hy, g.jacobian());
            lm.fill(0.0);
            lk.fill(0.0);
            for q in 0..t.n_qp() {
                let w = t.qweights[q] * jac;
                let row = q * n;
                for i in 0..n {
                    for j in 0..n {
                        lm[i * n + j] += w * t.val[row + i] * t.val[row + j];
                        lk[i * n + j] += w
                            * (t.dxi[row + i] * t.dxi[row + j] * sx * sx + t.deta[row + i] * t.deta[row + j] * sy * sy);
                    }
                }
            }
            let d = space.cell_dofs(cell);
            mass.add_block(d, d, &lm);
            stiffness.add_block(d, d, &lk);
        }
        let system = mass.clone();
        Self { space: space.clone(), mass, stiffness, system, solver: CachedSolver::new("scalar") }
    }

    pub fn space(&self) -> &Arc<FESpace> {
        &self.space
    }

    /// One step of size `dt` with velocity `u` (any vector space on the
    /// same mesh).
    pub fn step(&mut self, c: &PassiveScalar, u: &FEFunction, dt: f64) -> Result<PassiveScalar, TransportError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TransportError::TimeStep(dt));
        }
        if !Arc::ptr_eq(&u.space.mesh, &self.space.mesh) && u.space.mesh.n_cells() != self.space.mesh.n_cells() {
            return Err(TransportError::MeshMismatch);
        }
        let mesh = &self.space.mesh;
        let t = &self.space.tables;
        let n = t.n_loc;
        let sys = &mut self.system;
        for ((v, m), k) in sys.values.iter_mut().zip(&self.mass.values).zip(&self.stiffness.values) {
            *v = m + dt * c.alpha * k;
        }
        let mut local = vec![0.0; n * n];
        for cell in 0..mesh.n_cells() {
            let g = mesh.geom(cell);
            let (sx, sy, jac) = (2.0 / g.hx, 2.0 / g.hy, g.jacobian());
            let uq = u.on_cell(cell);
            local.fill(0.0);
            for (q, pt) in uq.points.iter().enumerate() {
                let w = dt * t.qweights[q] * jac;
                let row = q * n;
                let [ux, uy] = pt.value;
                for i in 0..n {
                    let adv = ux * t.dxi[row + i] * sx + uy * t.deta[row + i] * sy;
                    for j in 0..n {
                        local[i * n + j] -= w * adv * t.val[row + j];
                    }
                }
            }
            let d = self.space.cell_dofs(cell);
            sys.add_block(d, d, &local);
        }
        let b = self.mass.matvec(&c.c.coeffs);
        let x = self.solver.solve(sys, &b, Some(&c.c.coeffs))?;
        Ok(PassiveScalar { c: FEFunction { space: self.space.clone(), coeffs: x }, alpha: c.alpha })
    }
}

/// One backward-Euler step with a freshly built stepper.
pub fn step_scalar(c: &PassiveScalar, u: &FEFunction, dt: f64) -> Result<PassiveScalar, TransportError> {
    ScalarStepper::new(&c.c.space).step(c, u, dt)
}

/// Spatial variance `|Ω|⁻¹ ∫ (c − c̄)²`.
pub fn mixing_metric(c: &FEFunction) -> f64 {
    let mesh = &c.space.mesh;
    let t = &c.space.tables;
    let mut samples = Vec::with_capacity(mesh.n_cells() * t.n_qp());
    for cell in 0..mesh.n_cells() {
        let jac = mesh.geom(cell).jacobian();
        for (q, p) in c.on_cell(cell).points.iter().enumerate() {
            samples.push((t.qweights[q] * jac, p.value[0]));
        }
    }
    let area: f64 = samples.iter().map(|s| s.0).sum();
    let mean = samples.iter().map(|(w, v)| w * v).sum::<f64>() / area;
    samples.iter().map(|(w, v)| w * (v - mean) * (v - mean)).sum::<f64>() / area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{build_spaces, interpolate_vector, l2_inner, DirichletSides, SpaceBundle};
    use crate::mesh::build_rect_mesh;
    use std::f64::consts::PI;

    fn bundle(n: usize) -> SpaceBundle {
        let mesh = Arc::new(build_rect_mesh(0.0, 1.0, 0.0, 1.0, n, n).unwrap());
        build_spaces(mesh, 2, DirichletSides::ALL).unwrap()
    }

    #[test]
    fn uniform_and_split_variance() {
        let b = bundle(16);
        assert!(mixing_metric(&interpolate_scalar(&b.x, |_| 3.0)) < 1e-20);
        // the continuous interpolant smears the jump over one cell
        let half = interpolate_scalar(&b.x, |x| if x[1] < 0.5 { 1.0 } else { 0.0 });
        assert!((mixing_metric(&half) - 0.25).abs() < 0.02);
    }

    #[test]
    fn rejects_bad_input() {
        let b = bundle(2);
        assert!(matches!(PassiveScalar::new(FEFunction::zeros(&b.x), 0.0), Err(TransportError::Diffusivity(_))));
        let c = PassiveScalar::new(FEFunction::zeros(&b.x), 1.0).unwrap();
        assert!(matches!(step_scalar(&c, &FEFunction::zeros(&b.u), 0.0), Err(TransportError::TimeStep(_))));
    }

    #[test]
    fn vanishing_diffusion_at_rest() {
        let b = bundle(4);
        let c = PassiveScalar::new(interpolate_scalar(&b.x, |x| x[0] * x[1]), 1e-14).unwrap();
        let next = step_scalar(&c, &FEFunction::zeros(&b.u), 0.1).unwrap();
        for (a, b) in next.c.coeffs.iter().zip(&c.c.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mass_conserved_in_rotating_flow() {
        let b = bundle(6);
        // tangential at the walls, not discretely divergence free
        let u = interpolate_vector(&b.u, |x| {
            let (sx, sy) = ((PI * x[0]).sin(), (PI * x[1]).sin());
            [sx * sx * (2.0 * PI * x[1]).sin() + 0.3 * x[0] * sy, -sy * sy * (2.0 * PI * x[0]).sin()]
        });
        let mut c = PassiveScalar::bottom_strip(&b.x, 0.2, 1e-3).unwrap();
        let m0 = c.mass();
        let mut st = ScalarStepper::new(&b.x);
        for _ in 0..10 {
            c = st.step(&c, &u, 0.05).unwrap();
            assert!((c.mass() - m0).abs() <= 1e-10 * m0.abs());
        }
    }

    #[test]
    fn heat_decay_factor() {
        let b = bundle(16);
        let (alpha, dt) = (0.01, 0.5);
        let c0 = interpolate_scalar(&b.x, |x| (PI * x[0]).cos() * (PI * x[1]).cos());
        let c = PassiveScalar::new(c0.clone(), alpha).unwrap();
        let c1 = step_scalar(&c, &FEFunction::zeros(&b.u), dt).unwrap().c;
        let observed = l2_inner(&c1, &c0) / l2_inner(&c0, &c0);
        let expected = 1.0 / (1.0 + 2.0 * PI * PI * alpha * dt);
        assert!((observed / expected - 1.0).abs() < 0.02, "{observed} vs {expected}");
    }

    #[test]
    fn diffusion_reduces_variance() {
        let b = bundle(6);
        let mut c = PassiveScalar::bottom_strip(&b.x, 0.2, 0.01).unwrap();
        let mut st = ScalarStepper::new(&b.x);
        let zero = FEFunction::zeros(&b.u);
        let mut last = mixing_metric(&c.c);
        for _ in 0..10 {
            c = st.step(&c, &zero, 0.1).unwrap();
            let v = mixing_metric(&c.c);
            assert!(v <= last + 1e-15);
            last = v;
        }
    }
}
