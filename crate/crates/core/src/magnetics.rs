//! Applied fields from point dipoles and the magnetostatic potential solve.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{gradient_into, ElementTables, FEFunction, FESpace, SpaceBundle};
use crate::linalg::{CsrMatrix, LinalgError, LuFactor, MeanFunctional, PatternBuilder};
use crate::mesh::Mesh;

#[derive(Debug, Error, PartialEq)]
pub enum MagneticsError {
    #[error("field evaluated at the dipole location {0:?}")]
    Singular(Vec<f64>),
    #[error("dipole {index} at {position:?} lies in the closed domain at t = {time}")]
    DipoleInside { index: usize, position: [f64; 2], time: f64 },
    #[error("dipole {index} has a zero direction vector")]
    ZeroDirection { index: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Potential `d·(x_s − x) / |x_s − x|^D` of a unit dipole in `D` dimensions.
pub fn dipole_potential<const D: usize>(x: [f64; D], xs: [f64; D], d: [f64; D]) -> Result<f64, MagneticsError> {
    let mut r = [0.0; D];
    for i in 0..D {
        r[i] = xs[i] - x[i];
    }
    let rho2: f64 = r.iter().map(|v| v * v).sum();
    if rho2 == 0.0 {
        return Err(MagneticsError::Singular(x.to_vec()));
    }
    let dr: f64 = (0..D).map(|i| d[i] * r[i]).sum();
    Ok(dr / rho2.sqrt().powi(D as i32))
}

/// Gradient (with respect to `x`) of [`dipole_potential`], scaled by `alpha`:
/// `alpha (−d/ρ^D + D (d·r) r / ρ^{D+2})` with `r = x_s − x`, `ρ = |r|`.
pub fn dipole_field<const D: usize>(
    x: [f64; D],
    xs: [f64; D],
    d: [f64; D],
    alpha: f64,
) -> Result<[f64; D], MagneticsError> {
    let mut r = [0.0; D];
    for i in 0..D {
        r[i] = xs[i] - x[i];
    }
    let rho2: f64 = r.iter().map(|v| v * v).sum();
    if rho2 == 0.0 {
        return Err(MagneticsError::Singular(x.to_vec()));
    }
    let rho = rho2.sqrt();
    let dr: f64 = (0..D).map(|i| d[i] * r[i]).sum();
    let a = 1.0 / rho.powi(D as i32);
    let b = D as f64 * dr / rho.powi(D as i32 + 2);
    let mut out = [0.0; D];
    for i in 0..D {
        out[i] = alpha * (-d[i] * a + b * r[i]);
    }
    Ok(out)
}

/// Planar dipole field without the error path (caller guarantees `x ≠ x_s`).
#[inline]
fn field2(x: [f64; 2], xs: [f64; 2], d: [f64; 2], alpha: f64) -> [f64; 2] {
    let r = [xs[0] - x[0], xs[1] - x[1]];
    let rho2 = r[0] * r[0] + r[1] * r[1];
    let dr = d[0] * r[0] + d[1] * r[1];
    let a = 1.0 / rho2;
    let b = 2.0 * dr / (rho2 * rho2);
    [alpha * (-d[0] * a + b * r[0]), alpha * (-d[1] * a + b * r[1])]
}

/// Time law for a dipole's strength.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum Intensity {
    Constant { value: f64 },
    /// Linear from `from` at `start` to `to` at `end`, held constant outside.
    Ramp { start: f64, end: f64, from: f64, to: f64 },
    /// `amplitude |sin(2π f t − 2π x_s / λ)|^exponent`, with `x_s` the
    /// dipole's horizontal position: pulses travelling in +x.
    TravelingPulse { amplitude: f64, frequency: f64, wavelength: f64, exponent: f64 },
    /// `amplitude sin(2π f t + phase)`.
    Sinusoid { amplitude: f64, frequency: f64, phase: f64 },
}

impl Intensity {
    pub fn at(&self, t: f64, xs: f64) -> f64 {
        match *self {
            Intensity::Constant { value } => value,
            Intensity::Ramp { start, end, from, to } => {
                if t <= start {
                    from
                } else if t >= end {
                    to
                } else {
                    from + (to - from) * (t - start) / (end - start)
                }
            }
            Intensity::TravelingPulse { amplitude, frequency, wavelength, exponent } => {
                let arg = 2.0 * PI * frequency * t - 2.0 * PI * xs / wavelength;
                amplitude * arg.sin().abs().powf(exponent)
            }
            Intensity::Sinusoid { amplitude, frequency, phase } => {
                amplitude * (2.0 * PI * frequency * t + phase).sin()
            }
        }
    }
}

/// Where a dipole sits and where it points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Placement {
    Fixed { position: [f64; 2], direction: [f64; 2] },
    /// Circular path about `center`, pointing at the center throughout.
    /// The angle is `start_angle` until `start_time`, then grows at
    /// `2π / period` (counter-clockwise for a positive period).
    Orbit { center: [f64; 2], radius: f64, start_angle: f64, start_time: f64, period: f64 },
}

impl Placement {
    pub fn at(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        match *self {
            Placement::Fixed { position, direction } => {
                let n = (direction[0].powi(2) + direction[1].powi(2)).sqrt();
                (position, [direction[0] / n, direction[1] / n])
            }
            Placement::Orbit { center, radius, start_angle, start_time, period } => {
                let theta = start_angle + 2.0 * PI * (t - start_time).max(0.0) / period;
                let (s, c) = theta.sin_cos();
                ([center[0] + radius * c, center[1] + radius * s], [-c, -s])
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledDipole {
    pub placement: Placement,
    pub intensity: Intensity,
}

/// Applied field as a superposition of scheduled planar dipoles.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSchedule {
    #[serde(default)]
    pub dipoles: Vec<ScheduledDipole>,
}

impl FieldSchedule {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Position, unit direction and strength of every dipole at time `t`.
    pub fn dipoles_at(&self, t: f64) -> Vec<([f64; 2], [f64; 2], f64)> {
        self.dipoles
            .iter()
            .map(|s| {
                let (p, d) = s.placement.at(t);
                (p, d, s.intensity.at(t, p[0]))
            })
            .collect()
    }

    /// Checks that no dipole enters the closed domain on `[0, t_end]`,
    /// sampling the paths at `samples + 1` times.
    pub fn validate(&self, mesh: &Mesh, t_end: f64, samples: usize) -> Result<(), MagneticsError> {
        for (index, s) in self.dipoles.iter().enumerate() {
            if let Placement::Fixed { direction, .. } = s.placement {
                if direction == [0.0, 0.0] {
                    return Err(MagneticsError::ZeroDirection { index });
                }
            }
            for k in 0..=samples {
                let t = t_end * k as f64 / samples.max(1) as f64;
                let (p, _) = s.placement.at(t);
                if mesh.contains(p) {
                    return Err(MagneticsError::DipoleInside { index, position: p, time: t });
                }
            }
        }
        Ok(())
    }

    /// `h_a(t, x) = Σ_s α_s(t) ∇φ_s(x)`.
    pub fn applied_field(&self, t: f64, x: [f64; 2]) -> [f64; 2] {
        let mut h = [0.0; 2];
        for s in &self.dipoles {
            let (p, d) = s.placement.at(t);
            let a = s.intensity.at(t, p[0]);
            if a == 0.0 {
                continue;
            }
            let f = field2(x, p, d, a);
            h[0] += f[0];
            h[1] += f[1];
        }
        h
    }

    /// Central difference approximation of `∂t h_a`.
    pub fn time_derivative(&self, t: f64, x: [f64; 2], dt: f64) -> [f64; 2] {
        let a = self.applied_field(t + dt, x);
        let b = self.applied_field(t - dt, x);
        [(a[0] - b[0]) / (2.0 * dt), (a[1] - b[1]) / (2.0 * dt)]
    }

    pub fn is_empty(&self) -> bool {
        self.dipoles.is_empty()
    }
}

/// A vector field sampled at every cell quadrature point, cell-major.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadField {
    pub n_qp: usize,
    pub values: Vec<[f64; 2]>,
}

impl QuadField {
    pub fn zeros(mesh: &Mesh, tables: &ElementTables) -> Self {
        Self { n_qp: tables.n_qp(), values: vec![[0.0; 2]; mesh.n_cells() * tables.n_qp()] }
    }

    pub fn sample(mesh: &Mesh, tables: &ElementTables, f: impl Fn([f64; 2]) -> [f64; 2]) -> Self {
        let n_qp = tables.n_qp();
        let mut values = Vec::with_capacity(mesh.n_cells() * n_qp);
        for cell in 0..mesh.n_cells() {
            let g = mesh.geom(cell);
            for q in 0..n_qp {
                values.push(f(g.map(tables.qpoints[q])));
            }
        }
        Self { n_qp, values }
    }

    #[inline]
    pub fn at(&self, cell: usize, q: usize) -> [f64; 2] {
        self.values[cell * self.n_qp + q]
    }

    /// `∫ |f|²` with the tables' weights.
    pub fn norm_squared(&self, mesh: &Mesh, tables: &ElementTables) -> f64 {
        let mut s = 0.0;
        for cell in 0..mesh.n_cells() {
            let jac = mesh.geom(cell).jacobian();
            for q in 0..self.n_qp {
                let v = self.at(cell, q);
                s += tables.qweights[q] * jac * (v[0] * v[0] + v[1] * v[1]);
            }
        }
        s
    }

    pub fn sub(&self, other: &QuadField) -> QuadField {
        QuadField {
            n_qp: self.n_qp,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
                .collect(),
        }
    }
}

/// How the constant in the pure Neumann potential problem is fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// Pin one DOF to zero, then shift to zero mean.
    PinAndProject,
    /// Enforce zero mean with a Lagrange multiplier.
    MeanMultiplier,
}

/// `∫ (f, ∇X_i)` for every basis function `X_i` of a scalar space.
pub fn load_against_gradients(x_space: &FESpace, f: &QuadField) -> Vec<f64> {
    let t = &x_space.tables;
    let mesh = &x_space.mesh;
    let mut b = vec![0.0; x_space.n_dofs()];
    for cell in 0..mesh.n_cells() {
        let g = mesh.geom(cell);
        let (sx, sy, jac) = (2.0 / g.hx, 2.0 / g.hy, g.jacobian());
        let dofs = x_space.cell_dofs(cell);
        for q in 0..t.n_qp() {
            let v = f.at(cell, q);
            let w = t.qweights[q] * jac;
            for (i, &d) in dofs.iter().enumerate() {
                let k = q * t.n_loc + i;
                b[d] += w * (v[0] * t.dxi[k] * sx + v[1] * t.deta[k] * sy);
            }
        }
    }
    b
}

/// `∫ (M, ∇X_i)` for a discontinuous vector `M`.
fn magnetization_against_gradients(x_space: &FESpace, m: &FEFunction) -> Vec<f64> {
    let mesh = &x_space.mesh;
    let t = &x_space.tables;
    let mut vals = Vec::with_capacity(mesh.n_cells() * t.n_qp());
    for cell in 0..mesh.n_cells() {
        vals.extend(m.on_cell(cell).points.iter().map(|p| p.value));
    }
    load_against_gradients(x_space, &QuadField { n_qp: t.n_qp(), values: vals })
}

/// Stiffness matrix `(∇φ_j, ∇φ_i)` of a scalar continuous space.
pub fn stiffness_matrix(space: &FESpace) -> CsrMatrix {
    let mesh = &space.mesh;
    let t = &space.tables;
    let n = t.n_loc;
    let mut pb = PatternBuilder::new(space.n_dofs(), space.n_dofs());
    for cell in 0..mesh.n_cells() {
        let d = space.cell_dofs(cell);
        pb.add_block(d, d);
    }
    let mut k = pb.build();
    let mut local = vec![0.0; n * n];
    for cell in 0..mesh.n_cells() {
        let g = mesh.geom(cell);
        let (sx, sy, jac) = (2.0 / g.hx, 2.0 / g.hy, g.jacobian());
        local.iter_mut().for_each(|v| *v = 0.0);
        for q in 0..t.n_qp() {
            let w = t.qweights[q] * jac;
            let row = q * n;
            for i in 0..n {
                let (ax, ay) = (t.dxi[row + i] * sx, t.deta[row + i] * sy);
                for j in 0..n {
                    local[i * n + j] += w * (ax * t.dxi[row + j] * sx + ay * t.deta[row + j] * sy);
                }
            }
        }
        let d = space.cell_dofs(cell);
        k.add_block(d, d, &local);
    }
    k
}

/// Factored Neumann problem `(∇Φ, ∇X) = ℓ(X)` on the potential space.
pub struct PotentialSolver {
    pub space: Arc<FESpace>,
    pub gauge: Gauge,
    stiffness: CsrMatrix,
    system: CsrMatrix,
    factor: LuFactor,
    mean: MeanFunctional,
    pin: usize,
}

impl PotentialSolver {
    pub fn new(space: &Arc<FESpace>, gauge: Gauge) -> Result<Self, MagneticsError> {
        let stiffness = stiffness_matrix(space);
        let mean = MeanFunctional::new(space);
        let n = space.n_dofs();
        let pin = 0;
        let system = match gauge {
            Gauge::PinAndProject => {
                let mut a = stiffness.clone();
                a.set_row_identity(pin);
                a
            }
            Gauge::MeanMultiplier => {
                let mut t = crate::linalg::TripletBuilder::new(n + 1, n + 1);
                for r in 0..n {
                    let (cols, vals) = stiffness.row(r);
                    for (&c, &v) in cols.iter().zip(vals) {
                        t.push(r, c, v);
                    }
                }
                let w = mean_weights(&mean, n);
                for (i, &wi) in w.iter().enumerate() {
                    t.push(i, n, wi);
                    t.push(n, i, wi);
                }
                t.finalize()
            }
        };
        let factor = LuFactor::new(&system, "potential")?;
        Ok(Self { space: space.clone(), gauge, stiffness, system, factor, mean, pin })
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    /// Solves with right-hand side `b_i = ℓ(X_i)` and returns the
    /// mean-zero potential.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.space.n_dofs();
        let mut rhs = b.to_vec();
        match self.gauge {
            Gauge::PinAndProject => rhs[self.pin] = 0.0,
            Gauge::MeanMultiplier => rhs.push(0.0),
        }
        let mut x = rhs.clone();
        self.factor.solve_in_place(&mut x);
        // one refinement sweep against the assembled system
        let (mut r, _) = self.system.residual(&x, &rhs);
        self.factor.solve_in_place(&mut r);
        x.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
        x.truncate(n);
        self.mean.project(&mut x);
        x
    }
}

fn mean_weights(mean: &MeanFunctional, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            mean.integral(&e)
        })
        .collect()
}

/// Solves `(∇Φ, ∇X) = (h_a − M, ∇X)` and returns `(Φ, H = ∇Φ)` with
/// `H` represented exactly in the magnetization space.
pub fn solve_potential(
    spaces: &SpaceBundle,
    m: &FEFunction,
    h_a: &QuadField,
    gauge: Gauge,
) -> Result<(FEFunction, FEFunction), MagneticsError> {
    let solver = PotentialSolver::new(&spaces.x, gauge)?;
    Ok(solve_potential_with(&solver, spaces, m, h_a))
}

/// [`solve_potential`] with a prebuilt solver.
pub fn solve_potential_with(
    solver: &PotentialSolver,
    spaces: &SpaceBundle,
    m: &FEFunction,
    h_a: &QuadField,
) -> (FEFunction, FEFunction) {
    let mut b = load_against_gradients(&spaces.x, h_a);
    let bm = magnetization_against_gradients(&spaces.x, m);
    b.iter_mut().zip(&bm).for_each(|(a, c)| *a -= c);
    let phi = FEFunction { space: spaces.x.clone(), coeffs: solver.solve(&b) };
    let h = gradient_into(&phi, &spaces.m);
    (phi, h)
}

/// `‖H‖² − (h_a − M, H)`, which vanishes for an exact potential solve.
pub fn potential_identity_defect(h: &FEFunction, m: &FEFunction, h_a: &QuadField) -> (f64, f64) {
    let mesh = &h.space.mesh;
    let t = &h.space.tables;
    let mut hh = 0.0;
    let mut rhs = 0.0;
    let mut scale = 0.0;
    for cell in 0..mesh.n_cells() {
        let jac = mesh.geom(cell).jacobian();
        let (qh, qm) = (h.on_cell(cell), m.on_cell(cell));
        for q in 0..t.n_qp() {
            let w = t.qweights[q] * jac;
            let (hv, mv, av) = (qh.points[q].value, qm.points[q].value, h_a.at(cell, q));
            hh += w * (hv[0] * hv[0] + hv[1] * hv[1]);
            let a = (av[0] - mv[0]) * hv[0] + (av[1] - mv[1]) * hv[1];
            rhs += w * a;
            scale += w * a.abs();
        }
    }
    (hh - rhs, scale.max(hh))
}
