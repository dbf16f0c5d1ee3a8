//! Discrete variational forms in their planar reduction.
//!
//! The functions here evaluate forms on given finite element functions by
//! quadrature. They are the reference definitions: the time stepper
//! assembles matrices from the same integrands through its own code path,
//! and the test suite compares the two.
//!
//! Planar conventions, with `w` a scalar spin and `u, m, h` in-plane vectors:
//!
//! | quantity    | definition              |
//! |-------------|-------------------------|
//! | `curl u`    | `∂x u₂ − ∂y u₁`         |
//! | `curl w`    | `(∂y w, −∂x w)`         |
//! | `m × h`     | `m₁h₂ − m₂h₁`           |
//! | `w × m`     | `w (−m₂, m₁)`           |
//! | `m × w`     | `w (m₂, −m₁)`           |
//! | `a × n`     | `a₁n₂ − a₂n₁`           |
//! | `(c ẑ × n)·z` | `c (n₁z₂ − n₂z₁)`     |

use std::sync::Arc;

use thiserror::Error;

use crate::fem::{FEFunction, PointValue};
use crate::mesh::Mesh;

#[derive(Debug, Error, PartialEq)]
pub enum FormError {
    #[error("arguments live on different meshes")]
    MixedMeshes,
    #[error("arguments use different quadrature rules")]
    MixedQuadrature,
    #[error("argument {index} has {got} components, expected {expected}")]
    Components { index: usize, expected: usize, got: usize },
}

/// Scalar curl of a planar vector field from its gradient.
#[inline]
pub fn curl_of_vector(grad: &[[f64; 2]; 2]) -> f64 {
    grad[1][0] - grad[0][1]
}

/// Vector curl of a scalar field from its gradient.
#[inline]
pub fn curl_of_scalar(grad: [f64; 2]) -> [f64; 2] {
    [grad[1], -grad[0]]
}

#[inline]
pub fn div_of_vector(grad: &[[f64; 2]; 2]) -> f64 {
    grad[0][0] + grad[1][1]
}

/// `m × h` for two planar vectors (a scalar).
#[inline]
pub fn cross(m: [f64; 2], h: [f64; 2]) -> f64 {
    m[0] * h[1] - m[1] * h[0]
}

/// `w × m` for a scalar spin and a planar vector.
#[inline]
pub fn spin_cross(w: f64, m: [f64; 2]) -> [f64; 2] {
    [-w * m[1], w * m[0]]
}

/// `m × w` for a planar vector and a scalar spin.
#[inline]
pub fn cross_spin(m: [f64; 2], w: f64) -> [f64; 2] {
    [w * m[1], -w * m[0]]
}

/// `(c ẑ × n) · z`.
#[inline]
pub fn zcross_dot(c: f64, n: [f64; 2], z: [f64; 2]) -> f64 {
    c * (n[0] * z[1] - n[1] * z[0])
}

#[inline]
pub fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Interior-penalty, Robin and diffusion coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FormCoefficients {
    /// Penalty; the face weight is `eta / h_F`.
    pub eta: f64,
    /// Robin coefficient.
    pub gamma: f64,
    /// Magnetic diffusion.
    pub sigma: f64,
}

impl FormCoefficients {
    /// Penalty `10 ℓ²` for degree `ℓ`.
    pub fn default_penalty(degree: usize) -> f64 {
        10.0 * (degree * degree) as f64
    }
}

fn check(fns: &[&FEFunction]) -> Result<Arc<Mesh>, FormError> {
    let first = fns[0];
    for f in fns {
        if !Arc::ptr_eq(&f.space.mesh, &first.space.mesh) {
            return Err(FormError::MixedMeshes);
        }
        if f.space.tables.nq != first.space.tables.nq {
            return Err(FormError::MixedQuadrature);
        }
    }
    Ok(first.space.mesh.clone())
}

fn need(f: &FEFunction, index: usize, expected: usize) -> Result<(), FormError> {
    if f.components() != expected {
        return Err(FormError::Components { index, expected, got: f.components() });
    }
    Ok(())
}

/// `Σ_T ∫_T g(x, values)` where `values[k]` holds the k-th function's
/// value and gradient at `x`.
pub fn cell_integral(
    fns: &[&FEFunction],
    g: impl Fn([f64; 2], &[PointValue]) -> f64,
) -> Result<f64, FormError> {
    let mesh = check(fns)?;
    let t = &fns[0].space.tables;
    let mut total = 0.0;
    let mut vals = vec![PointValue::default(); fns.len()];
    for cell in 0..mesh.n_cells() {
        let geom = mesh.geom(cell);
        let qv: Vec<_> = fns.iter().map(|f| f.on_cell(cell)).collect();
        let mut s = 0.0;
        for q in 0..t.n_qp() {
            for k in 0..fns.len() {
                vals[k] = qv[k].points[q];
            }
            s += t.qweights[q] * g(geom.map(t.qpoints[q]), &vals);
        }
        total += s * geom.jacobian();
    }
    Ok(total)
}

/// Traces of a face: minus values, plus values, unit normal, point.
pub struct FaceTrace<'a> {
    pub minus: &'a [PointValue],
    pub plus: &'a [PointValue],
    pub normal: [f64; 2],
    pub x: [f64; 2],
    pub length: f64,
}

/// `Σ_F ∫_F g(trace)` over internal faces.
pub fn face_integral(fns: &[&FEFunction], g: impl Fn(&FaceTrace) -> f64) -> Result<f64, FormError> {
    let mesh = check(fns)?;
    let t = &fns[0].space.tables;
    let mut total = 0.0;
    let mut minus = vec![PointValue::default(); fns.len()];
    let mut plus = vec![PointValue::default(); fns.len()];
    for f in &mesh.internal_faces {
        let qm: Vec<_> = fns.iter().map(|u| u.on_side(f.minus, f.minus_side)).collect();
        let qp: Vec<_> = fns.iter().map(|u| u.on_side(f.plus, f.plus_side)).collect();
        let mut s = 0.0;
        for q in 0..t.n_face_qp() {
            for k in 0..fns.len() {
                minus[k] = qm[k].points[q];
                plus[k] = qp[k].points[q];
            }
            let tr = FaceTrace {
                minus: &minus,
                plus: &plus,
                normal: f.normal,
                x: f.segment.point(t.face_t[q]),
                length: f.length,
            };
            s += t.face_w[q] * g(&tr);
        }
        total += s * 0.5 * f.length;
    }
    Ok(total)
}

/// `∫_Γ g(x, n, values)` over the domain boundary.
pub fn boundary_integral(
    fns: &[&FEFunction],
    g: impl Fn([f64; 2], [f64; 2], &[PointValue]) -> f64,
) -> Result<f64, FormError> {
    let mesh = check(fns)?;
    let t = &fns[0].space.tables;
    let mut total = 0.0;
    let mut vals = vec![PointValue::default(); fns.len()];
    for f in &mesh.boundary_faces {
        let qv: Vec<_> = fns.iter().map(|u| u.on_side(f.cell, f.side)).collect();
        let mut s = 0.0;
        for q in 0..t.n_face_qp() {
            for k in 0..fns.len() {
                vals[k] = qv[k].points[q];
            }
            s += t.face_w[q] * g(f.segment.point(t.face_t[q]), f.normal, &vals);
        }
        total += s * 0.5 * f.length;
    }
    Ok(total)
}

fn jump(m: &PointValue, p: &PointValue) -> [f64; 2] {
    [m.value[0] - p.value[0], m.value[1] - p.value[1]]
}

fn avg(m: &PointValue, p: &PointValue) -> [f64; 2] {
    [0.5 * (m.value[0] + p.value[0]), 0.5 * (m.value[1] + p.value[1])]
}

/// Convective value `(u·∇)v·w + ½ div u (v·w)` at a point, for scalar or
/// vector `v, w` with `nc` components.
#[inline]
fn temam_point(u: &PointValue, v: &PointValue, w: &PointValue, nc: usize) -> f64 {
    let divu = div_of_vector(&u.grad);
    let mut s = 0.0;
    for c in 0..nc {
        let conv = u.value[0] * v.grad[c][0] + u.value[1] * v.grad[c][1];
        s += conv * w.value[c] + 0.5 * divu * v.value[c] * w.value[c];
    }
    s
}

/// Skew-symmetric convection `Σ_T ∫ (U·∇)V·W + ½ div U (V·W)` for
/// continuous `V, W` (scalar or vector).
pub fn b_h(u: &FEFunction, v: &FEFunction, w: &FEFunction) -> Result<f64, FormError> {
    need(u, 0, 2)?;
    let nc = v.components();
    need(w, 2, nc)?;
    cell_integral(&[u, v, w], |_, p| temam_point(&p[0], &p[1], &p[2], nc))
}

/// Convection for discontinuous arguments: the cell terms of [`b_h`] minus
/// `Σ_F ∫_F (⟦V⟧·{{W}})(U·n_F)`.
pub fn b_h_m(u: &FEFunction, v: &FEFunction, w: &FEFunction) -> Result<f64, FormError> {
    need(u, 0, 2)?;
    need(v, 1, 2)?;
    need(w, 2, 2)?;
    let cells = cell_integral(&[u, v, w], |_, p| temam_point(&p[0], &p[1], &p[2], 2))?;
    let faces = face_integral(&[u, v, w], |f| {
        let un = dot(f.minus[0].value, f.normal);
        dot(jump(&f.minus[1], &f.plus[1]), avg(&f.minus[2], &f.plus[2])) * un
    })?;
    Ok(cells - faces)
}

/// Interior-penalty form for `(curl M, curl Z)`.
pub fn curl_h(m: &FEFunction, z: &FEFunction, eta: f64) -> Result<f64, FormError> {
    need(m, 0, 2)?;
    need(z, 1, 2)?;
    let cells = cell_integral(&[m, z], |_, p| curl_of_vector(&p[0].grad) * curl_of_vector(&p[1].grad))?;
    let faces = face_integral(&[m, z], |f| {
        let n = f.normal;
        let cm = 0.5 * (curl_of_vector(&f.minus[0].grad) + curl_of_vector(&f.plus[0].grad));
        let cz = 0.5 * (curl_of_vector(&f.minus[1].grad) + curl_of_vector(&f.plus[1].grad));
        let jm = jump(&f.minus[0], &f.plus[0]);
        let jz = jump(&f.minus[1], &f.plus[1]);
        -(zcross_dot(cm, n, jz) + zcross_dot(cz, n, jm)) + eta / f.length * cross(jm, n) * cross(jz, n)
    })?;
    Ok(cells + faces)
}

/// Interior-penalty form for `(div M, div Z)`.
pub fn div_h(m: &FEFunction, z: &FEFunction, eta: f64) -> Result<f64, FormError> {
    need(m, 0, 2)?;
    need(z, 1, 2)?;
    let cells = cell_integral(&[m, z], |_, p| div_of_vector(&p[0].grad) * div_of_vector(&p[1].grad))?;
    let faces = face_integral(&[m, z], |f| {
        let n = f.normal;
        let dm = 0.5 * (div_of_vector(&f.minus[0].grad) + div_of_vector(&f.plus[0].grad));
        let dz = 0.5 * (div_of_vector(&f.minus[1].grad) + div_of_vector(&f.plus[1].grad));
        let jm = dot(jump(&f.minus[0], &f.plus[0]), n);
        let jz = dot(jump(&f.minus[1], &f.plus[1]), n);
        -(dm * jz + dz * jm) + eta / f.length * jm * jz
    })?;
    Ok(cells + faces)
}

/// Vector Laplacian surrogate `a_h = curl_h + div_h`.
pub fn a_h(m: &FEFunction, z: &FEFunction, eta: f64) -> Result<f64, FormError> {
    Ok(curl_h(m, z, eta)? + div_h(m, z, eta)?)
}

/// Broken seminorm `|M|_a`.
pub fn dg_seminorm(m: &FEFunction) -> Result<f64, FormError> {
    need(m, 0, 2)?;
    let cells = cell_integral(&[m], |_, p| curl_of_vector(&p[0].grad).powi(2) + div_of_vector(&p[0].grad).powi(2))?;
    let faces = face_integral(&[m], |f| {
        let j = jump(&f.minus[0], &f.plus[0]);
        (dot(j, f.normal).powi(2) + cross(j, f.normal).powi(2)) / f.length
    })?;
    Ok((cells + faces).max(0.0).sqrt())
}

/// Robin boundary terms of the magnetization equation, returned as
/// `(lhs, rhs)`:
/// `lhs = σγ[(M×n, Z×n)_Γ + (M·n, Z·n)_Γ]`,
/// `rhs = σγκ0[(H×n, Z×n)_Γ + (H·n, Z·n)_Γ]`.
pub fn robin_boundary_forms(
    m: &FEFunction,
    z: &FEFunction,
    h: &FEFunction,
    sigma: f64,
    gamma: f64,
    kappa0: f64,
) -> Result<(f64, f64), FormError> {
    if sigma == 0.0 || gamma == 0.0 {
        return Ok((0.0, 0.0));
    }
    need(m, 0, 2)?;
    need(z, 1, 2)?;
    need(h, 2, 2)?;
    let pair = |a: [f64; 2], b: [f64; 2], n: [f64; 2]| cross(a, n) * cross(b, n) + dot(a, n) * dot(b, n);
    let lhs = boundary_integral(&[m, z], |_, n, p| pair(p[0].value, p[1].value, n))?;
    let rhs = boundary_integral(&[h, z], |_, n, p| pair(p[0].value, p[1].value, n))?;
    Ok((sigma * gamma * lhs, sigma * gamma * kappa0 * rhs))
}
