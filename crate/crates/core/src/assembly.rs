//! Fixed-pattern assembly of the linear systems solved in one nonlinear
//! iteration: magnetization with potential, spin, and velocity with
//! pressure. Sparsity patterns are built once per mesh so that the cached
//! factorizations can be reused across iterations and steps.

use crate::fem::{FEFunction, FESpace, SpaceBundle};
use crate::forms::{cross, dot, zcross_dot};
use crate::linalg::{BlockLayout, CsrMatrix, PatternBuilder};
use crate::magnetics::QuadField;
use crate::mesh::Side;
use crate::scheme::MaterialParams;

/// Cell quadrature data in physical coordinates for one cell.
struct Frame {
    /// Quadrature weight times Jacobian.
    jw: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl Frame {
    fn new(space: &FESpace, cell: usize) -> Self {
        let t = &space.tables;
        let g = space.geom(cell);
        let (sx, sy, jac) = (2.0 / g.hx, 2.0 / g.hy, g.jacobian());
        Self {
            jw: t.qweights.iter().map(|w| w * jac).collect(),
            gx: t.dxi.iter().map(|d| d * sx).collect(),
            gy: t.deta.iter().map(|d| d * sy).collect(),
        }
    }

    fn face(space: &FESpace, cell: usize, side: Side) -> (Vec<f64>, Vec<f64>) {
        let t = &space.tables;
        let g = space.geom(cell);
        let s = side.index();
        (
            t.face_dxi[s].iter().map(|d| d * 2.0 / g.hx).collect(),
            t.face_deta[s].iter().map(|d| d * 2.0 / g.hy).collect(),
        )
    }
}

/// What drives the magnetization equation.
pub enum MagneticDrive<'a> {
    /// Field from the potential solved together with the magnetization;
    /// `extra` is an additional vector load tested against gradients.
    Potential { h_a: &'a QuadField, extra: Option<&'a QuadField> },
    /// Prescribed field in the magnetization space.
    Fixed { h: &'a FEFunction },
}

/// Prebuilt patterns, block layouts and mass matrices for one mesh.
pub struct Assembler {
    pub spaces: SpaceBundle,
    pub coupled_layout: BlockLayout,
    pub flow_layout: BlockLayout,
    coupled_pattern: CsrMatrix,
    magnetization_pattern: CsrMatrix,
    spin_pattern: CsrMatrix,
    flow_pattern: CsrMatrix,
    pub mass_u: CsrMatrix,
    pub mass_w: CsrMatrix,
    pub mass_m: CsrMatrix,
    pub stiffness_x: CsrMatrix,
    /// Potential DOF fixed to zero before mean projection.
    pub potential_pin: usize,
    /// Pressure DOF fixed to zero when the velocity is enclosed.
    pub pressure_pin: Option<usize>,
}

fn vector_dofs(space: &FESpace, cell: usize, offset: usize) -> Vec<usize> {
    let ns = space.n_scalar();
    let d = space.cell_dofs(cell);
    (0..space.components).flat_map(|c| d.iter().map(move |&i| offset + i + c * ns)).collect()
}

fn faces_pattern(pb: &mut PatternBuilder, spaces: &SpaceBundle, offset: usize) {
    for f in &spaces.mesh.internal_faces {
        let a = vector_dofs(&spaces.m, f.minus, offset);
        let b = vector_dofs(&spaces.m, f.plus, offset);
        pb.add_block(&a, &b);
        pb.add_block(&b, &a);
    }
}

fn scalar_mass(space: &FESpace) -> CsrMatrix {
    let mut pb = PatternBuilder::new(space.n_dofs(), space.n_dofs());
    let cells = space.mesh.n_cells();
    for cell in 0..cells {
        let d = vector_dofs(space, cell, 0);
        pb.add_block(&d, &d);
    }
    let mut a = pb.build();
    let t = &space.tables;
    let n = t.n_loc;
    let ns = space.n_scalar();
    for cell in 0..cells {
        let fr = Frame::new(space, cell);
        let d = space.cell_dofs(cell);
        let mut local = vec![0.0; n * n];
        for q in 0..t.n_qp() {
            for i in 0..n {
                for j in 0..n {
                    local[i * n + j] += fr.jw[q] * t.val[q * n + i] * t.val[q * n + j];
                }
            }
        }
        for c in 0..space.components {
            let dd: Vec<usize> = d.iter().map(|&i| i + c * ns).collect();
            a.add_block(&dd, &dd, &local);
        }
    }
    a
}

impl Assembler {
    pub fn new(spaces: SpaceBundle) -> Self {
        let (n_m, n_x) = (spaces.m.n_dofs(), spaces.x.n_dofs());
        let (n_u, n_p, n_w) = (spaces.u.n_dofs(), spaces.p.n_dofs(), spaces.w.n_dofs());
        let coupled_layout = BlockLayout::new(&[("m", n_m), ("phi", n_x)]);
        let flow_layout = BlockLayout::new(&[("u", n_u), ("p", n_p)]);
        let cells = spaces.mesh.n_cells();

        let mut pb = PatternBuilder::new(n_m + n_x, n_m + n_x);
        for cell in 0..cells {
            let m = vector_dofs(&spaces.m, cell, 0);
            let x: Vec<usize> = spaces.x.cell_dofs(cell).iter().map(|&i| i + n_m).collect();
            pb.add_block(&m, &m);
            pb.add_block(&m, &x);
            pb.add_block(&x, &m);
            pb.add_block(&x, &x);
        }
        faces_pattern(&mut pb, &spaces, 0);
        let coupled_pattern = pb.build();

        let mut pb = PatternBuilder::new(n_m, n_m);
        for cell in 0..cells {
            let m = vector_dofs(&spaces.m, cell, 0);
            pb.add_block(&m, &m);
        }
        faces_pattern(&mut pb, &spaces, 0);
        let magnetization_pattern = pb.build();

        let mut pb = PatternBuilder::new(n_w, n_w);
        for cell in 0..cells {
            let w = spaces.w.cell_dofs(cell);
            pb.add_block(w, w);
        }
        let spin_pattern = pb.build();

        let mut pb = PatternBuilder::new(n_u + n_p, n_u + n_p);
        for cell in 0..cells {
            let u = vector_dofs(&spaces.u, cell, 0);
            let p: Vec<usize> = spaces.p.cell_dofs(cell).iter().map(|&i| i + n_u).collect();
            pb.add_block(&u, &u);
            pb.add_block(&u, &p);
            pb.add_block(&p, &u);
            // pressure diagonal, so pinned rows have a structural entry
            for &i in &p {
                pb.add(i, i);
            }
        }
        let flow_pattern = pb.build();

        let pressure_pin = if spaces.u.dirichlet.all() { Some(0) } else { None };
        Self {
            mass_u: scalar_mass(&spaces.u),
            mass_w: scalar_mass(&spaces.w),
            mass_m: scalar_mass(&spaces.m),
            stiffness_x: crate::magnetics::stiffness_matrix(&spaces.x),
            coupled_layout,
            flow_layout,
            coupled_pattern,
            magnetization_pattern,
            spin_pattern,
            flow_pattern,
            potential_pin: 0,
            pressure_pin,
            spaces,
        }
    }

    /// Magnetization system, coupled to the potential for
    /// [`MagneticDrive::Potential`] and standalone for [`MagneticDrive::Fixed`]:
    ///
    /// `(M,Z) − τ b_h^m(U,Z,M) + τ(M×W,Z) + (τ/𝒯)(M,Z) + τσ a_h(M,Z) + Robin
    ///  − (τκ0/𝒯)(H,Z) = (M_prev,Z) + τ(f_m,Z)`,
    ///
    /// plus `(M,∇X) + (∇Φ,∇X) = (h_a + extra,∇X)` in the coupled case.
    #[allow(clippy::too_many_arguments)]
    pub fn magnetization_system(
        &self,
        p: &MaterialParams,
        tau: f64,
        u: &FEFunction,
        w: &FEFunction,
        m_prev: &FEFunction,
        drive: &MagneticDrive,
        f_m: Option<&QuadField>,
    ) -> (CsrMatrix, Vec<f64>) {
        let s = &self.spaces;
        let coupled = matches!(drive, MagneticDrive::Potential { .. });
        let mut a = if coupled { self.coupled_pattern.clone() } else { self.magnetization_pattern.clone() };
        let mut b = vec![0.0; a.nrows];
        let t = &s.m.tables;
        let n = t.n_loc;
        let nm = s.m.n_dofs();
        let ns = s.m.n_scalar();
        let eta = p.penalty(s.degree);
        let react = 1.0 + tau / p.relaxation_time;
        let kt = tau * p.kappa0 / p.relaxation_time;
        let diffuse = tau * p.sigma;

        let mut lmm = vec![0.0; 4 * n * n];
        let mut lmx = vec![0.0; 2 * n * n];
        let mut lxm = vec![0.0; 2 * n * n];
        let mut lxx = vec![0.0; n * n];
        for cell in 0..s.mesh.n_cells() {
            let fr = Frame::new(&s.m, cell);
            let (uq, wq, mq) = (u.on_cell(cell), w.on_cell(cell), m_prev.on_cell(cell));
            let hq = match drive {
                MagneticDrive::Fixed { h } => Some(h.on_cell(cell)),
                _ => None,
            };
            lmm.iter_mut().for_each(|v| *v = 0.0);
            lmx.iter_mut().for_each(|v| *v = 0.0);
            lxm.iter_mut().for_each(|v| *v = 0.0);
            lxx.iter_mut().for_each(|v| *v = 0.0);
            let mdofs = vector_dofs(&s.m, cell, 0);
            let xdofs: Vec<usize> = s.x.cell_dofs(cell).iter().map(|&i| i + nm).collect();
            for q in 0..t.n_qp() {
                let jw = fr.jw[q];
                let up = uq.points[q];
                let vel = up.value;
                let divu = up.grad[0][0] + up.grad[1][1];
                let spin = wq.points[q].value[0];
                let row = q * n;
                let mut load = mq.points[q].value;
                if let Some(f) = f_m {
                    let fv = f.at(cell, q);
                    load[0] += tau * fv[0];
                    load[1] += tau * fv[1];
                }
                if let Some(hq) = &hq {
                    let hv = hq.points[q].value;
                    load[0] += kt * hv[0];
                    load[1] += kt * hv[1];
                }
                for i in 0..n {
                    let vi = t.val[row + i];
                    let (gxi, gyi) = (fr.gx[row + i], fr.gy[row + i]);
                    let adv = vel[0] * gxi + vel[1] * gyi;
                    b[mdofs[i]] += jw * vi * load[0];
                    b[mdofs[i + n]] += jw * vi * load[1];
                    for j in 0..n {
                        let vj = t.val[row + j];
                        let (gxj, gyj) = (fr.gx[row + j], fr.gy[row + j]);
                        let mass = jw * vi * vj;
                        let diag = react * mass - tau * jw * (adv * vj + 0.5 * divu * vi * vj);
                        lmm[i * 2 * n + j] += diag;
                        lmm[(i + n) * 2 * n + j + n] += diag;
                        // (M×W)·Z = W (M2 Z1 − M1 Z2)
                        lmm[i * 2 * n + j + n] += tau * spin * mass;
                        lmm[(i + n) * 2 * n + j] -= tau * spin * mass;
                        if diffuse > 0.0 {
                            // curl(φe1) = −∂yφ, curl(φe2) = ∂xφ; div(φe_c) = ∂_cφ
                            let d = diffuse * jw;
                            lmm[i * 2 * n + j] += d * (gyi * gyj + gxi * gxj);
                            lmm[i * 2 * n + j + n] += d * (-gyi * gxj + gxi * gyj);
                            lmm[(i + n) * 2 * n + j] += d * (-gxi * gyj + gyi * gxj);
                            lmm[(i + n) * 2 * n + j + n] += d * (gxi * gxj + gyi * gyj);
                        }
                        if coupled {
                            lmx[i * n + j] -= kt * jw * vi * gxj;
                            lmx[(i + n) * n + j] -= kt * jw * vi * gyj;
                            lxm[i * 2 * n + j] += jw * vj * gxi;
                            lxm[i * 2 * n + j + n] += jw * vj * gyi;
                            lxx[i * n + j] += jw * (gxi * gxj + gyi * gyj);
                        }
                    }
                }
                if let MagneticDrive::Potential { h_a, extra } = drive {
                    let mut g = h_a.at(cell, q);
                    if let Some(e) = extra {
                        let ev = e.at(cell, q);
                        g[0] += ev[0];
                        g[1] += ev[1];
                    }
                    for i in 0..n {
                        b[xdofs[i]] += jw * (g[0] * fr.gx[row + i] + g[1] * fr.gy[row + i]);
                    }
                }
            }
            a.add_block(&mdofs, &mdofs, &lmm);
            if coupled {
                a.add_block(&mdofs, &xdofs, &lmx);
                a.add_block(&xdofs, &mdofs, &lxm);
                a.add_block(&xdofs, &xdofs, &lxx);
            }
        }

        self.magnetization_faces(&mut a, p, tau, u, eta);
        if p.sigma > 0.0 && p.gamma > 0.0 {
            self.robin_terms(&mut a, &mut b, p, tau, drive);
        }
        let _ = ns;
        if coupled {
            let pin = nm + self.potential_pin;
            a.set_row_identity(pin);
            b[pin] = 0.0;
        }
        (a, b)
    }

    /// Interior-face terms: `+τ Σ_F ∫ (⟦Z⟧·{{M}})(U·n)` and, for σ > 0,
    /// the face part of `τσ a_h(M, Z)`.
    fn magnetization_faces(&self, a: &mut CsrMatrix, p: &MaterialParams, tau: f64, u: &FEFunction, eta: f64) {
        let s = &self.spaces;
        let t = &s.m.tables;
        let n = t.n_loc;
        let nf = t.n_face_qp();
        let diffuse = tau * p.sigma;
        let mut local = vec![0.0; 16 * n * n];
        for f in &s.mesh.internal_faces {
            let uq = u.on_side(f.minus, f.minus_side);
            let sides = [(f.minus, f.minus_side, 1.0), (f.plus, f.plus_side, -1.0)];
            let dofs: Vec<usize> =
                sides.iter().flat_map(|&(c, _, _)| vector_dofs(&s.m, c, 0)).collect();
            let grads: Vec<(Vec<f64>, Vec<f64>)> =
                sides.iter().map(|&(c, side, _)| Frame::face(&s.m, c, side)).collect();
            let nrm = f.normal;
            local.iter_mut().for_each(|v| *v = 0.0);
            // local index: side * 2n + comp * n + i
            let dim = 4 * n;
            let (mut jump, mut avg) = (vec![[0.0; 2]; dim], vec![[0.0; 2]; dim]);
            let (mut ac, mut ad) = (vec![0.0; dim], vec![0.0; dim]);
            for q in 0..nf {
                let wt = t.face_w[q] * 0.5 * f.length;
                let un = dot(uq.points[q].value, nrm);
                if diffuse == 0.0 && un == 0.0 {
                    continue;
                }
                // per basis: jump vector, average curl, average div
                for (k, &(_, side, sign)) in sides.iter().enumerate() {
                    let vals = &t.face_val[side.index()];
                    let (gx, gy) = (&grads[k].0, &grads[k].1);
                    for c in 0..2 {
                        for i in 0..n {
                            let idx = k * 2 * n + c * n + i;
                            let v = vals[q * n + i];
                            jump[idx][c] = sign * v;
                            avg[idx][c] = 0.5 * v;
                            let (dx, dy) = (gx[q * n + i], gy[q * n + i]);
                            ac[idx] = 0.5 * if c == 0 { -dy } else { dx };
                            ad[idx] = 0.5 * if c == 0 { dx } else { dy };
                        }
                    }
                }
                if diffuse == 0.0 {
                    // only equal components couple
                    for r in 0..dim {
                        let cr = (r / n) % 2;
                        for c in (0..dim).filter(|c| (c / n) % 2 == cr) {
                            local[r * dim + c] += wt * tau * un * jump[r][cr] * avg[c][cr];
                        }
                    }
                    continue;
                }
                for r in 0..dim {
                    for c in 0..dim {
                        let mut v = tau * un * dot(jump[r], avg[c]);
                        if diffuse > 0.0 {
                            let (jr, jc) = (jump[r], jump[c]);
                            let curl = -(zcross_dot(ac[c], nrm, jr) + zcross_dot(ac[r], nrm, jc))
                                + eta / f.length * cross(jc, nrm) * cross(jr, nrm);
                            let div = -(ad[c] * dot(jr, nrm) + ad[r] * dot(jc, nrm))
                                + eta / f.length * dot(jc, nrm) * dot(jr, nrm);
                            v += diffuse * (curl + div);
                        }
                        local[r * dim + c] += wt * v;
                    }
                }
            }
            a.add_block(&dofs, &dofs, &local);
        }
    }

    /// Boundary terms `τσγ[(M×n,Z×n) + (M·n,Z·n)]` on the left and the
    /// matching field terms with weight `τσγκ0` on the right (implicit in
    /// the potential when coupled).
    fn robin_terms(&self, a: &mut CsrMatrix, b: &mut [f64], p: &MaterialParams, tau: f64, drive: &MagneticDrive) {
        let s = &self.spaces;
        let t = &s.m.tables;
        let n = t.n_loc;
        let nm = s.m.n_dofs();
        let c_m = tau * p.sigma * p.gamma;
        let c_h = c_m * p.kappa0;
        let pair = |x: [f64; 2], z: [f64; 2], nrm: [f64; 2]| cross(x, nrm) * cross(z, nrm) + dot(x, nrm) * dot(z, nrm);
        for f in &s.mesh.boundary_faces {
            let vals = &t.face_val[f.side.index()];
            let mdofs = vector_dofs(&s.m, f.cell, 0);
            let xdofs: Vec<usize> = s.x.cell_dofs(f.cell).iter().map(|&i| i + nm).collect();
            let (gx, gy) = Frame::face(&s.x, f.cell, f.side);
            let hq = match drive {
                MagneticDrive::Fixed { h } => Some(h.on_side(f.cell, f.side)),
                _ => None,
            };
            let mut lmm = vec![0.0; 4 * n * n];
            let mut lmx = vec![0.0; 2 * n * n];
            for q in 0..t.n_face_qp() {
                let wt = t.face_w[q] * 0.5 * f.length;
                for ci in 0..2 {
                    for i in 0..n {
                        let mut zi = [0.0; 2];
                        zi[ci] = vals[q * n + i];
                        let r = ci * n + i;
                        if let Some(hq) = &hq {
                            b[mdofs[r]] += wt * c_h * pair(hq.points[q].value, zi, f.normal);
                        }
                        for cj in 0..2 {
                            for j in 0..n {
                                let mut mj = [0.0; 2];
                                mj[cj] = vals[q * n + j];
                                lmm[r * 2 * n + cj * n + j] += wt * c_m * pair(mj, zi, f.normal);
                            }
                        }
                        if hq.is_none() {
                            for j in 0..n {
                                let g = [gx[q * n + j], gy[q * n + j]];
                                lmx[r * n + j] -= wt * c_h * pair(g, zi, f.normal);
                            }
                        }
                    }
                }
            }
            a.add_block(&mdofs, &mdofs, &lmm);
            if hq.is_none() {
                a.add_block(&mdofs, &xdofs, &lmx);
            }
        }
    }

    /// Spin system
    /// `ȷ(W,X) + τ[ȷ b_h(U,W,X) + c1(∇W,∇X) + 4ν_r(W,X)]
    ///  = ȷ(W_prev,X) + τ[2ν_r(curl U,X) + μ0(M×H,X) + (f_w,X)]`
    /// with boundary rows replaced by the trace values `g`.
    #[allow(clippy::too_many_arguments)]
    pub fn spin_system(
        &self,
        p: &MaterialParams,
        tau: f64,
        u: &FEFunction,
        w_prev: &FEFunction,
        m: &FEFunction,
        h: &FEFunction,
        f_w: Option<&[f64]>,
        trace: Option<&[f64]>,
    ) -> (CsrMatrix, Vec<f64>) {
        let s = &self.spaces;
        let mut a = self.spin_pattern.clone();
        let mut b = vec![0.0; a.nrows];
        let t = &s.w.tables;
        let n = t.n_loc;
        let nq = t.n_qp();
        let mut local = vec![0.0; n * n];
        for cell in 0..s.mesh.n_cells() {
            let fr = Frame::new(&s.w, cell);
            let (uq, wq, mq, hq) = (u.on_cell(cell), w_prev.on_cell(cell), m.on_cell(cell), h.on_cell(cell));
            let dofs = s.w.cell_dofs(cell);
            local.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..nq {
                let jw = fr.jw[q];
                let up = uq.points[q];
                let vel = up.value;
                let divu = up.grad[0][0] + up.grad[1][1];
                let curlu = up.grad[1][0] - up.grad[0][1];
                let (mv, hv) = (mq.points[q].value, hq.points[q].value);
                let mut load = p.inertia * wq.points[q].value[0]
                    + tau * (2.0 * p.nu_r * curlu + p.mu0 * cross(mv, hv));
                if let Some(f) = f_w {
                    load += tau * f[cell * nq + q];
                }
                let row = q * n;
                for i in 0..n {
                    let vi = t.val[row + i];
                    b[dofs[i]] += jw * vi * load;
                    for j in 0..n {
                        let vj = t.val[row + j];
                        let (gxj, gyj) = (fr.gx[row + j], fr.gy[row + j]);
                        let adv = vel[0] * gxj + vel[1] * gyj;
                        local[i * n + j] += jw
                            * ((p.inertia + 4.0 * tau * p.nu_r) * vi * vj
                                + tau * p.inertia * (adv * vi + 0.5 * divu * vj * vi)
                                + tau * p.c1 * (fr.gx[row + i] * gxj + fr.gy[row + i] * gyj));
                    }
                }
            }
            a.add_block(dofs, dofs, &local);
        }
        for d in s.w.constrained_dofs() {
            a.set_row_identity(d);
            b[d] = trace.map_or(0.0, |g| g[d]);
        }
        (a, b)
    }

    /// Velocity-pressure system
    /// `(U,V) + τ[b_h(U_lag,U,V) + ν0(∇U,∇V) − (P,div V)] − τ(Q, div U)
    ///  = (U_prev,V) + τ[2ν_r(curl W,V) + μ0 b_h^m(V,H,M) + (f_u,V)]`.
    #[allow(clippy::too_many_arguments)]
    pub fn flow_system(
        &self,
        p: &MaterialParams,
        tau: f64,
        u_lag: &FEFunction,
        u_prev: &FEFunction,
        w: &FEFunction,
        m: &FEFunction,
        h: &FEFunction,
        f_u: Option<&QuadField>,
        trace: Option<&[f64]>,
    ) -> (CsrMatrix, Vec<f64>) {
        let s = &self.spaces;
        let mut a = self.flow_pattern.clone();
        let mut b = vec![0.0; a.nrows];
        let t = &s.u.tables;
        let tp = &s.p.tables;
        let n = t.n_loc;
        let np = tp.n_loc;
        let nu_dofs = s.u.n_dofs();
        let nu0 = p.nu + p.nu_r;
        let mut luu = vec![0.0; 4 * n * n];
        let mut lup = vec![0.0; 2 * n * np];
        let mut lpu = vec![0.0; 2 * n * np];
        for cell in 0..s.mesh.n_cells() {
            let fr = Frame::new(&s.u, cell);
            let (lq, pq, wq, mq, hq) =
                (u_lag.on_cell(cell), u_prev.on_cell(cell), w.on_cell(cell), m.on_cell(cell), h.on_cell(cell));
            let udofs = vector_dofs(&s.u, cell, 0);
            let pdofs: Vec<usize> = s.p.cell_dofs(cell).iter().map(|&i| i + nu_dofs).collect();
            luu.iter_mut().for_each(|v| *v = 0.0);
            lup.iter_mut().for_each(|v| *v = 0.0);
            lpu.iter_mut().for_each(|v| *v = 0.0);
            for q in 0..t.n_qp() {
                let jw = fr.jw[q];
                let lp = lq.points[q];
                let vel = lp.value;
                let divu = lp.grad[0][0] + lp.grad[1][1];
                let wg = wq.points[q].grad[0];
                let curlw = [wg[1], -wg[0]];
                let (mv, hp) = (mq.points[q].value, hq.points[q]);
                let hm = dot(hp.value, mv);
                // (∂_c H)·M for c = x, y
                let dhm = [hp.grad[0][0] * mv[0] + hp.grad[1][0] * mv[1], hp.grad[0][1] * mv[0] + hp.grad[1][1] * mv[1]];
                let mut load = pq.points[q].value;
                for c in 0..2 {
                    load[c] += tau * 2.0 * p.nu_r * curlw[c];
                }
                if let Some(f) = f_u {
                    let fv = f.at(cell, q);
                    load[0] += tau * fv[0];
                    load[1] += tau * fv[1];
                }
                let row = q * n;
                for i in 0..n {
                    let vi = t.val[row + i];
                    let gi = [fr.gx[row + i], fr.gy[row + i]];
                    for c in 0..2 {
                        let kelvin = vi * dhm[c] + 0.5 * gi[c] * hm;
                        b[udofs[c * n + i]] += jw * (vi * load[c] + tau * p.mu0 * kelvin);
                    }
                    for j in 0..n {
                        let vj = t.val[row + j];
                        let (gxj, gyj) = (fr.gx[row + j], fr.gy[row + j]);
                        let adv = vel[0] * gxj + vel[1] * gyj;
                        let v = jw
                            * (vi * vj
                                + tau * (adv * vi + 0.5 * divu * vj * vi)
                                + tau * nu0 * (gi[0] * gxj + gi[1] * gyj));
                        luu[i * 2 * n + j] += v;
                        luu[(i + n) * 2 * n + j + n] += v;
                    }
                    for j in 0..np {
                        let pj = tp.val[q * np + j];
                        for c in 0..2 {
                            lup[(c * n + i) * np + j] -= tau * jw * pj * gi[c];
                            lpu[j * 2 * n + c * n + i] -= tau * jw * pj * gi[c];
                        }
                    }
                }
            }
            a.add_block(&udofs, &udofs, &luu);
            a.add_block(&udofs, &pdofs, &lup);
            a.add_block(&pdofs, &udofs, &lpu);
        }
        self.kelvin_faces(&mut b, p, tau, m, h);
        for d in s.u.constrained_dofs() {
            a.set_row_identity(d);
            b[d] = trace.map_or(0.0, |g| g[d]);
        }
        if let Some(pin) = self.pressure_pin {
            a.set_row_identity(nu_dofs + pin);
            b[nu_dofs + pin] = 0.0;
        }
        (a, b)
    }

    /// Face part of the Kelvin force: `−τμ0 Σ_F ∫ (⟦H⟧·{{M}})(V·n)`.
    fn kelvin_faces(&self, b: &mut [f64], p: &MaterialParams, tau: f64, m: &FEFunction, h: &FEFunction) {
        let s = &self.spaces;
        let t = &s.u.tables;
        let n = t.n_loc;
        for f in &s.mesh.internal_faces {
            let (hm, hp) = (h.on_side(f.minus, f.minus_side), h.on_side(f.plus, f.plus_side));
            let (mm, mp) = (m.on_side(f.minus, f.minus_side), m.on_side(f.plus, f.plus_side));
            let vals = &t.face_val[f.minus_side.index()];
            let udofs = vector_dofs(&s.u, f.minus, 0);
            for q in 0..t.n_face_qp() {
                let wt = t.face_w[q] * 0.5 * f.length;
                let (a1, a2) = (hm.points[q].value, hp.points[q].value);
                let (b1, b2) = (mm.points[q].value, mp.points[q].value);
                let jump = [a1[0] - a2[0], a1[1] - a2[1]];
                let avg = [0.5 * (b1[0] + b2[0]), 0.5 * (b1[1] + b2[1])];
                let jm = dot(jump, avg);
                if jm == 0.0 {
                    continue;
                }
                for i in 0..n {
                    let vi = vals[q * n + i];
                    for c in 0..2 {
                        b[udofs[c * n + i]] -= tau * p.mu0 * wt * vi * f.normal[c] * jm;
                    }
                }
            }
        }
    }
}
