//! Tensor-product Lagrange spaces on rectangular meshes.
//!
//! Local shape functions use equispaced nodes on [-1, 1] in each direction,
//! with local index `a + (degree + 1) * b` for the node `(a, b)`. Continuous
//! spaces number their nodes on the global lattice; discontinuous spaces
//! give every cell its own copy. Vector spaces store components in blocks:
//! component `c` of scalar DOF `i` has global index `i + c * n_scalar`.

use std::sync::Arc;

use thiserror::Error;

use crate::mesh::{CellGeom, Mesh, Side};
use crate::quadrature::gauss_legendre;

#[derive(Debug, Error, PartialEq)]
pub enum FemError {
    #[error("polynomial degree must be at least 1, got {0}")]
    InvalidDegree(usize),
    #[error("cell index {cell} out of range (mesh has {n_cells} cells)")]
    CellOutOfRange { cell: usize, n_cells: usize },
    #[error("coefficient vector has length {got}, space dimension is {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Continuous,
    Discontinuous,
}

/// Which sides of the rectangle carry a strong zero trace.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct DirichletSides {
    pub bottom: bool,
    pub right: bool,
    pub top: bool,
    pub left: bool,
}

impl DirichletSides {
    pub const NONE: DirichletSides = DirichletSides { bottom: false, right: false, top: false, left: false };
    pub const ALL: DirichletSides = DirichletSides { bottom: true, right: true, top: true, left: true };
    /// Walls at the bottom and top only; the ends stay open.
    pub const CHANNEL: DirichletSides = DirichletSides { bottom: true, right: false, top: true, left: false };

    pub fn any(&self) -> bool {
        self.bottom || self.right || self.top || self.left
    }

    pub fn all(&self) -> bool {
        self.bottom && self.right && self.top && self.left
    }

    pub fn contains(&self, side: Side) -> bool {
        match side {
            Side::Bottom => self.bottom,
            Side::Right => self.right,
            Side::Top => self.top,
            Side::Left => self.left,
        }
    }
}

/// One-dimensional Lagrange basis on equispaced nodes of [-1, 1].
#[derive(Clone, Debug)]
pub struct Lagrange1d {
    nodes: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(degree: usize) -> Self {
        let nodes = (0..=degree)
            .map(|a| -1.0 + 2.0 * a as f64 / degree as f64)
            .collect();
        Self { nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn value(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        self.nodes
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, &xj)| (x - xj) / (xi - xj))
            .product()
    }

    pub fn derivative(&self, i: usize, x: f64) -> f64 {
        let xi = self.nodes[i];
        let mut sum = 0.0;
        for (k, &xk) in self.nodes.iter().enumerate() {
            if k == i {
                continue;
            }
            let mut term = 1.0 / (xi - xk);
            for (j, &xj) in self.nodes.iter().enumerate() {
                if j != i && j != k {
                    term *= (x - xj) / (xi - xj);
                }
            }
            sum += term;
        }
        sum
    }
}

/// Shape-function tables at the cell and face quadrature points.
#[derive(Clone, Debug)]
pub struct ElementTables {
    pub degree: usize,
    pub n_loc: usize,
    /// Gauss points per direction.
    pub nq: usize,
    pub qpoints: Vec<[f64; 2]>,
    /// Reference weights (they sum to 4).
    pub qweights: Vec<f64>,
    /// `val[q * n_loc + i]`, likewise for the reference derivatives.
    pub val: Vec<f64>,
    pub dxi: Vec<f64>,
    pub deta: Vec<f64>,
    /// 1D face rule on [-1, 1] (weights sum to 2).
    pub face_t: Vec<f64>,
    pub face_w: Vec<f64>,
    /// Per side (indexed by [`Side::index`]): `[qf * n_loc + i]`.
    pub face_val: [Vec<f64>; 4],
    pub face_dxi: [Vec<f64>; 4],
    pub face_deta: [Vec<f64>; 4],
    /// Reference coordinates of the local nodes.
    pub nodes: Vec<[f64; 2]>,
}

impl ElementTables {
    pub fn new(degree: usize, nq: usize) -> Self {
        let b = Lagrange1d::new(degree);
        let n1 = degree + 1;
        let n_loc = n1 * n1;
        let (g, gw) = gauss_legendre(nq);
        let mut qpoints = Vec::with_capacity(nq * nq);
        let mut qweights = Vec::with_capacity(nq * nq);
        for j in 0..nq {
            for i in 0..nq {
                qpoints.push([g[i], g[j]]);
                qweights.push(gw[i] * gw[j]);
            }
        }
        let shape = |r: [f64; 2]| {
            let mut v = vec![0.0; n_loc];
            let mut dx = vec![0.0; n_loc];
            let mut dy = vec![0.0; n_loc];
            for bb in 0..n1 {
                for a in 0..n1 {
                    let (fx, fy) = (b.value(a, r[0]), b.value(bb, r[1]));
                    let (gx, gy) = (b.derivative(a, r[0]), b.derivative(bb, r[1]));
                    let i = a + n1 * bb;
                    v[i] = fx * fy;
                    dx[i] = gx * fy;
                    dy[i] = fx * gy;
                }
            }
            (v, dx, dy)
        };
        let mut val = Vec::new();
        let mut dxi = Vec::new();
        let mut deta = Vec::new();
        for &r in &qpoints {
            let (v, dx, dy) = shape(r);
            val.extend(v);
            dxi.extend(dx);
            deta.extend(dy);
        }
        let mut face_val: [Vec<f64>; 4] = Default::default();
        let mut face_dxi: [Vec<f64>; 4] = Default::default();
        let mut face_deta: [Vec<f64>; 4] = Default::default();
        for side in Side::ALL {
            let s = side.index();
            for &t in &g {
                let (v, dx, dy) = shape(side.reference_point(t));
                face_val[s].extend(v);
                face_dxi[s].extend(dx);
                face_deta[s].extend(dy);
            }
        }
        let mut nodes = Vec::with_capacity(n_loc);
        for bb in 0..n1 {
            for a in 0..n1 {
                nodes.push([b.nodes()[a], b.nodes()[bb]]);
            }
        }
        Self {
            degree,
            n_loc,
            nq,
            qpoints,
            qweights,
            val,
            dxi,
            deta,
            face_t: g,
            face_w: gw,
            face_val,
            face_dxi,
            face_deta,
            nodes,
        }
    }

    pub fn n_qp(&self) -> usize {
        self.qpoints.len()
    }

    pub fn n_face_qp(&self) -> usize {
        self.face_t.len()
    }

    /// Shape values and reference gradients at an arbitrary reference point.
    pub fn shape_at(&self, r: [f64; 2]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let b = Lagrange1d::new(self.degree);
        let n1 = self.degree + 1;
        let mut v = vec![0.0; self.n_loc];
        let mut dx = vec![0.0; self.n_loc];
        let mut dy = vec![0.0; self.n_loc];
        for bb in 0..n1 {
            for a in 0..n1 {
                let i = a + n1 * bb;
                let (fx, fy) = (b.value(a, r[0]), b.value(bb, r[1]));
                v[i] = fx * fy;
                dx[i] = b.derivative(a, r[0]) * fy;
                dy[i] = fx * b.derivative(bb, r[1]);
            }
        }
        (v, dx, dy)
    }
}

#[derive(Debug)]
pub struct FESpace {
    pub mesh: Arc<Mesh>,
    pub family: Family,
    pub degree: usize,
    pub components: usize,
    pub dirichlet: DirichletSides,
    pub tables: ElementTables,
    n_scalar: usize,
    dof_map: Vec<usize>,
    node_coords: Vec<[f64; 2]>,
    constrained: Vec<bool>,
}

impl FESpace {
    pub fn new(
        mesh: Arc<Mesh>,
        family: Family,
        degree: usize,
        components: usize,
        dirichlet: DirichletSides,
        quad_points: usize,
    ) -> Result<Self, FemError> {
        if degree < 1 {
            return Err(FemError::InvalidDegree(degree));
        }
        let tables = ElementTables::new(degree, quad_points);
        let n1 = degree + 1;
        let n_loc = n1 * n1;
        let (nx, ny) = (mesh.nx, mesh.ny);
        let lx = degree * nx + 1;
        let ly = degree * ny + 1;
        let mut dof_map = Vec::with_capacity(mesh.n_cells() * n_loc);
        let (n_scalar, node_coords, constrained) = match family {
            Family::Continuous => {
                for c in 0..mesh.n_cells() {
                    let (ci, cj) = mesh.cell_ij(c);
                    for b in 0..n1 {
                        for a in 0..n1 {
                            dof_map.push((degree * ci + a) + lx * (degree * cj + b));
                        }
                    }
                }
                let mut coords = Vec::with_capacity(lx * ly);
                let mut cons = Vec::with_capacity(lx * ly);
                let dx = (mesh.xmax - mesh.xmin) / (lx - 1) as f64;
                let dy = (mesh.ymax - mesh.ymin) / (ly - 1) as f64;
                for jj in 0..ly {
                    for ii in 0..lx {
                        let x = if ii + 1 == lx { mesh.xmax } else { mesh.xmin + dx * ii as f64 };
                        let y = if jj + 1 == ly { mesh.ymax } else { mesh.ymin + dy * jj as f64 };
                        coords.push([x, y]);
                        cons.push(
                            (dirichlet.left && ii == 0)
                                || (dirichlet.right && ii + 1 == lx)
                                || (dirichlet.bottom && jj == 0)
                                || (dirichlet.top && jj + 1 == ly),
                        );
                    }
                }
                (lx * ly, coords, cons)
            }
            Family::Discontinuous => {
                let mut coords = Vec::with_capacity(mesh.n_cells() * n_loc);
                for c in 0..mesh.n_cells() {
                    let g = mesh.geom(c);
                    for i in 0..n_loc {
                        dof_map.push(c * n_loc + i);
                        coords.push(g.map(tables.nodes[i]));
                    }
                }
                let n = mesh.n_cells() * n_loc;
                (n, coords, vec![false; n])
            }
        };
        Ok(Self {
            mesh,
            family,
            degree,
            components,
            dirichlet,
            tables,
            n_scalar,
            dof_map,
            node_coords,
            constrained,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.n_scalar * self.components
    }

    pub fn n_scalar(&self) -> usize {
        self.n_scalar
    }

    pub fn n_loc(&self) -> usize {
        self.tables.n_loc
    }

    /// Scalar DOF indices of one cell (add `c * n_scalar` for component `c`).
    pub fn cell_dofs(&self, cell: usize) -> &[usize] {
        let n = self.tables.n_loc;
        &self.dof_map[cell * n..(cell + 1) * n]
    }

    /// Physical coordinates of a scalar DOF's node.
    pub fn node(&self, scalar_dof: usize) -> [f64; 2] {
        self.node_coords[scalar_dof]
    }

    pub fn is_constrained(&self, scalar_dof: usize) -> bool {
        self.constrained[scalar_dof]
    }

    /// All constrained global DOFs (every component), in increasing order.
    pub fn constrained_dofs(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in 0..self.components {
            for (i, &k) in self.constrained.iter().enumerate() {
                if k {
                    out.push(i + c * self.n_scalar);
                }
            }
        }
        out
    }

    pub fn geom(&self, cell: usize) -> CellGeom {
        self.mesh.geom(cell)
    }
}

/// The five spaces of the scheme on a common mesh and quadrature.
#[derive(Clone, Debug)]
pub struct SpaceBundle {
    pub mesh: Arc<Mesh>,
    pub degree: usize,
    /// Velocity: vector, continuous, degree ℓ, zero trace on walls.
    pub u: Arc<FESpace>,
    /// Pressure: scalar, continuous, degree ℓ-1.
    pub p: Arc<FESpace>,
    /// Spin: scalar, continuous, degree ℓ, zero trace on walls.
    pub w: Arc<FESpace>,
    /// Magnetization: vector, discontinuous, degree ℓ.
    pub m: Arc<FESpace>,
    /// Potential: scalar, continuous, degree ℓ.
    pub x: Arc<FESpace>,
}

/// Builds the velocity, pressure, spin, magnetization and potential spaces.
///
/// All spaces share the `degree + 2` point tensor Gauss rule, which
/// integrates every assembled product exactly on rectangles.
pub fn build_spaces(mesh: Arc<Mesh>, degree: usize, walls: DirichletSides) -> Result<SpaceBundle, FemError> {
    if degree < 1 {
        return Err(FemError::InvalidDegree(degree));
    }
    let nq = degree + 2;
    let mk = |family, deg, comps, dir| FESpace::new(mesh.clone(), family, deg, comps, dir, nq).map(Arc::new);
    Ok(SpaceBundle {
        degree,
        u: mk(Family::Continuous, degree, 2, walls)?,
        p: mk(Family::Continuous, degree.saturating_sub(1).max(1), 1, DirichletSides::NONE)?,
        w: mk(Family::Continuous, degree, 1, walls)?,
        m: mk(Family::Discontinuous, degree, 2, DirichletSides::NONE)?,
        x: mk(Family::Continuous, degree, 1, DirichletSides::NONE)?,
        mesh,
    })
}

/// Value and gradient of a (up to two component) field at one point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointValue {
    pub value: [f64; 2],
    /// `grad[c] = [d/dx, d/dy]` of component `c`.
    pub grad: [[f64; 2]; 2],
}

/// Values and gradients at a list of quadrature points.
#[derive(Clone, Debug, Default)]
pub struct QuadValues {
    pub points: Vec<PointValue>,
}

#[derive(Clone, Debug)]
pub struct FEFunction {
    pub space: Arc<FESpace>,
    pub coeffs: Vec<f64>,
}

impl FEFunction {
    pub fn zeros(space: &Arc<FESpace>) -> Self {
        Self { space: space.clone(), coeffs: vec![0.0; space.n_dofs()] }
    }

    pub fn from_coeffs(space: &Arc<FESpace>, coeffs: Vec<f64>) -> Result<Self, FemError> {
        if coeffs.len() != space.n_dofs() {
            return Err(FemError::LengthMismatch { expected: space.n_dofs(), got: coeffs.len() });
        }
        Ok(Self { space: space.clone(), coeffs })
    }

    /// The `i`-th basis function of `space`.
    pub fn basis(space: &Arc<FESpace>, i: usize) -> Self {
        let mut f = Self::zeros(space);
        f.coeffs[i] = 1.0;
        f
    }

    pub fn components(&self) -> usize {
        self.space.components
    }

    /// Sets every constrained DOF to zero.
    pub fn apply_zero_trace(&mut self) {
        for d in self.space.constrained_dofs() {
            self.coeffs[d] = 0.0;
        }
    }

    fn local(&self, cell: usize, comp: usize, out: &mut [f64]) {
        let off = comp * self.space.n_scalar();
        for (o, &d) in out.iter_mut().zip(self.space.cell_dofs(cell)) {
            *o = self.coeffs[d + off];
        }
    }

    /// Value and physical gradient at a reference point of a cell.
    pub fn evaluate(&self, cell: usize, r: [f64; 2]) -> Result<PointValue, FemError> {
        let n_cells = self.space.mesh.n_cells();
        if cell >= n_cells {
            return Err(FemError::CellOutOfRange { cell, n_cells });
        }
        let (v, dx, dy) = self.space.tables.shape_at(r);
        let g = self.space.geom(cell);
        let mut loc = vec![0.0; self.space.n_loc()];
        let mut out = PointValue::default();
        for c in 0..self.components() {
            self.local(cell, c, &mut loc);
            for i in 0..loc.len() {
                out.value[c] += loc[i] * v[i];
                out.grad[c][0] += loc[i] * dx[i] * 2.0 / g.hx;
                out.grad[c][1] += loc[i] * dy[i] * 2.0 / g.hy;
            }
        }
        Ok(out)
    }

    /// Value and gradient at a physical point (error if outside the mesh).
    pub fn evaluate_at(&self, x: [f64; 2]) -> Option<PointValue> {
        let cell = self.space.mesh.locate(x)?;
        let r = self.space.geom(cell).to_reference(x);
        self.evaluate(cell, r).ok()
    }

    fn tabulate(&self, cell: usize, val: &[f64], dxi: &[f64], deta: &[f64], npts: usize) -> QuadValues {
        let n = self.space.n_loc();
        let g = self.space.geom(cell);
        let (sx, sy) = (2.0 / g.hx, 2.0 / g.hy);
        let mut loc = vec![0.0; n];
        let mut pts = vec![PointValue::default(); npts];
        for c in 0..self.components() {
            self.local(cell, c, &mut loc);
            for (q, p) in pts.iter_mut().enumerate() {
                let row = q * n;
                let (mut v, mut gx, mut gy) = (0.0, 0.0, 0.0);
                for i in 0..n {
                    v += loc[i] * val[row + i];
                    gx += loc[i] * dxi[row + i];
                    gy += loc[i] * deta[row + i];
                }
                p.value[c] = v;
                p.grad[c] = [gx * sx, gy * sy];
            }
        }
        QuadValues { points: pts }
    }

    /// Values and gradients at the cell quadrature points.
    pub fn on_cell(&self, cell: usize) -> QuadValues {
        let t = &self.space.tables;
        self.tabulate(cell, &t.val, &t.dxi, &t.deta, t.n_qp())
    }

    /// Values and gradients at the face quadrature points of one side.
    pub fn on_side(&self, cell: usize, side: Side) -> QuadValues {
        let t = &self.space.tables;
        let s = side.index();
        self.tabulate(cell, &t.face_val[s], &t.face_dxi[s], &t.face_deta[s], t.n_face_qp())
    }

    /// Integral of one component over the domain.
    pub fn integral(&self, comp: usize) -> f64 {
        let t = &self.space.tables;
        let mut s = 0.0;
        for cell in 0..self.space.mesh.n_cells() {
            let jac = self.space.geom(cell).jacobian();
            let qv = self.on_cell(cell);
            for (q, p) in qv.points.iter().enumerate() {
                s += t.qweights[q] * jac * p.value[comp];
            }
        }
        s
    }

    pub fn scale(&mut self, a: f64) {
        self.coeffs.iter_mut().for_each(|c| *c *= a);
    }

    pub fn axpy(&mut self, a: f64, other: &FEFunction) {
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += a * o;
        }
    }
}

/// Nodal interpolant of `f(x, component)`.
pub fn interpolate(space: &Arc<FESpace>, f: impl Fn([f64; 2], usize) -> f64) -> FEFunction {
    let mut out = FEFunction::zeros(space);
    let n = space.n_scalar();
    for c in 0..space.components {
        for i in 0..n {
            out.coeffs[i + c * n] = f(space.node(i), c);
        }
    }
    out
}

/// Nodal interpolant of a scalar field.
pub fn interpolate_scalar(space: &Arc<FESpace>, f: impl Fn([f64; 2]) -> f64) -> FEFunction {
    interpolate(space, |x, _| f(x))
}

/// Nodal interpolant of a vector field.
pub fn interpolate_vector(space: &Arc<FESpace>, f: impl Fn([f64; 2]) -> [f64; 2]) -> FEFunction {
    interpolate(space, |x, c| f(x)[c])
}

/// Interpolates the gradient of a scalar continuous function into a
/// discontinuous vector space of the same degree, cell by cell. The result
/// reproduces the gradient exactly because the gradient of a tensor
/// polynomial of degree ℓ has tensor degree at most ℓ in each variable.
pub fn gradient_into(phi: &FEFunction, target: &Arc<FESpace>) -> FEFunction {
    assert_eq!(target.family, Family::Discontinuous);
    assert_eq!(target.components, 2);
    let mut out = FEFunction::zeros(target);
    let ns = target.n_scalar();
    let src = &phi.space;
    let n_src = src.n_loc();
    let mut loc = vec![0.0; n_src];
    let shapes: Vec<_> = target.tables.nodes.iter().map(|&r| src.tables.shape_at(r)).collect();
    for cell in 0..target.mesh.n_cells() {
        let g = target.geom(cell);
        phi.local(cell, 0, &mut loc);
        for (k, &d) in target.cell_dofs(cell).iter().enumerate() {
            let (_, dx, dy) = &shapes[k];
            let mut gx = 0.0;
            let mut gy = 0.0;
            for i in 0..n_src {
                gx += loc[i] * dx[i];
                gy += loc[i] * dy[i];
            }
            out.coeffs[d] = gx * 2.0 / g.hx;
            out.coeffs[d + ns] = gy * 2.0 / g.hy;
        }
    }
    out
}

/// L2 inner product of two functions on the same mesh (all components).
pub fn l2_inner(a: &FEFunction, b: &FEFunction) -> f64 {
    assert_eq!(a.components(), b.components());
    let mesh = &a.space.mesh;
    let w = &a.space.tables.qweights;
    let mut s = 0.0;
    for cell in 0..mesh.n_cells() {
        let jac = mesh.geom(cell).jacobian();
        let (qa, qb) = (a.on_cell(cell), b.on_cell(cell));
        for q in 0..w.len() {
            let mut dot = 0.0;
            for c in 0..a.components() {
                dot += qa.points[q].value[c] * qb.points[q].value[c];
            }
            s += w[q] * jac * dot;
        }
    }
    s
}

pub fn l2_norm(a: &FEFunction) -> f64 {
    l2_inner(a, a).max(0.0).sqrt()
}

/// L2 norm of `a - f` with `f` evaluated at the quadrature points.
pub fn l2_error(a: &FEFunction, f: impl Fn([f64; 2], usize) -> f64) -> f64 {
    let mesh = &a.space.mesh;
    let t = &a.space.tables;
    let mut s = 0.0;
    for cell in 0..mesh.n_cells() {
        let g = mesh.geom(cell);
        let qa = a.on_cell(cell);
        for q in 0..t.n_qp() {
            let x = g.map(t.qpoints[q]);
            for c in 0..a.components() {
                let e = qa.points[q].value[c] - f(x, c);
                s += t.qweights[q] * g.jacobian() * e * e;
            }
        }
    }
    s.sqrt()
}

/// L2 norm of `grad a - f` for a scalar `a`, with `f` sampled at quadrature points.
pub fn l2_gradient_error(a: &FEFunction, f: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
    let mesh = &a.space.mesh;
    let t = &a.space.tables;
    let mut s = 0.0;
    for cell in 0..mesh.n_cells() {
        let g = mesh.geom(cell);
        let qa = a.on_cell(cell);
        for q in 0..t.n_qp() {
            let fx = f(g.map(t.qpoints[q]));
            let gr = qa.points[q].grad[0];
            s += t.qweights[q] * g.jacobian() * ((gr[0] - fx[0]).powi(2) + (gr[1] - fx[1]).powi(2));
        }
    }
    s.sqrt()
}
