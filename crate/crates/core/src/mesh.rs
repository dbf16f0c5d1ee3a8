//! Structured meshes of axis-aligned rectangles.
//!
//! Cells are numbered row by row, `c = i + nx * j`, with counter-clockwise
//! vertex tuples. Every internal face stores the two cells sharing it, with
//! the normal pointing from the lower-index cell (`minus`) to the
//! higher-index cell (`plus`). Jumps are taken as minus trace minus plus
//! trace.

use thiserror::Error;

use crate::quadrature::gauss_on_interval;

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("invalid extent: [{lo}, {hi}] is empty along {axis}")]
    InvalidExtent { axis: char, lo: f64, hi: f64 },
    #[error("number of subdivisions along {axis} must be positive")]
    ZeroSubdivisions { axis: char },
}

/// Local side of a rectangular cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Bottom,
    Right,
    Top,
    Left,
}

impl Side {
    pub const ALL: [Side; 4] = [Side::Bottom, Side::Right, Side::Top, Side::Left];

    pub fn index(self) -> usize {
        match self {
            Side::Bottom => 0,
            Side::Right => 1,
            Side::Top => 2,
            Side::Left => 3,
        }
    }

    pub fn outward_normal(self) -> [f64; 2] {
        match self {
            Side::Bottom => [0.0, -1.0],
            Side::Right => [1.0, 0.0],
            Side::Top => [0.0, 1.0],
            Side::Left => [-1.0, 0.0],
        }
    }

    /// Reference point on this side for the face parameter `t` in [-1, 1].
    ///
    /// Horizontal sides are parametrized by x and vertical sides by y, so
    /// two cells sharing a face see the same physical point for the same `t`.
    pub fn reference_point(self, t: f64) -> [f64; 2] {
        match self {
            Side::Bottom => [t, -1.0],
            Side::Right => [1.0, t],
            Side::Top => [t, 1.0],
            Side::Left => [-1.0, t],
        }
    }
}

/// Straight segment, oriented in the direction of increasing coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    pub a: [f64; 2],
    pub b: [f64; 2],
}

impl Segment {
    pub fn length(&self) -> f64 {
        ((self.b[0] - self.a[0]).powi(2) + (self.b[1] - self.a[1]).powi(2)).sqrt()
    }

    pub fn point(&self, t: f64) -> [f64; 2] {
        let s = 0.5 * (t + 1.0);
        [
            self.a[0] + s * (self.b[0] - self.a[0]),
            self.a[1] + s * (self.b[1] - self.a[1]),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct InternalFace {
    pub minus: usize,
    pub plus: usize,
    pub minus_side: Side,
    pub plus_side: Side,
    /// Unit normal pointing from `minus` to `plus`.
    pub normal: [f64; 2],
    pub length: f64,
    pub segment: Segment,
}

#[derive(Clone, Debug)]
pub struct BoundaryFace {
    pub cell: usize,
    pub side: Side,
    /// Outward unit normal.
    pub normal: [f64; 2],
    pub length: f64,
    pub segment: Segment,
}

/// Geometry of one cell: lower-left corner and edge lengths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeom {
    pub x0: f64,
    pub y0: f64,
    pub hx: f64,
    pub hy: f64,
}

impl CellGeom {
    /// Maps a reference point in [-1,1]^2 to physical coordinates.
    pub fn map(&self, r: [f64; 2]) -> [f64; 2] {
        [
            self.x0 + 0.5 * (r[0] + 1.0) * self.hx,
            self.y0 + 0.5 * (r[1] + 1.0) * self.hy,
        ]
    }

    /// Inverse of [`CellGeom::map`].
    pub fn to_reference(&self, x: [f64; 2]) -> [f64; 2] {
        [
            2.0 * (x[0] - self.x0) / self.hx - 1.0,
            2.0 * (x[1] - self.y0) / self.hy - 1.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.hx * self.hy
    }

    /// Determinant of the reference-to-physical map.
    pub fn jacobian(&self) -> f64 {
        0.25 * self.hx * self.hy
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0] >= self.x0 && x[0] <= self.x0 + self.hx && x[1] >= self.y0 && x[1] <= self.y0 + self.hy
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
    pub vertices: Vec<[f64; 2]>,
    pub cells: Vec<[usize; 4]>,
    pub internal_faces: Vec<InternalFace>,
    pub boundary_faces: Vec<BoundaryFace>,
}

/// Uniform `nx` by `ny` grid on `[xmin, xmax] x [ymin, ymax]`.
pub fn build_rect_mesh(
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
    nx: usize,
    ny: usize,
) -> Result<Mesh, MeshError> {
    if !(xmax > xmin) || !xmin.is_finite() || !xmax.is_finite() {
        return Err(MeshError::InvalidExtent { axis: 'x', lo: xmin, hi: xmax });
    }
    if !(ymax > ymin) || !ymin.is_finite() || !ymax.is_finite() {
        return Err(MeshError::InvalidExtent { axis: 'y', lo: ymin, hi: ymax });
    }
    if nx == 0 {
        return Err(MeshError::ZeroSubdivisions { axis: 'x' });
    }
    if ny == 0 {
        return Err(MeshError::ZeroSubdivisions { axis: 'y' });
    }

    let xs = |i: usize| {
        if i == nx {
            xmax
        } else {
            xmin + (xmax - xmin) * i as f64 / nx as f64
        }
    };
    let ys = |j: usize| {
        if j == ny {
            ymax
        } else {
            ymin + (ymax - ymin) * j as f64 / ny as f64
        }
    };

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([xs(i), ys(j)]);
        }
    }
    let vid = |i: usize, j: usize| i + (nx + 1) * j;

    let mut cells = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            cells.push([vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)]);
        }
    }

    let mut internal_faces = Vec::with_capacity(nx * (ny - 1) + ny * (nx - 1));
    let mut boundary_faces = Vec::with_capacity(2 * (nx + ny));
    for j in 0..ny {
        for i in 0..nx {
            let c = i + nx * j;
            if i + 1 < nx {
                let seg = Segment { a: [xs(i + 1), ys(j)], b: [xs(i + 1), ys(j + 1)] };
                internal_faces.push(InternalFace {
                    minus: c,
                    plus: c + 1,
                    minus_side: Side::Right,
                    plus_side: Side::Left,
                    normal: [1.0, 0.0],
                    length: seg.length(),
                    segment: seg,
                });
            }
            if j + 1 < ny {
                let seg = Segment { a: [xs(i), ys(j + 1)], b: [xs(i + 1), ys(j + 1)] };
                internal_faces.push(InternalFace {
                    minus: c,
                    plus: c + nx,
                    minus_side: Side::Top,
                    plus_side: Side::Bottom,
                    normal: [0.0, 1.0],
                    length: seg.length(),
                    segment: seg,
                });
            }
            let mut bdry = |side: Side, seg: Segment| {
                boundary_faces.push(BoundaryFace {
                    cell: c,
                    side,
                    normal: side.outward_normal(),
                    length: seg.length(),
                    segment: seg,
                })
            };
            if j == 0 {
                bdry(Side::Bottom, Segment { a: [xs(i), ys(0)], b: [xs(i + 1), ys(0)] });
            }
            if i + 1 == nx {
                bdry(Side::Right, Segment { a: [xs(nx), ys(j)], b: [xs(nx), ys(j + 1)] });
            }
            if j + 1 == ny {
                bdry(Side::Top, Segment { a: [xs(i), ys(ny)], b: [xs(i + 1), ys(ny)] });
            }
            if i == 0 {
                bdry(Side::Left, Segment { a: [xs(0), ys(j)], b: [xs(0), ys(j + 1)] });
            }
        }
    }

    Ok(Mesh {
        xmin,
        xmax,
        ymin,
        ymax,
        nx,
        ny,
        vertices,
        cells,
        internal_faces,
        boundary_faces,
    })
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    pub fn geom(&self, c: usize) -> CellGeom {
        let [v0, _, v2, _] = self.cells[c];
        let a = self.vertices[v0];
        let b = self.vertices[v2];
        CellGeom { x0: a[0], y0: a[1], hx: b[0] - a[0], hy: b[1] - a[1] }
    }

    /// Mesh size: the larger cell edge length.
    pub fn h(&self) -> f64 {
        let dx = (self.xmax - self.xmin) / self.nx as f64;
        let dy = (self.ymax - self.ymin) / self.ny as f64;
        dx.max(dy)
    }

    pub fn area(&self) -> f64 {
        (self.xmax - self.xmin) * (self.ymax - self.ymin)
    }

    /// Whether `x` lies in the closed domain.
    pub fn contains(&self, x: [f64; 2]) -> bool {
        x[0] >= self.xmin && x[0] <= self.xmax && x[1] >= self.ymin && x[1] <= self.ymax
    }

    /// Cell containing `x` (points on shared edges go to the upper/right cell).
    pub fn locate(&self, x: [f64; 2]) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let fx = (x[0] - self.xmin) / (self.xmax - self.xmin) * self.nx as f64;
        let fy = (x[1] - self.ymin) / (self.ymax - self.ymin) * self.ny as f64;
        let i = (fx.floor() as usize).min(self.nx - 1);
        let j = (fy.floor() as usize).min(self.ny - 1);
        Some(i + self.nx * j)
    }
}

/// Gauss points and weights on a face segment; weights sum to its length.
pub fn face_quadrature(segment: &Segment, order: usize) -> Vec<([f64; 2], f64)> {
    assert!(order >= 1, "face quadrature order must be at least 1");
    let len = segment.length();
    gauss_on_interval(order, -1.0, 1.0)
        .into_iter()
        .map(|(t, w)| (segment.point(t), 0.5 * len * w))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cell() {
        let m = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 1, 1).unwrap();
        assert_eq!(m.n_cells(), 1);
        assert_eq!(m.vertices.len(), 4);
        assert!(m.internal_faces.is_empty());
        assert_eq!(m.boundary_faces.len(), 4);
    }

    #[test]
    fn two_by_two_counts_and_normals() {
        let m = build_rect_mesh(0.0, 1.0, 0.0, 1.0, 2, 2).unwrap();
        assert_eq!(m.n_cells(), 4);
        assert_eq!(m.vertices.len(), 9);
        assert_eq!(m.internal_faces.len(), 4);
        for f in &m.internal_faces {
            assert!(f.minus < f.plus);
            let n = f.normal;
            assert!(n == [1.0, 0.0] || n == [0.0, 1.0]);
        }
    }

    #[test]
    fn channel_mesh() {
        let m = build_rect_mesh(0.0, 6.0, 0.0, 1.0, 60, 10).unwrap();
        assert_eq!(m.n_cells(), 600);
        assert!((m.h() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn face_counting_identity() {
        for (nx, ny) in [(1, 1), (3, 2), (5, 7), (16, 4)] {
            let m = build_rect_mesh(-1.0, 2.0, 0.5, 3.0, nx, ny).unwrap();
            assert_eq!(m.internal_faces.len(), nx * (ny - 1) + ny * (nx - 1));
            assert_eq!(m.boundary_faces.len(), 2 * (nx + ny));
            let area: f64 = (0..m.n_cells()).map(|c| m.geom(c).area()).sum();
            assert!((area - m.area()).abs() < 1e-13 * m.area());
        }
    }

    #[test]
    fn counter_clockwise_cells() {
        let m = build_rect_mesh(0.0, 2.0, 0.0, 1.0, 3, 2).unwrap();
        for cell in &m.cells {
            let p: Vec<[f64; 2]> = cell.iter().map(|&v| m.vertices[v]).collect();
            let mut twice_area = 0.0;
            for k in 0..4 {
                let (a, b) = (p[k], p[(k + 1) % 4]);
                twice_area += a[0] * b[1] - b[0] * a[1];
            }
            assert!(twice_area > 0.0);
        }
    }

    #[test]
    fn faces_match_cell_sides() {
        let m = build_rect_mesh(0.0, 1.0, 0.0, 2.0, 3, 4).unwrap();
        for f in &m.internal_faces {
            for (c, side) in [(f.minus, f.minus_side), (f.plus, f.plus_side)] {
                let g = m.geom(c);
                for t in [-1.0, 0.3, 1.0] {
                    let x = g.map(side.reference_point(t));
                    let y = f.segment.point(t);
                    assert!((x[0] - y[0]).abs() < 1e-14 && (x[1] - y[1]).abs() < 1e-14);
                }
            }
            let n_out = f.minus_side.outward_normal();
            assert_eq!(n_out, f.normal);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            build_rect_mesh(1.0, 0.0, 0.0, 1.0, 1, 1),
            Err(MeshError::InvalidExtent { axis: 'x', .. })
        ));
        assert_eq!(
            build_rect_mesh(0.0, 1.0, 0.0, 1.0, 1, 0).unwrap_err(),
            MeshError::ZeroSubdivisions { axis: 'y' }
        );
    }

    #[test]
    fn midpoint_rule_on_unit_face() {
        let seg = Segment { a: [0.0, 0.0], b: [1.0, 0.0] };
        let q = face_quadrature(&seg, 1);
        assert_eq!(q.len(), 1);
        assert!((q[0].0[0] - 0.5).abs() < 1e-15);
        assert!((q[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn face_rule_exactness() {
        let seg = Segment { a: [0.25, 1.0], b: [0.25, 1.75] };
        for order in 1..=5 {
            let q = face_quadrature(&seg, order);
            let wsum: f64 = q.iter().map(|p| p.1).sum();
            assert!((wsum - seg.length()).abs() < 1e-15);
            let p = 2 * order - 1;
            let num: f64 = q.iter().map(|(x, w)| w * x[1].powi(p as i32)).sum();
            let exact = (1.75f64.powi(p as i32 + 1) - 1.0) / (p as f64 + 1.0);
            assert!((num - exact).abs() < 1e-13, "order {order}");
        }
    }
}
