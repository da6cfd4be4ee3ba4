//! Oriented manifold triangle surfaces: validation, adjacency, local frames.
//!
//! A [`TriangleSurface`] is immutable after construction and safe to share
//! across threads. Faces are CCW; halfedge `h = 3*f + k` runs from corner `k`
//! to corner `(k + 1) % 3` of face `f`. Every face carries a 3x2
//! column-orthonormal basis `B` whose columns span the face plane, so `Bᵀ`
//! maps tangent vectors to a local 2D chart and the face normal is `b1 × b2`.
//! The first basis vector always points along the face's first edge, which
//! makes two loads of the same file produce bit-identical frames.

pub mod obj;
pub mod poly;
pub mod shapes;

pub use obj::{load_mesh, load_poly, write_obj};
pub use poly::PolyMesh;

use crate::geom::Vec2;
use nalgebra::{Matrix3x2, Point3, Vector3};
use std::collections::HashMap;
use thiserror::Error;

/// Faces with area below this fraction of the mean face area are rejected at
/// load; downstream stages divide by per-face quantities.
pub const DEGENERATE_AREA_FRACTION: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("face {face} is not a triangle ({degree} vertices)")]
    NonTriangleFace { face: usize, degree: usize },
    #[error("face {face} references vertex {vertex}, but there are only {count} vertices")]
    IndexOutOfRange {
        face: usize,
        vertex: usize,
        count: usize,
    },
    #[error("face {face} repeats a vertex")]
    RepeatedVertex { face: usize },
    #[error("non-manifold edge ({v0}, {v1}): more than two incident faces")]
    NonManifoldEdge { v0: usize, v1: usize },
    #[error("inconsistent orientation across edge ({v0}, {v1})")]
    InconsistentOrientation { v0: usize, v1: usize },
    #[error("face {face} is degenerate (area {area:.3e})")]
    DegenerateFace { face: usize, area: f64 },
    #[error("mesh has no faces")]
    Empty,
    #[error("face {face} has an invalid loop: {msg}")]
    InvalidFaceLoop { face: usize, msg: String },
}

/// An interior (two-face) edge together with the shared edge vector seen from
/// both sides.
///
/// `face_i < face_j` always holds, and the stored vectors follow face `i`'s
/// CCW traversal: the 3D vector `e3d` runs from `verts[0]` to `verts[1]`,
/// which is the halfedge at corner `corner_i` of face `i`. Face `j` traverses
/// the same undirected edge in the opposite direction starting at its corner
/// `corner_j`. `e_i` and `e_j` are the *same* 3D vector expressed in the two
/// local bases, which is why their lengths agree.
#[derive(Debug, Clone)]
pub struct InteriorEdge {
    pub face_i: usize,
    pub face_j: usize,
    pub corner_i: u8,
    pub corner_j: u8,
    /// Tail and head vertex in face `i`'s traversal order.
    pub verts: [usize; 2],
    pub e3d: Vector3<f64>,
    /// `B_iᵀ e3d`
    pub e_i: Vec2,
    /// `B_jᵀ e3d`
    pub e_j: Vec2,
}

#[derive(Debug, Clone)]
pub struct TriangleSurface {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
    /// Unit vertex normals taken from the input file when present.
    pub vertex_normals: Option<Vec<Vector3<f64>>>,
    pub local_basis: Vec<Matrix3x2<f64>>,
    pub interior_edges: Vec<InteriorEdge>,
    pub boundary_vertex: Vec<bool>,
    /// Faces with at least one vertex on the boundary.
    pub boundary_face: Vec<bool>,
    pub face_areas: Vec<f64>,
    pub total_area: f64,
    pub bbox_diagonal: f64,
    twin: Vec<Option<u32>>,
    /// Halfedges whose tail is the vertex, in halfedge-id order.
    vertex_hes: Vec<Vec<u32>>,
    n_boundary_edges: usize,
}

impl TriangleSurface {
    /// Validate connectivity and build adjacency, local frames, and the
    /// interior-edge table.
    pub fn from_parts(
        vertices: Vec<Point3<f64>>,
        faces: Vec<[usize; 3]>,
        vertex_normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self, MeshError> {
        if faces.is_empty() {
            return Err(MeshError::Empty);
        }
        for (f, tri) in faces.iter().enumerate() {
            for &v in tri {
                if v >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: f,
                        vertex: v,
                        count: vertices.len(),
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(MeshError::RepeatedVertex { face: f });
            }
        }

        let local_basis = build_local_bases(&vertices, &faces)?;
        let face_areas: Vec<f64> = (0..faces.len())
            .map(|f| {
                let [p0, p1, p2] = face_points_of(&vertices, &faces, f);
                0.5 * (p1 - p0).cross(&(p2 - p0)).norm()
            })
            .collect();
        let total_area: f64 = face_areas.iter().sum();

        // Group halfedges by undirected edge, then classify.
        let nhe = 3 * faces.len();
        let mut groups: HashMap<(usize, usize), Vec<u32>> = HashMap::new();
        for h in 0..nhe {
            let (t, hd) = he_endpoints(&faces, h);
            groups
                .entry((t.min(hd), t.max(hd)))
                .or_default()
                .push(h as u32);
        }

        let mut twin: Vec<Option<u32>> = vec![None; nhe];
        let mut boundary_vertex = vec![false; vertices.len()];
        let mut n_boundary_edges = 0;
        for (&(v0, v1), hes) in &groups {
            match hes.len() {
                1 => {
                    boundary_vertex[v0] = true;
                    boundary_vertex[v1] = true;
                    n_boundary_edges += 1;
                }
                2 => {
                    let (t0, _) = he_endpoints(&faces, hes[0] as usize);
                    let (t1, _) = he_endpoints(&faces, hes[1] as usize);
                    if t0 == t1 {
                        return Err(MeshError::InconsistentOrientation { v0, v1 });
                    }
                    twin[hes[0] as usize] = Some(hes[1]);
                    twin[hes[1] as usize] = Some(hes[0]);
                }
                _ => return Err(MeshError::NonManifoldEdge { v0, v1 }),
            }
        }

        // Emit interior edges in deterministic halfedge-id order, once per
        // pair, oriented by the lower-indexed face.
        let mut interior_edges = Vec::with_capacity(groups.len() - n_boundary_edges);
        for h in 0..nhe {
            let Some(t) = twin[h] else { continue };
            let (fi, fj) = (h / 3, t as usize / 3);
            if fi > fj {
                continue;
            }
            let (tail, head) = he_endpoints(&faces, h);
            let e3d = vertices[head] - vertices[tail];
            let e_i = local_basis[fi].transpose() * e3d;
            let e_j = local_basis[fj].transpose() * e3d;
            debug_assert!((e_i.norm() - e_j.norm()).abs() <= 1e-10 * e_i.norm().max(1.0));
            interior_edges.push(InteriorEdge {
                face_i: fi,
                face_j: fj,
                corner_i: (h % 3) as u8,
                corner_j: (t % 3) as u8,
                verts: [tail, head],
                e3d,
                e_i,
                e_j,
            });
        }

        let boundary_face = faces
            .iter()
            .map(|tri| tri.iter().any(|&v| boundary_vertex[v]))
            .collect();

        let mut vertex_hes: Vec<Vec<u32>> = vec![Vec::new(); vertices.len()];
        for h in 0..nhe {
            let (t, _) = he_endpoints(&faces, h);
            vertex_hes[t].push(h as u32);
        }

        let (mut lo, mut hi) = (vertices[0], vertices[0]);
        for p in &vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let bbox_diagonal = (hi - lo).norm();

        if let Some(vn) = &vertex_normals {
            debug_assert_eq!(vn.len(), vertices.len());
        }

        Ok(Self {
            vertices,
            faces,
            vertex_normals,
            local_basis,
            interior_edges,
            boundary_vertex,
            boundary_face,
            face_areas,
            total_area,
            bbox_diagonal,
            twin,
            vertex_hes,
            n_boundary_edges,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.interior_edges.len() + self.n_boundary_edges
    }

    pub fn n_boundary_edges(&self) -> usize {
        self.n_boundary_edges
    }

    pub fn is_closed(&self) -> bool {
        self.n_boundary_edges == 0
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.n_vertices() as i64 - self.n_edges() as i64 + self.n_faces() as i64
    }

    /// Twin halfedge, `None` on the boundary. Twin of twin is the halfedge
    /// itself.
    pub fn twin(&self, he: usize) -> Option<usize> {
        self.twin[he].map(|t| t as usize)
    }

    /// Halfedges whose tail is `v`; one per incident face corner.
    pub fn halfedges_from(&self, v: usize) -> &[u32] {
        &self.vertex_hes[v]
    }

    pub fn he_tail(&self, he: usize) -> usize {
        self.faces[he / 3][he % 3]
    }

    pub fn he_head(&self, he: usize) -> usize {
        self.faces[he / 3][(he + 1) % 3]
    }

    pub fn face_points(&self, f: usize) -> [Point3<f64>; 3] {
        face_points_of(&self.vertices, &self.faces, f)
    }

    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let b = &self.local_basis[f];
        b.column(0).cross(&b.column(1))
    }

    pub fn face_barycenter(&self, f: usize) -> Point3<f64> {
        let [p0, p1, p2] = self.face_points(f);
        Point3::from((p0.coords + p1.coords + p2.coords) / 3.0)
    }

    /// Corner positions in the face's own chart; the first corner sits at the
    /// origin and the triangle is CCW (positive area).
    pub fn face_local_coords(&self, f: usize) -> [Vec2; 3] {
        let [p0, p1, p2] = self.face_points(f);
        let bt = self.local_basis[f].transpose();
        [Vec2::zeros(), bt * (p1 - p0), bt * (p2 - p0)]
    }

    /// Gradients of the three linear hat functions in the face chart:
    /// `∇φ_k · (q_l − q_k) = δ_{kl} − 1` and `Σ_k u_k ∇φ_k` recovers the
    /// gradient of any linear interpolant.
    pub fn hat_gradients(&self, f: usize) -> [Vec2; 3] {
        let [q0, q1, q2] = self.face_local_coords(f);
        let inv_2a = 1.0 / (2.0 * self.face_areas[f]);
        [
            crate::geom::rot90(q2 - q1) * inv_2a,
            crate::geom::rot90(q0 - q2) * inv_2a,
            crate::geom::rot90(q1 - q0) * inv_2a,
        ]
    }

    /// Interior angle at corner `k` of face `f`, in radians.
    pub fn corner_angle(&self, f: usize, k: usize) -> f64 {
        let p = self.face_points(f);
        let a = p[(k + 1) % 3] - p[k];
        let b = p[(k + 2) % 3] - p[k];
        (a.cross(&b).norm()).atan2(a.dot(&b))
    }

    /// Vertex normals from the file when present, otherwise area-weighted
    /// averages of incident face normals.
    pub fn effective_vertex_normals(&self) -> Vec<Vector3<f64>> {
        if let Some(vn) = &self.vertex_normals {
            return vn.clone();
        }
        let mut acc = vec![Vector3::zeros(); self.n_vertices()];
        for f in 0..self.n_faces() {
            let n = self.face_normal(f) * self.face_areas[f];
            for &v in &self.faces[f] {
                acc[v] += n;
            }
        }
        for n in &mut acc {
            *n = n.normalize();
        }
        acc
    }

    pub fn to_poly(&self) -> PolyMesh {
        PolyMesh::new(
            self.vertices.clone(),
            self.faces.iter().map(|t| t.to_vec()).collect(),
        )
        .expect("triangle surface is a valid polygon mesh")
    }
}

fn face_points_of(
    vertices: &[Point3<f64>],
    faces: &[[usize; 3]],
    f: usize,
) -> [Point3<f64>; 3] {
    let [a, b, c] = faces[f];
    [vertices[a], vertices[b], vertices[c]]
}

fn he_endpoints(faces: &[[usize; 3]], h: usize) -> (usize, usize) {
    let tri = &faces[h / 3];
    (tri[h % 3], tri[(h + 1) % 3])
}

/// Per-face orthonormal frames: first column along the first edge, second its
/// in-plane perpendicular (so `b1 × b2` is the CCW face normal).
pub fn build_local_bases(
    vertices: &[Point3<f64>],
    faces: &[[usize; 3]],
) -> Result<Vec<Matrix3x2<f64>>, MeshError> {
    let areas: Vec<f64> = (0..faces.len())
        .map(|f| {
            let [p0, p1, p2] = face_points_of(vertices, faces, f);
            0.5 * (p1 - p0).cross(&(p2 - p0)).norm()
        })
        .collect();
    let mean_area = areas.iter().sum::<f64>() / faces.len().max(1) as f64;
    let threshold = DEGENERATE_AREA_FRACTION * mean_area;

    let mut bases = Vec::with_capacity(faces.len());
    for (f, &area) in areas.iter().enumerate() {
        if !(area > threshold) {
            return Err(MeshError::DegenerateFace { face: f, area });
        }
        let [p0, p1, p2] = face_points_of(vertices, faces, f);
        let b1 = (p1 - p0).normalize();
        let n = (p1 - p0).cross(&(p2 - p0)).normalize();
        let b2 = n.cross(&b1);
        let b = Matrix3x2::from_columns(&[b1, b2]);
        debug_assert!(
            (b.transpose() * b - nalgebra::Matrix2::identity()).norm() <= 1e-12,
            "local basis must be orthonormal"
        );
        bases.push(b);
    }
    Ok(bases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_relative_eq, relative_eq};
    use nalgebra::Matrix2;

    fn equilateral() -> TriangleSurface {
        TriangleSurface::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.5, 3f64.sqrt() / 2.0, 0.0),
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_has_no_interior_edges() {
        let m = equilateral();
        assert_eq!(m.n_faces(), 1);
        assert_eq!(m.interior_edges.len(), 0);
        assert_eq!(m.n_boundary_edges(), 3);
        assert!(m.boundary_vertex.iter().all(|&b| b));
        assert!(m.boundary_face[0]);
    }

    #[test]
    fn two_triangles_share_one_interior_edge() {
        let m = TriangleSurface::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap();
        assert_eq!(m.interior_edges.len(), 1);
        let e = &m.interior_edges[0];
        assert_eq!((e.face_i, e.face_j), (0, 1));
        // Face 0 = [0,1,2] traverses the shared diagonal as 2 -> 0.
        assert_eq!(e.verts, [2, 0]);
        assert_eq!(e.corner_i, 2);
        assert_eq!(e.corner_j, 0);
        assert_relative_eq!(e.e_i.norm(), e.e_j.norm(), epsilon = 1e-10);
        assert_relative_eq!(e.e3d.norm(), 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn local_basis_of_axis_aligned_face_is_canonical() {
        let m = equilateral();
        let b = &m.local_basis[0];
        assert_relative_eq!(b.column(0).into_owned(), Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(b.column(1).into_owned(), Vector3::new(0.0, 1.0, 0.0));
    }

    #[test]
    fn bases_are_orthonormal_and_tangent() {
        let m = shapes::icosphere(2, 1.0);
        for f in 0..m.n_faces() {
            let b = &m.local_basis[f];
            let gram = b.transpose() * b;
            assert!((gram - Matrix2::identity()).norm() <= 1e-12);
            let n = m.face_normal(f);
            assert!((b.transpose() * n).norm() <= 1e-12);
        }
    }

    #[test]
    fn icosphere_counts_satisfy_euler_formula() {
        let m = shapes::icosphere(2, 1.0);
        assert!(m.is_closed());
        assert_eq!(m.n_faces(), 320);
        assert_eq!(m.interior_edges.len(), m.n_faces() * 3 / 2);
        assert_eq!(m.euler_characteristic(), 2);
    }

    #[test]
    fn twin_is_an_involution() {
        let m = shapes::icosphere(1, 1.0);
        for h in 0..3 * m.n_faces() {
            if let Some(t) = m.twin(h) {
                assert_eq!(m.twin(t), Some(h));
                assert_eq!(m.he_tail(h), m.he_head(t));
                assert_eq!(m.he_head(h), m.he_tail(t));
            }
        }
    }

    #[test]
    fn discrete_gauss_bonnet_on_closed_meshes() {
        for m in [shapes::icosphere(2, 1.0), shapes::icosphere(3, 0.7)] {
            let mut defect = 0.0;
            for v in 0..m.n_vertices() {
                let angle_sum: f64 = m
                    .halfedges_from(v)
                    .iter()
                    .map(|&h| m.corner_angle(h as usize / 3, h as usize % 3))
                    .sum();
                defect += std::f64::consts::TAU - angle_sum;
            }
            let expected = std::f64::consts::TAU * m.euler_characteristic() as f64;
            assert_relative_eq!(defect, expected, max_relative = 1e-6);
        }
    }

    #[test]
    fn nonmanifold_edge_is_rejected_with_its_endpoints() {
        let err = TriangleSurface::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, -1.0, 0.0),
                Point3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
            None,
        )
        .unwrap_err();
        match err {
            MeshError::NonManifoldEdge { v0, v1 } => assert_eq!((v0, v1), (0, 1)),
            other => panic!("expected non-manifold rejection, got {other}"),
        }
    }

    #[test]
    fn inconsistent_orientation_is_rejected() {
        let err = TriangleSurface::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(0.0, -1.0, 0.0),
            ],
            // Both faces traverse 0 -> 1.
            vec![[0, 1, 2], [0, 1, 3]],
            None,
        )
        .unwrap_err();
        assert!(matches!(err, MeshError::InconsistentOrientation { .. }));
    }

    #[test]
    fn degenerate_face_is_rejected_by_index() {
        let err = TriangleSurface::from_parts(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(2.0, 0.0, 0.0),
            ],
            // Face 1 is collinear.
            vec![[0, 1, 2], [0, 1, 3]],
            None,
        )
        .unwrap_err();
        match err {
            MeshError::DegenerateFace { face, .. } => assert_eq!(face, 1),
            other => panic!("expected degenerate rejection, got {other}"),
        }
    }

    #[test]
    fn hat_gradients_recover_linear_functions() {
        let m = shapes::icosphere(1, 1.3);
        for f in 0..m.n_faces() {
            let q = m.face_local_coords(f);
            let g = m.hat_gradients(f);
            // u(q) = 2 q.x - 0.7 q.y + 0.3 sampled at corners.
            let alpha = Vec2::new(2.0, -0.7);
            let grad: Vec2 = (0..3).map(|k| g[k] * (alpha.dot(&q[k]) + 0.3)).sum();
            assert_relative_eq!(grad, alpha, epsilon = 1e-12);
            // Partition of unity: gradients sum to zero.
            assert!((g[0] + g[1] + g[2]).norm() <= 1e-12);
        }
    }

    #[test]
    fn interior_edge_vectors_match_their_corners() {
        let m = shapes::icosphere(1, 1.0);
        for e in &m.interior_edges {
            let h = 3 * e.face_i + e.corner_i as usize;
            assert_eq!(m.he_tail(h), e.verts[0]);
            assert_eq!(m.he_head(h), e.verts[1]);
            let t = 3 * e.face_j + e.corner_j as usize;
            assert_eq!(m.he_tail(t), e.verts[1]);
            assert_eq!(m.he_head(t), e.verts[0]);
            // Chart coordinates reproduce the 3D vector through each basis.
            let back_i = m.local_basis[e.face_i] * e.e_i;
            let back_j = m.local_basis[e.face_j] * e.e_j;
            assert!(relative_eq!(back_i, e.e3d, epsilon = 1e-12));
            assert!(relative_eq!(back_j, e.e3d, epsilon = 1e-12));
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = shapes::icosphere(2, 1.0);
        let b = shapes::icosphere(2, 1.0);
        assert_eq!(a.local_basis, b.local_basis);
        assert_eq!(
            a.interior_edges
                .iter()
                .map(|e| (e.face_i, e.face_j))
                .collect::<Vec<_>>(),
            b.interior_edges
                .iter()
                .map(|e| (e.face_i, e.face_j))
                .collect::<Vec<_>>()
        );
    }
}
