//! General polygon meshes (outputs of extraction, dualization, and
//! planarization) with directed-edge adjacency.

use super::MeshError;
use nalgebra::Point3;
use std::collections::HashMap;

/// A polygon mesh with variable-degree CCW face loops.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<Vec<usize>>,
}

impl PolyMesh {
    /// Validates that every loop has at least 3 distinct vertices, no repeated
    /// consecutive indices (including the wrap-around), and in-range indices.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<Vec<usize>>) -> Result<Self, MeshError> {
        for (f, cycle) in faces.iter().enumerate() {
            for &v in cycle {
                if v >= vertices.len() {
                    return Err(MeshError::IndexOutOfRange {
                        face: f,
                        vertex: v,
                        count: vertices.len(),
                    });
                }
            }
            let mut distinct = cycle.clone();
            distinct.sort_unstable();
            distinct.dedup();
            if distinct.len() < 3 {
                return Err(MeshError::InvalidFaceLoop {
                    face: f,
                    msg: format!("only {} distinct vertices", distinct.len()),
                });
            }
            for k in 0..cycle.len() {
                if cycle[k] == cycle[(k + 1) % cycle.len()] {
                    return Err(MeshError::InvalidFaceLoop {
                        face: f,
                        msg: format!("vertex {} repeated consecutively", cycle[k]),
                    });
                }
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn face_degrees(&self) -> Vec<usize> {
        self.faces.iter().map(Vec::len).collect()
    }

    pub fn face_barycenter(&self, f: usize) -> Point3<f64> {
        let cycle = &self.faces[f];
        let sum = cycle
            .iter()
            .fold(nalgebra::Vector3::zeros(), |acc, &v| {
                acc + self.vertices[v].coords
            });
        Point3::from(sum / cycle.len() as f64)
    }

    /// Build directed-edge adjacency. Fails if two faces traverse the same
    /// directed edge (inconsistent orientation) so that `face_across` is
    /// well defined.
    pub fn adjacency(&self) -> Result<PolyAdjacency, MeshError> {
        let mut directed: HashMap<(usize, usize), (u32, u32)> = HashMap::new();
        for (f, cycle) in self.faces.iter().enumerate() {
            for (s, &v) in cycle.iter().enumerate() {
                let w = cycle[(s + 1) % cycle.len()];
                if directed.insert((v, w), (f as u32, s as u32)).is_some() {
                    return Err(MeshError::InconsistentOrientation { v0: v, v1: w });
                }
            }
        }
        let mut boundary_vertex = vec![false; self.n_vertices()];
        for (&(v, w), _) in &directed {
            if !directed.contains_key(&(w, v)) {
                boundary_vertex[v] = true;
                boundary_vertex[w] = true;
            }
        }
        let mut vertex_faces: Vec<Vec<(u32, u32)>> = vec![Vec::new(); self.n_vertices()];
        for (f, cycle) in self.faces.iter().enumerate() {
            for (s, &v) in cycle.iter().enumerate() {
                vertex_faces[v].push((f as u32, s as u32));
            }
        }
        Ok(PolyAdjacency {
            directed,
            boundary_vertex,
            vertex_faces,
        })
    }
}

#[derive(Debug)]
pub struct PolyAdjacency {
    directed: HashMap<(usize, usize), (u32, u32)>,
    pub boundary_vertex: Vec<bool>,
    /// Unordered (face, slot) incidence per vertex.
    pub vertex_faces: Vec<Vec<(u32, u32)>>,
}

impl PolyAdjacency {
    /// Face owning the directed edge `tail -> head` and the slot of `tail`
    /// within its loop.
    pub fn face_with_edge(&self, tail: usize, head: usize) -> Option<(usize, usize)> {
        self.directed
            .get(&(tail, head))
            .map(|&(f, s)| (f as usize, s as usize))
    }

    /// CCW-ordered incident faces around an interior vertex; `None` when the
    /// vertex is on the boundary or the walk does not close.
    pub fn fan_ccw(&self, mesh: &PolyMesh, v: usize) -> Option<Vec<usize>> {
        let &(f0, s0) = self.vertex_faces[v].first()?;
        let (mut f, mut s) = (f0 as usize, s0 as usize);
        let mut fan = Vec::new();
        loop {
            fan.push(f);
            if fan.len() > self.vertex_faces[v].len() {
                return None;
            }
            let cycle = &mesh.faces[f];
            let prev = cycle[(s + cycle.len() - 1) % cycle.len()];
            // Crossing the edge v -> prev lands on the CCW-next face.
            let (nf, ns) = self.face_with_edge(v, prev)?;
            if nf == f0 as usize {
                return Some(fan);
            }
            (f, s) = (nf, ns);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Regular hexagon fan: center vertex 0, CCW ring 1..=6.
    fn hex_fan() -> PolyMesh {
        let mut vertices = vec![Point3::new(0.0, 0.0, 0.0)];
        for k in 0..6 {
            let a = std::f64::consts::TAU * k as f64 / 6.0;
            vertices.push(Point3::new(a.cos(), a.sin(), 0.0));
        }
        let faces = (0..6)
            .map(|k| vec![0, 1 + k, 1 + (k + 1) % 6])
            .collect();
        PolyMesh::new(vertices, faces).unwrap()
    }

    #[test]
    fn rejects_short_and_stuttering_loops() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        assert!(matches!(
            PolyMesh::new(pts.clone(), vec![vec![0, 1, 0, 1]]),
            Err(MeshError::InvalidFaceLoop { .. })
        ));
        assert!(matches!(
            PolyMesh::new(pts.clone(), vec![vec![0, 1, 1, 2]]),
            Err(MeshError::InvalidFaceLoop { .. })
        ));
        assert!(matches!(
            PolyMesh::new(pts, vec![vec![0, 1, 2, 0]]),
            Err(MeshError::InvalidFaceLoop { .. })
        ));
    }

    #[test]
    fn fan_around_interior_vertex_is_ccw() {
        let m = hex_fan();
        let adj = m.adjacency().unwrap();
        assert!(!adj.boundary_vertex[0]);
        assert!(adj.boundary_vertex[1]);
        let fan = adj.fan_ccw(&m, 0).unwrap();
        assert_eq!(fan.len(), 6);
        // Successive fan faces share the ring in CCW order.
        for w in 0..6 {
            let cur = fan[w];
            let nxt = fan[(w + 1) % 6];
            // Face k is [0, 1+k, 1+(k+1)%6]; CCW successor is k+1 mod 6.
            assert_eq!((cur + 1) % 6, nxt);
        }
        assert!(adj.fan_ccw(&m, 1).is_none(), "boundary vertex has no fan");
    }

    #[test]
    fn face_degrees_reports_loop_lengths() {
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(2.0, 0.5, 0.0),
        ];
        let m = PolyMesh::new(pts, vec![vec![0, 1, 2, 3], vec![1, 4, 2]]).unwrap();
        assert_eq!(m.face_degrees(), vec![4, 3]);
    }
}
