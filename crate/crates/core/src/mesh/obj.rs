//! ASCII OBJ input and output.
//!
//! OBJ is the sole interchange format: triangle inputs come in through
//! [`load_mesh`], every pipeline stage writes polygons through [`write_obj`].
//! Vertex normals (`vn`) are honored when present, either bound through
//! `v//n` face references or positionally when the counts match.

use super::{MeshError, PolyMesh, TriangleSurface};
use nalgebra::{Point3, Vector3};
use std::io::Write as _;
use std::path::Path;

struct RawObj {
    vertices: Vec<Point3<f64>>,
    normals: Vec<Vector3<f64>>,
    /// Per face: vertex indices and optional normal indices, already 0-based.
    faces: Vec<(Vec<usize>, Vec<Option<usize>>)>,
}

fn parse(text: &str) -> Result<RawObj, MeshError> {
    let mut raw = RawObj {
        vertices: Vec::new(),
        normals: Vec::new(),
        faces: Vec::new(),
    };
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut it = line.split_whitespace();
        let err = |msg: &str| MeshError::Parse {
            line: ln + 1,
            msg: msg.to_string(),
        };
        match it.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for x in &mut c {
                    *x = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("expected 3 coordinates after 'v'"))?;
                }
                raw.vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("vn") => {
                let mut c = [0.0; 3];
                for x in &mut c {
                    *x = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err("expected 3 coordinates after 'vn'"))?;
                }
                raw.normals.push(Vector3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let mut vs = Vec::new();
                let mut ns = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let v = parts
                        .next()
                        .and_then(|t| t.parse::<i64>().ok())
                        .ok_or_else(|| err("bad face vertex index"))?;
                    let _texture = parts.next();
                    let n = match parts.next() {
                        Some("") | None => None,
                        Some(t) => Some(t.parse::<i64>().map_err(|_| err("bad normal index"))?),
                    };
                    vs.push(resolve(v, raw.vertices.len()).ok_or_else(|| {
                        err(&format!("vertex index {v} out of range"))
                    })?);
                    ns.push(match n {
                        None => None,
                        Some(n) => Some(resolve(n, raw.normals.len()).ok_or_else(|| {
                            err(&format!("normal index {n} out of range"))
                        })?),
                    });
                }
                if vs.len() < 3 {
                    return Err(err("face needs at least 3 vertices"));
                }
                raw.faces.push((vs, ns));
            }
            // Groups, materials, texture coordinates, comments: ignored.
            _ => {}
        }
    }
    Ok(raw)
}

/// 1-based absolute or negative relative OBJ index to 0-based.
fn resolve(idx: i64, len: usize) -> Option<usize> {
    let i = if idx > 0 { idx - 1 } else { len as i64 + idx };
    (0..len as i64).contains(&i).then_some(i as usize)
}

/// Load and validate a triangle mesh, building adjacency and local frames.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleSurface, MeshError> {
    let raw = parse(&std::fs::read_to_string(path)?)?;
    let mut faces = Vec::with_capacity(raw.faces.len());
    for (f, (vs, _)) in raw.faces.iter().enumerate() {
        if vs.len() != 3 {
            return Err(MeshError::NonTriangleFace {
                face: f,
                degree: vs.len(),
            });
        }
        faces.push([vs[0], vs[1], vs[2]]);
    }

    let uses_refs = raw.faces.iter().any(|(_, ns)| ns.iter().any(Option::is_some));
    let normals = if uses_refs {
        let mut per_vertex = vec![None; raw.vertices.len()];
        for (vs, ns) in &raw.faces {
            for (&v, &n) in vs.iter().zip(ns) {
                if let Some(n) = n {
                    per_vertex[v] = Some(raw.normals[n]);
                }
            }
        }
        if per_vertex.iter().all(Option::is_some) {
            Some(
                per_vertex
                    .into_iter()
                    .map(|n| n.unwrap().normalize())
                    .collect(),
            )
        } else {
            None
        }
    } else if !raw.normals.is_empty() && raw.normals.len() == raw.vertices.len() {
        Some(raw.normals.iter().map(|n| n.normalize()).collect())
    } else {
        None
    };

    TriangleSurface::from_parts(raw.vertices, faces, normals)
}

/// Load a polygon mesh (arbitrary face degrees); normals are ignored.
pub fn load_poly(path: impl AsRef<Path>) -> Result<PolyMesh, MeshError> {
    let raw = parse(&std::fs::read_to_string(path)?)?;
    PolyMesh::new(
        raw.vertices,
        raw.faces.into_iter().map(|(vs, _)| vs).collect(),
    )
}

/// Write a polygon OBJ with 9 significant digits per coordinate, enough for
/// a lossless-to-printed-precision round trip.
pub fn write_obj(mesh: &PolyMesh, path: impl AsRef<Path>) -> Result<(), MeshError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "# {} vertices, {} faces",
        mesh.n_vertices(),
        mesh.n_faces()
    )?;
    for p in &mesh.vertices {
        writeln!(out, "v {:.8e} {:.8e} {:.8e}", p.x, p.y, p.z)?;
    }
    for cycle in &mesh.faces {
        write!(out, "f")?;
        for &v in cycle {
            write!(out, " {}", v + 1)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes;
    use approx::assert_relative_eq;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let file = tempfile::NamedTempFile::new().unwrap();
        std::fs::write(file.path(), content).unwrap();
        file
    }

    #[test]
    fn loads_triangles_with_slash_forms_and_negative_indices() {
        let file = write_temp(
            "# comment\n\
             v 0 0 0\nv 1 0 0\nv 0 1 0\n\
             vt 0 0\n\
             f 1/1 2/1 -1/1\n",
        );
        let m = load_mesh(file.path()).unwrap();
        assert_eq!(m.n_faces(), 1);
        assert_eq!(m.faces[0], [0, 1, 2]);
        assert!(m.vertex_normals.is_none());
    }

    #[test]
    fn honors_vertex_normals_bound_by_face_references() {
        let file = write_temp(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\n\
             vn 0 0 2\nvn 0 0 2\nvn 0 0 2\n\
             f 1//1 2//2 3//3\n",
        );
        let m = load_mesh(file.path()).unwrap();
        let vn = m.vertex_normals.unwrap();
        for n in vn {
            assert_relative_eq!(n, Vector3::new(0.0, 0.0, 1.0));
        }
    }

    #[test]
    fn honors_positional_normals_when_counts_match() {
        let file = write_temp(
            "v 0 0 0\nv 1 0 0\nv 0 1 0\n\
             vn 0 0 1\nvn 0 0 1\nvn 0 0 1\n\
             f 1 2 3\n",
        );
        assert!(load_mesh(file.path()).unwrap().vertex_normals.is_some());
    }

    #[test]
    fn rejects_polygon_faces_in_triangle_loader() {
        let file = write_temp(
            "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n",
        );
        assert!(matches!(
            load_mesh(file.path()),
            Err(MeshError::NonTriangleFace { face: 0, degree: 4 })
        ));
    }

    #[test]
    fn quad_and_hexagon_faces_write_single_lines() {
        let mut vertices = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        for k in 0..6 {
            let a = std::f64::consts::TAU * k as f64 / 6.0;
            vertices.push(Point3::new(3.0 + a.cos(), a.sin(), 0.0));
        }
        let m = PolyMesh::new(
            vertices,
            vec![vec![0, 1, 2, 3], vec![4, 5, 6, 7, 8, 9]],
        )
        .unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_obj(&m, file.path()).unwrap();
        let text = std::fs::read_to_string(file.path()).unwrap();
        assert!(text.contains("f 1 2 3 4\n"));
        assert!(text.contains("f 5 6 7 8 9 10\n"));
    }

    #[test]
    fn round_trip_preserves_coordinates_and_connectivity() {
        let sphere = shapes::icosphere(2, 0.83).to_poly();
        let file = tempfile::NamedTempFile::new().unwrap();
        write_obj(&sphere, file.path()).unwrap();
        let back = load_poly(file.path()).unwrap();
        assert_eq!(back.faces, sphere.faces);
        for (p, q) in back.vertices.iter().zip(&sphere.vertices) {
            assert_relative_eq!(p, q, max_relative = 1e-8);
        }
        // A second trip through the printed representation is exact.
        let file2 = tempfile::NamedTempFile::new().unwrap();
        write_obj(&back, file2.path()).unwrap();
        let third = load_poly(file2.path()).unwrap();
        assert_eq!(third.vertices, back.vertices);
    }

    #[test]
    fn triangle_round_trip_is_loadable_as_surface() {
        let m = shapes::icosphere(1, 1.0);
        let file = tempfile::NamedTempFile::new().unwrap();
        write_obj(&m.to_poly(), file.path()).unwrap();
        let back = load_mesh(file.path()).unwrap();
        assert_eq!(back.n_faces(), m.n_faces());
        assert!(back.is_closed());
    }
}
