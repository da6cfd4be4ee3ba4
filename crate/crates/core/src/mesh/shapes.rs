//! Procedural test and demo surfaces.
//!
//! All generators produce consistently oriented triangle meshes (outward
//! normals for closed shapes, +z-ish normals for height fields) and panic
//! only on parameter abuse such as zero resolution.

use super::TriangleSurface;
use nalgebra::Point3;
use std::collections::HashMap;

fn build(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> TriangleSurface {
    TriangleSurface::from_parts(vertices, faces, None)
        .expect("generator produces a valid mesh")
}

/// Triangulate the quad lattice `(i, j)` in `0..=nx × 0..=ny` with
/// `position(i, j)` supplying the embedding; `wrap_j` closes the j direction.
fn lattice(
    nx: usize,
    ny: usize,
    wrap_j: bool,
    position: impl Fn(usize, usize) -> Point3<f64>,
) -> (Vec<Point3<f64>>, Vec<[usize; 3]>) {
    assert!(nx >= 1 && ny >= if wrap_j { 3 } else { 1 });
    let cols = if wrap_j { ny } else { ny + 1 };
    let mut vertices = Vec::with_capacity((nx + 1) * cols);
    for i in 0..=nx {
        for j in 0..cols {
            vertices.push(position(i, j));
        }
    }
    let at = |i: usize, j: usize| i * cols + (j % cols);
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    (vertices, faces)
}

/// Flat `n × n`-cell square grid over `[0, size]²` in the z = 0 plane.
pub fn grid(n: usize, size: f64) -> TriangleSurface {
    let h = size / n as f64;
    let (v, f) = lattice(n, n, false, |i, j| {
        Point3::new(i as f64 * h, j as f64 * h, 0.0)
    });
    build(v, f)
}

/// Saddle height field z = (x² − y²) / c over `[−extent, extent]²`.
pub fn hypar(n: usize, extent: f64, c: f64) -> TriangleSurface {
    let h = 2.0 * extent / n as f64;
    let (v, f) = lattice(n, n, false, |i, j| {
        let x = -extent + i as f64 * h;
        let y = -extent + j as f64 * h;
        Point3::new(x, y, (x * x - y * y) / c)
    });
    build(v, f)
}

/// Open cylinder tube of radius `r` and height `h`, axis +z, `nu` angular
/// segments and `nv` rings of quads.
pub fn cylinder(r: f64, h: f64, nu: usize, nv: usize) -> TriangleSurface {
    // The lattice walks (i, j+) second, so a clockwise angle keeps the
    // cross product i+ × j+ pointing outward.
    let (v, f) = lattice(nv, nu, true, |i, j| {
        let a = -(std::f64::consts::TAU) * j as f64 / nu as f64;
        Point3::new(r * a.cos(), r * a.sin(), h * i as f64 / nv as f64)
    });
    build(v, f)
}

/// Sector of a torus: major radius `big_r`, tube radius `r`, major angle
/// sweeping `[0, sweep]` with open ends; the tube direction is closed.
pub fn torus_sector(
    big_r: f64,
    r: f64,
    sweep: f64,
    nu: usize,
    nv: usize,
) -> TriangleSurface {
    let (v, f) = lattice(nu, nv, true, |i, j| {
        let u = sweep * i as f64 / nu as f64;
        let vv = std::f64::consts::TAU * j as f64 / nv as f64;
        let ring = big_r + r * vv.cos();
        Point3::new(ring * u.cos(), ring * u.sin(), r * vv.sin())
    });
    build(v, f)
}

/// Flat disk of radius `r` in the z = 0 plane: a center fan plus `n_rings`
/// concentric quad strips with `ns` sectors.
pub fn disk(r: f64, n_rings: usize, ns: usize) -> TriangleSurface {
    assert!(n_rings >= 1 && ns >= 3);
    let mut vertices = vec![Point3::new(0.0, 0.0, 0.0)];
    for k in 1..=n_rings {
        let rk = r * k as f64 / n_rings as f64;
        for j in 0..ns {
            let a = std::f64::consts::TAU * j as f64 / ns as f64;
            vertices.push(Point3::new(rk * a.cos(), rk * a.sin(), 0.0));
        }
    }
    let at = |k: usize, j: usize| 1 + (k - 1) * ns + (j % ns);
    let mut faces = Vec::new();
    for j in 0..ns {
        faces.push([0, at(1, j), at(1, j + 1)]);
    }
    for k in 1..n_rings {
        for j in 0..ns {
            faces.push([at(k, j), at(k + 1, j), at(k + 1, j + 1)]);
            faces.push([at(k, j), at(k + 1, j + 1), at(k, j + 1)]);
        }
    }
    build(vertices, faces)
}

/// Flat annulus between radii `r0 < r1` in the z = 0 plane.
pub fn annulus(r0: f64, r1: f64, n_rings: usize, ns: usize) -> TriangleSurface {
    assert!(r0 > 0.0 && r1 > r0);
    let (v, f) = lattice(n_rings, ns, true, |i, j| {
        let rk = r0 + (r1 - r0) * i as f64 / n_rings as f64;
        let a = std::f64::consts::TAU * j as f64 / ns as f64;
        Point3::new(rk * a.cos(), rk * a.sin(), 0.0)
    });
    build(v, f)
}

/// Icosphere: a subdivided icosahedron projected onto the sphere of radius
/// `r`. Level L has `20 · 4^L` faces.
pub fn icosphere(level: u32, r: f64) -> TriangleSurface {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::new(x, y, z))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..level {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for tri in &faces {
            let mut mid = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    vertices.push(Point3::from(
                        (vertices[a].coords + vertices[b].coords) / 2.0,
                    ));
                    vertices.len() - 1
                });
            }
            next.push([tri[0], mid[0], mid[2]]);
            next.push([tri[1], mid[1], mid[0]]);
            next.push([tri[2], mid[2], mid[1]]);
            next.push(mid);
        }
        faces = next;
    }

    for p in &mut vertices {
        p.coords = p.coords.normalize() * r;
    }
    build(vertices, faces)
}
