//! Mesh extraction: slice every face's parametric triangle along the integer
//! levels of the grid axis functions, weld the pieces into the primal lattice
//! mesh, and build the hex-dominant barycentric dual.
//!
//! Cells are carved per face by successive convex splits, so each stays a
//! convex polygon in its chart. Assembly welds coincident fragment corners
//! across faces (seam transitions map integer isolines to integer isolines,
//! so both sides of a seam carve the same points in 3D), merges fragments
//! across every welded edge that does not lie on an isoline, and straightens
//! away the crossing points isolines leave on input edges. For hexagonal
//! grids the merged cells are unit lattice triangles away from singularities
//! and quads next to half-integer singularities; both are triangulated. Quad
//! grids keep their polygon cells and skip dualization.

use crate::geom::Vec2;
use crate::integrate::{axis_values, SeamlessParam};
use crate::mesh::{MeshError, PolyMesh, TriangleSurface};
use nalgebra::{Point3, Vector3};
use std::collections::{BTreeMap, HashMap};
use thiserror::Error;

/// Cell corners within this of an integer level (in grid units) are treated
/// as lying on the isoline and tagged with its integer.
pub const SNAP_TOL: f64 = 1e-7;
/// Weld radius for coincident fragment corners, as a fraction of the average
/// fragment edge length. Larger than the snap radius on purpose: fragments
/// that barely miss a lattice point still collapse onto it, and the loop
/// dedup below absorbs the resulting zero-length edges.
pub const WELD_FACTOR: f64 = 1e-6;
/// Parametric triangles below this area are skipped and reported.
const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("mesh: {0}")]
    Mesh(#[from] MeshError),
    #[error("welded edge {a}-{b} borders more than two cells")]
    NonManifoldEdge { a: usize, b: usize },
    #[error("merged cell bounded by {loops} loops instead of one")]
    NonDiskCell { loops: usize },
    #[error("face fan around interior vertex {vertex} does not close")]
    InconsistentFan { vertex: usize },
    #[error("no faces survive boundary-strip trimming")]
    TrimmedAway,
}

// ---------------------------------------------------------------------------
// Arrangement types
// ---------------------------------------------------------------------------

/// Corner of a subdivision cell in one face's parametric chart.
#[derive(Debug, Clone)]
pub struct CellPoint {
    pub uv: Vec2,
    /// Barycentric coordinates in the input face.
    pub bary: [f64; 3],
    /// Position on the input surface.
    pub xyz: Point3<f64>,
    /// Integer level per axis when the point lies on that isoline family.
    pub levels: [Option<i64>; 3],
}

impl CellPoint {
    /// Number of traced isoline families passing through the point.
    pub fn tag_count(&self, axes: usize) -> usize {
        self.levels[..axes].iter().flatten().count()
    }
}

/// One convex cell of a face's isoline subdivision, CCW in the chart.
#[derive(Debug, Clone)]
pub struct Cell {
    pub points: Vec<CellPoint>,
}

/// An isoline segment clipped to one face's parametric triangle.
#[derive(Debug, Clone)]
pub struct IsoSegment {
    pub axis: usize,
    pub level: i64,
    pub uv: [Vec2; 2],
    pub xyz: [Point3<f64>; 2],
}

/// Per input face: the isoline segments crossing it and the convex cells
/// they cut its parametric triangle into.
#[derive(Debug, Clone)]
pub struct FaceArrangement {
    pub face: usize,
    pub corner_uv: [Vec2; 3],
    pub segments: Vec<IsoSegment>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone)]
pub struct IsolineArrangement {
    pub degree: u32,
    /// Traced axis families (3 for hexagonal grids, 2 for quad grids).
    pub axes: usize,
    pub faces: Vec<FaceArrangement>,
    /// Faces skipped because their parametric triangle was degenerate.
    pub skipped: Vec<usize>,
}

// ---------------------------------------------------------------------------
// Tracing
// ---------------------------------------------------------------------------

/// Cut every face's parametric triangle along the integer isolines of the
/// axis functions and record both the segments and the resulting cells.
pub fn trace_isolines(mesh: &TriangleSurface, param: &SeamlessParam) -> IsolineArrangement {
    let degree = param.degree;
    let axes = param.axis_count();
    let mut faces = Vec::with_capacity(mesh.n_faces());
    let mut skipped = Vec::new();
    for f in 0..mesh.n_faces() {
        let corner_uv = [0, 1, 2].map(|k| param.corner_uv(f, k));
        let e1 = corner_uv[1] - corner_uv[0];
        let e2 = corner_uv[2] - corner_uv[0];
        if (e1.x * e2.y - e1.y * e2.x).abs() < 2.0 * DEGENERATE_AREA {
            skipped.push(f);
            continue;
        }
        let corner_xyz = mesh.faces[f].map(|v| mesh.vertices[v]);
        let mut cells = vec![corner_cell(&corner_uv, &corner_xyz, degree, axes)];
        let mut segments = Vec::new();
        for axis in 0..axes {
            let hs = corner_uv.map(|uv| axis_values(degree, uv)[axis]);
            let lo = hs.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = hs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            // Levels that merely touch a corner still matter: the touch
            // tags the corner so it welds into the lattice.
            let first = (lo - SNAP_TOL).ceil() as i64;
            let last = (hi + SNAP_TOL).floor() as i64;
            for level in first..=last {
                if let Some(seg) = clip_level_line(&corner_uv, &corner_xyz, degree, axis, level) {
                    segments.push(seg);
                }
                let mut next = Vec::with_capacity(cells.len() + 2);
                for cell in cells {
                    next.extend(split_cell(cell, degree, axes, axis, level));
                }
                cells = next;
            }
        }
        faces.push(FaceArrangement {
            face: f,
            corner_uv,
            segments,
            cells,
        });
    }
    IsolineArrangement {
        degree,
        axes,
        faces,
        skipped,
    }
}

fn grid_point(uv: Vec2, bary: [f64; 3], xyz: Point3<f64>, degree: u32, axes: usize) -> CellPoint {
    let h = axis_values(degree, uv);
    let mut levels = [None; 3];
    for (l, lv) in levels.iter_mut().enumerate().take(axes) {
        if (h[l] - h[l].round()).abs() < SNAP_TOL {
            *lv = Some(h[l].round() as i64);
        }
    }
    let mut p = CellPoint {
        uv,
        bary,
        xyz,
        levels,
    };
    complete_third(&mut p, axes);
    p
}

fn corner_cell(
    corner_uv: &[Vec2; 3],
    corner_xyz: &[Point3<f64>; 3],
    degree: u32,
    axes: usize,
) -> Cell {
    let points = (0..3)
        .map(|k| {
            let mut bary = [0.0; 3];
            bary[k] = 1.0;
            grid_point(corner_uv[k], bary, corner_xyz[k], degree, axes)
        })
        .collect();
    Cell { points }
}

/// The axis triple satisfies h1 - h2 + h3 = 0, so two exact tags pin the
/// third exactly; this keeps lattice intersections aligned across all three
/// families instead of re-rounding.
fn complete_third(p: &mut CellPoint, axes: usize) {
    if axes < 3 {
        return;
    }
    let l = &mut p.levels;
    match (l[0], l[1], l[2]) {
        (Some(a), Some(b), None) => l[2] = Some(b - a),
        (Some(a), None, Some(c)) => l[1] = Some(a + c),
        (None, Some(b), Some(c)) => l[0] = Some(b - c),
        _ => {}
    }
}

fn crossing(
    a: &CellPoint,
    b: &CellPoint,
    sa: f64,
    sb: f64,
    axis: usize,
    level: i64,
    axes: usize,
) -> CellPoint {
    let t = sa / (sa - sb);
    let mut levels = [None; 3];
    for l in 0..3 {
        // An edge interior to some other isoline keeps that tag.
        if l != axis && a.levels[l].is_some() && a.levels[l] == b.levels[l] {
            levels[l] = a.levels[l];
        }
    }
    levels[axis] = Some(level);
    let mut p = CellPoint {
        uv: a.uv + (b.uv - a.uv) * t,
        bary: [0, 1, 2].map(|k| a.bary[k] + (b.bary[k] - a.bary[k]) * t),
        xyz: a.xyz + (b.xyz - a.xyz) * t,
        levels,
    };
    complete_third(&mut p, axes);
    p
}

/// Split a convex cell by the line `h_axis = level`. Corners within
/// [`SNAP_TOL`] of the line are classified as on it (and tagged) rather than
/// spawning sliver cells.
fn split_cell(mut cell: Cell, degree: u32, axes: usize, axis: usize, level: i64) -> Vec<Cell> {
    let m = level as f64;
    let s: Vec<f64> = cell
        .points
        .iter()
        .map(|p| axis_values(degree, p.uv)[axis] - m)
        .collect();
    let on: Vec<bool> = s.iter().map(|v| v.abs() < SNAP_TOL).collect();
    for (p, &o) in cell.points.iter_mut().zip(&on) {
        if o {
            p.levels[axis] = Some(level);
            complete_third(p, axes);
        }
    }
    let has_pos = s.iter().zip(&on).any(|(&v, &o)| !o && v > 0.0);
    let has_neg = s.iter().zip(&on).any(|(&v, &o)| !o && v < 0.0);
    if !has_pos || !has_neg {
        return vec![cell];
    }
    let n = cell.points.len();
    let (mut pos, mut neg) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let j = (i + 1) % n;
        let p = &cell.points[i];
        if on[i] {
            pos.push(p.clone());
            neg.push(p.clone());
        } else if s[i] > 0.0 {
            pos.push(p.clone());
        } else {
            neg.push(p.clone());
        }
        if !on[i] && !on[j] && s[i] * s[j] < 0.0 {
            let q = crossing(p, &cell.points[j], s[i], s[j], axis, level, axes);
            pos.push(q.clone());
            neg.push(q);
        }
    }
    [pos, neg]
        .into_iter()
        .filter(|side| side.len() >= 3)
        .map(|points| Cell { points })
        .collect()
}

/// Clip one level line against the parametric triangle; `None` when the line
/// misses it or only touches a corner.
fn clip_level_line(
    corner_uv: &[Vec2; 3],
    corner_xyz: &[Point3<f64>; 3],
    degree: u32,
    axis: usize,
    level: i64,
) -> Option<IsoSegment> {
    let m = level as f64;
    let s = corner_uv.map(|uv| axis_values(degree, uv)[axis] - m);
    let on = s.map(|v| v.abs() < SNAP_TOL);
    let mut pts: Vec<(Vec2, Point3<f64>)> = Vec::new();
    for i in 0..3 {
        if on[i] {
            pts.push((corner_uv[i], corner_xyz[i]));
        }
        let j = (i + 1) % 3;
        if !on[i] && !on[j] && s[i] * s[j] < 0.0 {
            let t = s[i] / (s[i] - s[j]);
            pts.push((
                corner_uv[i] + (corner_uv[j] - corner_uv[i]) * t,
                corner_xyz[i] + (corner_xyz[j] - corner_xyz[i]) * t,
            ));
        }
    }
    // Convexity leaves at most two distinct hits; keep the farthest pair.
    let mut best: Option<(usize, usize, f64)> = None;
    for a in 0..pts.len() {
        for b in a + 1..pts.len() {
            let d = (pts[a].0 - pts[b].0).norm();
            if best.map_or(true, |(_, _, bd)| d > bd) {
                best = Some((a, b, d));
            }
        }
    }
    let (a, b, d) = best?;
    if d < 10.0 * SNAP_TOL {
        return None;
    }
    Some(IsoSegment {
        axis,
        level,
        uv: [pts[a].0, pts[b].0],
        xyz: [pts[a].1, pts[b].1],
    })
}

fn shares_tag(a: &CellPoint, b: &CellPoint, axes: usize) -> bool {
    (0..axes).any(|l| a.levels[l].is_some() && a.levels[l] == b.levels[l])
}

// ---------------------------------------------------------------------------
// Primal assembly
// ---------------------------------------------------------------------------

/// Counters from primal assembly.
#[derive(Debug, Default, Clone)]
pub struct PrimalReport {
    /// Cells whose corners all welded together (slivers thinner than the
    /// weld radius).
    pub collapsed_cells: usize,
    /// Merged cells dropped because fewer than three corners survived
    /// straightening.
    pub dropped_faces: usize,
    /// Quads cut along the Delaunay diagonal.
    pub quads_split: usize,
    /// Five-plus-gons (boundary clips) ear-clipped into triangles.
    pub polygons_split: usize,
}

/// Weld the per-face cells into one polygon mesh: fragments merge across
/// welded edges that lie on no isoline, crossing points with a single tag
/// and straight (on-isoline) surroundings drop out, and for hexagonal grids
/// every remaining polygon is triangulated.
pub fn assemble_primal(arr: &IsolineArrangement) -> Result<(PolyMesh, PrimalReport), ExtractError> {
    let mut report = PrimalReport::default();

    let cells: Vec<&Cell> = arr.faces.iter().flat_map(|fa| fa.cells.iter()).collect();
    let mut occ_pt: Vec<&CellPoint> = Vec::new();
    let mut occ_of_cell: Vec<Vec<usize>> = Vec::with_capacity(cells.len());
    let mut edge_len_sum = 0.0;
    let mut edge_count = 0usize;
    for cell in &cells {
        let n = cell.points.len();
        let ids = (0..n).map(|i| occ_pt.len() + i).collect();
        occ_of_cell.push(ids);
        for (i, p) in cell.points.iter().enumerate() {
            occ_pt.push(p);
            edge_len_sum += (cell.points[(i + 1) % n].xyz - p.xyz).norm();
            edge_count += 1;
        }
    }
    if occ_pt.is_empty() {
        return Ok((PolyMesh::new(Vec::new(), Vec::new())?, report));
    }
    let radius = WELD_FACTOR * edge_len_sum / edge_count as f64;
    let (gid, positions) = weld(&occ_pt, radius);

    // Strongest tag count seen for a welded vertex; charts across a seam
    // permute the families but keep their number.
    let mut tags = vec![0usize; positions.len()];
    for (i, p) in occ_pt.iter().enumerate() {
        tags[gid[i]] = tags[gid[i]].max(p.tag_count(arr.axes));
    }

    // Per cell: the welded loop with one isoline flag per edge, dropping
    // edges the weld collapsed.
    let mut loops: Vec<Option<Vec<(usize, bool)>>> = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        let n = cell.points.len();
        let mut entries: Vec<(usize, bool)> = Vec::with_capacity(n);
        for i in 0..n {
            let g = gid[occ_of_cell[c][i]];
            let flag = shares_tag(&cell.points[i], &cell.points[(i + 1) % n], arr.axes);
            if let Some(last) = entries.last_mut() {
                if last.0 == g {
                    last.1 = flag;
                    continue;
                }
            }
            entries.push((g, flag));
        }
        while entries.len() > 1 && entries.first().map(|e| e.0) == entries.last().map(|e| e.0) {
            entries.pop();
        }
        if entries.len() < 3 {
            report.collapsed_cells += 1;
            loops.push(None);
        } else {
            loops.push(Some(entries));
        }
    }

    // Directed edge registry with the owning cell and loop slot; a duplicate
    // directed edge means two fragments overlap, which no downstream check
    // would survive.
    let mut edges: HashMap<(usize, usize), (usize, usize, bool)> = HashMap::new();
    for (c, entries) in loops.iter().enumerate() {
        let Some(entries) = entries else { continue };
        for i in 0..entries.len() {
            let (a, flag) = entries[i];
            let b = entries[(i + 1) % entries.len()].0;
            if edges.insert((a, b), (c, i, flag)).is_some() {
                return Err(ExtractError::NonManifoldEdge { a, b });
            }
        }
    }
    let mut ekeys: Vec<(usize, usize)> = edges.keys().copied().collect();
    ekeys.sort_unstable();

    // Merge fragments across interior edges that lie on no isoline (input
    // edge crossings and seam fragments; lattice edges stay).
    let merged_flag = |a: usize, b: usize| -> bool {
        edges.get(&(a, b)).is_some_and(|&(.., f)| f)
            || edges.get(&(b, a)).is_some_and(|&(.., f)| f)
    };
    let mut groups = Forest::new(cells.len());
    for &(a, b) in &ekeys {
        if a < b {
            if let (Some(&(c1, ..)), Some(&(c2, ..))) = (edges.get(&(a, b)), edges.get(&(b, a))) {
                if !merged_flag(a, b) {
                    groups.union(c1, c2);
                }
            }
        }
    }
    let cell_root: Vec<usize> = (0..cells.len()).map(|c| groups.find(c)).collect();

    // Group boundary: directed edges whose twin is absent or in another
    // group, bucketed per group with sorted starts for determinism.
    let is_boundary = |a: usize, b: usize| -> bool {
        let g = cell_root[edges[&(a, b)].0];
        !edges
            .get(&(b, a))
            .is_some_and(|&(c2, ..)| cell_root[c2] == g)
    };
    let mut bounds: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(a, b) in &ekeys {
        if is_boundary(a, b) {
            bounds
                .entry(cell_root[edges[&(a, b)].0])
                .or_default()
                .push((a, b));
        }
    }

    let mut polygons: Vec<Vec<usize>> = Vec::new();
    for (_, starts) in bounds {
        // Walk boundary cycles edge to edge: after arriving at a vertex,
        // pivot around it through the merged cells until the next boundary
        // edge out of it. A vertex may legitimately appear twice: an isoline
        // ray ending at a cone point leaves a slit whose two sides bound the
        // same group.
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut cycles: Vec<Vec<usize>> = Vec::new();
        for &start in &starts {
            if seen.contains(&start) {
                continue;
            }
            let mut cycle = Vec::new();
            let mut cur = start;
            for _ in 0..=starts.len() {
                seen.insert(cur);
                cycle.push(cur.0);
                let (mut cell, mut slot, _) = edges[&cur];
                let next = loop {
                    let lp = loops[cell].as_ref().unwrap();
                    let ns = (slot + 1) % lp.len();
                    let e = (lp[ns].0, lp[(ns + 1) % lp.len()].0);
                    if is_boundary(e.0, e.1) {
                        break e;
                    }
                    let (c2, s2, _) = edges[&(e.1, e.0)];
                    cell = c2;
                    slot = s2;
                };
                if next == start {
                    break;
                }
                cur = next;
            }
            cycles.push(cycle);
        }
        if cycles.len() != 1 {
            return Err(ExtractError::NonDiskCell {
                loops: cycles.len(),
            });
        }
        let cycle = cycles.pop().unwrap();
        // Straightening: a corner stays when two traced families meet there
        // or when some incident edge leaves the isolines (a boundary bend).
        // A dropped corner lies on a single isoline with both edges along
        // it, so it is collinear in every chart. Dropping a slit apex leaves
        // its lattice endpoint doubled; the dedup collapses the slit.
        let n = cycle.len();
        let mut kept: Vec<usize> = (0..n)
            .filter(|&i| {
                let inc = merged_flag(cycle[(i + n - 1) % n], cycle[i]);
                let out = merged_flag(cycle[i], cycle[(i + 1) % n]);
                tags[cycle[i]] >= 2 || !inc || !out
            })
            .map(|i| cycle[i])
            .collect();
        kept.dedup();
        while kept.len() > 1 && kept.first() == kept.last() {
            kept.pop();
        }
        if kept.len() < 3 {
            report.dropped_faces += 1;
            continue;
        }
        polygons.push(kept);
    }

    let faces_out: Vec<Vec<usize>> = if arr.degree == 6 {
        let mut tris = Vec::new();
        for poly in polygons {
            match poly.len() {
                3 => tris.push(poly),
                4 => {
                    report.quads_split += 1;
                    split_quad(&positions, &poly, &mut tris);
                }
                _ => {
                    report.polygons_split += 1;
                    ear_clip(&positions, &poly, &mut tris);
                }
            }
        }
        tris
    } else {
        polygons
    };

    // Compact to the referenced vertices.
    let mut remap = vec![usize::MAX; positions.len()];
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(faces_out.len());
    for poly in faces_out {
        faces.push(
            poly.into_iter()
                .map(|v| {
                    if remap[v] == usize::MAX {
                        remap[v] = vertices.len();
                        vertices.push(positions[v]);
                    }
                    remap[v]
                })
                .collect(),
        );
    }
    Ok((PolyMesh::new(vertices, faces)?, report))
}

/// Union-find with path halving.
struct Forest(Vec<usize>);

impl Forest {
    fn new(n: usize) -> Self {
        Forest((0..n).collect())
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.0[a] != a {
            self.0[a] = self.0[self.0[a]];
            a = self.0[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
    }
}

/// Union points closer than `radius` via a uniform spatial hash; returns the
/// welded id per point and one representative position per id, both in
/// first-appearance order.
fn weld(points: &[&CellPoint], radius: f64) -> (Vec<usize>, Vec<Point3<f64>>) {
    let r = radius.max(f64::MIN_POSITIVE);
    let key = |p: &Point3<f64>| {
        [
            (p.x / r).floor() as i64,
            (p.y / r).floor() as i64,
            (p.z / r).floor() as i64,
        ]
    };
    let mut forest = Forest::new(points.len());
    let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let [kx, ky, kz] = key(&p.xyz);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bucket) = buckets.get(&[kx + dx, ky + dy, kz + dz]) {
                        for &j in bucket {
                            if (points[j].xyz - p.xyz).norm() <= r {
                                forest.union(i, j);
                            }
                        }
                    }
                }
            }
        }
        buckets.entry([kx, ky, kz]).or_default().push(i);
    }
    let mut ids = vec![usize::MAX; points.len()];
    let mut positions = Vec::new();
    let mut gid = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let root = forest.find(i);
        if ids[root] == usize::MAX {
            ids[root] = positions.len();
            positions.push(p.xyz);
        }
        gid.push(ids[root]);
    }
    (gid, positions)
}

/// Cut the quad along its Delaunay diagonal: 0-2 unless the corner angles
/// opposite that diagonal sum past pi (the in-circle criterion).
fn split_quad(pts: &[Point3<f64>], q: &[usize], out: &mut Vec<Vec<usize>>) {
    let angle = |i: usize| {
        let a = pts[q[(i + 3) % 4]] - pts[q[i]];
        let b = pts[q[(i + 1) % 4]] - pts[q[i]];
        a.angle(&b)
    };
    if angle(1) + angle(3) <= std::f64::consts::PI {
        out.push(vec![q[0], q[1], q[2]]);
        out.push(vec![q[0], q[2], q[3]]);
    } else {
        out.push(vec![q[1], q[2], q[3]]);
        out.push(vec![q[1], q[3], q[0]]);
    }
}

/// Ear-clip a near-planar polygon (boundary clips can be concave), favoring
/// fat ears; degenerate loops fall back to a fan.
fn ear_clip(pts: &[Point3<f64>], poly: &[usize], out: &mut Vec<Vec<usize>>) {
    let mut normal = Vector3::zeros();
    for i in 0..poly.len() {
        normal += pts[poly[i]]
            .coords
            .cross(&pts[poly[(i + 1) % poly.len()]].coords);
    }
    let mut rest: Vec<usize> = poly.to_vec();
    while rest.len() > 3 {
        let m = rest.len();
        let mut best: Option<(usize, f64)> = None;
        'ears: for i in 0..m {
            let (a, b, c) = (rest[(i + m - 1) % m], rest[i], rest[(i + 1) % m]);
            let u = pts[b] - pts[a];
            let v = pts[c] - pts[b];
            if u.cross(&v).dot(&normal) <= 0.0 {
                continue;
            }
            for &w in &rest {
                if w != a && w != b && w != c && inside_triangle(pts, a, b, c, w, normal) {
                    continue 'ears;
                }
            }
            let qa = (pts[b] - pts[a]).angle(&(pts[c] - pts[a]));
            let qb = (pts[a] - pts[b]).angle(&(pts[c] - pts[b]));
            let quality = qa.min(qb).min(std::f64::consts::PI - qa - qb);
            if best.map_or(true, |(_, q)| quality > q) {
                best = Some((i, quality));
            }
        }
        let Some((i, _)) = best else {
            for k in 1..rest.len() - 1 {
                out.push(vec![rest[0], rest[k], rest[k + 1]]);
            }
            return;
        };
        out.push(vec![rest[(i + m - 1) % m], rest[i], rest[(i + 1) % m]]);
        rest.remove(i);
    }
    out.push(rest);
}

fn inside_triangle(
    pts: &[Point3<f64>],
    a: usize,
    b: usize,
    c: usize,
    w: usize,
    normal: Vector3<f64>,
) -> bool {
    let s1 = (pts[b] - pts[a]).cross(&(pts[w] - pts[a])).dot(&normal);
    let s2 = (pts[c] - pts[b]).cross(&(pts[w] - pts[b])).dot(&normal);
    let s3 = (pts[a] - pts[c]).cross(&(pts[w] - pts[c])).dot(&normal);
    s1 >= 0.0 && s2 >= 0.0 && s3 >= 0.0
}

// ---------------------------------------------------------------------------
// Barycentric dual
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DualReport {
    /// Primal faces kept after trimming the boundary strip.
    pub interior_faces: usize,
    /// Dual faces before their own strip removal; one per interior primal
    /// vertex.
    pub raw_dual_faces: usize,
    /// Dual faces shipped after the second strip removal.
    pub dual_faces: usize,
    /// Dual faces that are not star-shaped around their primal vertex
    /// (reported, not repaired).
    pub non_star_faces: usize,
}

/// Strip the primal faces touching the boundary, place one dual vertex per
/// remaining face at its barycenter and one dual face per interior vertex,
/// then strip the dual faces touching the new boundary.
pub fn barycentric_dual(primal: &PolyMesh) -> Result<(PolyMesh, DualReport), ExtractError> {
    let adj = primal.adjacency()?;
    let keep: Vec<bool> = primal
        .faces
        .iter()
        .map(|cycle| cycle.iter().all(|&v| !adj.boundary_vertex[v]))
        .collect();
    let trimmed = submesh(primal, &keep)?;
    let tadj = trimmed.adjacency()?;

    let dual_vertices: Vec<Point3<f64>> = (0..trimmed.n_faces())
        .map(|f| trimmed.face_barycenter(f))
        .collect();
    let mut dual_faces = Vec::new();
    let mut non_star = 0usize;
    for v in 0..trimmed.n_vertices() {
        if tadj.boundary_vertex[v] {
            continue;
        }
        let fan = tadj
            .fan_ccw(&trimmed, v)
            .ok_or(ExtractError::InconsistentFan { vertex: v })?;
        if !star_shaped(&dual_vertices, &fan, trimmed.vertices[v]) {
            non_star += 1;
        }
        dual_faces.push(fan);
    }
    let raw_dual_faces = dual_faces.len();
    let raw = PolyMesh::new(dual_vertices, dual_faces)?;
    let dadj = raw.adjacency()?;
    let dkeep: Vec<bool> = raw
        .faces
        .iter()
        .map(|cycle| cycle.iter().all(|&v| !dadj.boundary_vertex[v]))
        .collect();
    let dual = submesh(&raw, &dkeep)?;
    let dual_faces = dual.n_faces();
    Ok((
        dual,
        DualReport {
            interior_faces: trimmed.n_faces(),
            raw_dual_faces,
            dual_faces,
            non_star_faces: non_star,
        },
    ))
}

/// Keep the flagged faces, dropping unreferenced vertices.
fn submesh(mesh: &PolyMesh, keep: &[bool]) -> Result<PolyMesh, ExtractError> {
    let mut remap = vec![usize::MAX; mesh.n_vertices()];
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (f, cycle) in mesh.faces.iter().enumerate() {
        if !keep[f] {
            continue;
        }
        faces.push(
            cycle
                .iter()
                .map(|&v| {
                    if remap[v] == usize::MAX {
                        remap[v] = vertices.len();
                        vertices.push(mesh.vertices[v]);
                    }
                    remap[v]
                })
                .collect(),
        );
    }
    if faces.is_empty() {
        return Err(ExtractError::TrimmedAway);
    }
    Ok(PolyMesh::new(vertices, faces)?)
}

fn star_shaped(pts: &[Point3<f64>], cycle: &[usize], center: Point3<f64>) -> bool {
    let mut normal = Vector3::zeros();
    for i in 0..cycle.len() {
        normal += pts[cycle[i]]
            .coords
            .cross(&pts[cycle[(i + 1) % cycle.len()]].coords);
    }
    (0..cycle.len()).all(|i| {
        let a = pts[cycle[i]] - center;
        let b = pts[cycle[(i + 1) % cycle.len()]] - center;
        a.cross(&b).dot(&normal) > 0.0
    })
}
