//! Smooth 2-RoSy guiding field aligned to curvature.
//!
//! A degree-2 rotationally symmetric direction per face is encoded as the
//! complex square of its direction in the face chart, so the sign ambiguity
//! of a line field disappears. Smoothness is the quadratic transport energy
//! `Σ_edges |G_i e^{-i2α_i} − G_j e^{-i2α_j}|²` (α = chart angle of the
//! shared edge), whose matrix Δ₂ is PSD and annihilates parallel fields on
//! flat meshes.
//!
//! The field minimizes `(1/λ) GᵀΔ₂G + β (EΨ2 + EΨ4)` where λ is the first
//! nonzero eigenvalue of Δ₂, EΨ2 pins parabolic faces to the square of the
//! minimal-absolute-curvature direction (weight ρ² per face), and EΨ4 pins
//! elliptic and hyperbolic faces to the fourth power of a principal
//! direction (either one: their fourth powers agree). The quartic terms make
//! the problem nonconvex, so it is seeded with the solution of the convex
//! linear-constraints-only problem. Degenerate constraint sets fall back to
//! simpler problems: no constraints at all yields the lowest eigenvector of
//! Δ₂, only-quartic constraint sets are re-posed as 2-RoSy constraints on
//! the minimum-curvature direction.

use crate::curvature::{CurvatureData, Region};
use crate::geom::{complex_pow, complex_pow_jacobian, rotation, Mat2, Vec2};
use crate::mesh::TriangleSurface;
use crate::nlls::sparse::{LdlSymbolic, SymCscUpper};
use crate::nlls::{self, ResidualBlock, ResidualSystem, SolverConfig};
use rand::{Rng, SeedableRng};
use thiserror::Error;

/// Penalty weight for the alignment constraints.
pub const BETA: f64 = 1e5;
/// Relative convergence tolerance of the eigenvalue iteration.
const EIGEN_TOL: f64 = 1e-8;
const EIGEN_MAX_ITERATIONS: usize = 2000;
/// Eigenvalues below this times the mean diagonal count as zero.
const KERNEL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GuidingError {
    #[error("eigenvalue iteration failed: {0}")]
    EigenSolve(&'static str),
    #[error("solver: {0}")]
    Solver(#[from] nlls::SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// No constrained faces: lowest eigenvector of the transport energy.
    Unconstrained,
    /// Only linear constraints: single convex solve.
    LinearOnly,
    /// Only quartic constraints, re-posed linearly on d_min.
    QuarticAsLinear,
    /// Mixed constraints: convex initialization, then penalty optimization.
    Penalty,
}

/// One face's alignment requirement. `dir` is a unit direction in the face
/// chart; linear constraints pin `G = dir²`, quartic ones pin `G² = dir⁴`.
#[derive(Debug, Clone, Copy)]
pub struct GuidingConstraint {
    pub face: usize,
    pub dir: Vec2,
    /// Residual multiplier (the per-face ρ); squared in the energy.
    pub weight: f64,
    pub quartic: bool,
}

#[derive(Debug, Clone)]
pub struct RoSyField {
    pub degree: u32,
    /// Per-face complex value; (direction)^degree times a magnitude.
    pub values: Vec<Vec2>,
    pub strategy: Strategy,
    /// First nonzero eigenvalue of the transport matrix (1 when untouched).
    pub lambda: f64,
}

impl RoSyField {
    /// Unit direction per face: the principal complex root of the value.
    /// The principal branch keeps the first coordinate nonnegative, with
    /// ties resolved toward positive second coordinate.
    pub fn directions(&self) -> Vec<Vec2> {
        self.values.iter().map(|&v| principal_root(v, self.degree)).collect()
    }
}

/// Principal n-th root of a nonzero complex vector, unit length.
pub fn principal_root(v: Vec2, n: u32) -> Vec2 {
    let angle = v.y.atan2(v.x) / n as f64;
    Vec2::new(angle.cos(), angle.sin())
}

/// Transport matrix of degree-`degree` fields in the real `2|F|`
/// representation: `xᵀ Δ x = Σ_edges |G_i e^{-i·d·α_i} − G_j e^{-i·d·α_j}|²`.
pub fn build_rosy_laplacian(mesh: &TriangleSurface, degree: u32) -> SymCscUpper {
    let nf = mesh.n_faces();
    let mut pairs = Vec::with_capacity(4 * mesh.interior_edges.len());
    for e in &mesh.interior_edges {
        let (i, j) = (e.face_i, e.face_j);
        pairs.push((2 * i, 2 * j));
        pairs.push((2 * i, 2 * j + 1));
        pairs.push((2 * i + 1, 2 * j));
        pairs.push((2 * i + 1, 2 * j + 1));
    }
    let mut lap = SymCscUpper::from_pairs(2 * nf, pairs);
    for e in &mesh.interior_edges {
        let (i, j) = (e.face_i, e.face_j);
        let alpha_i = e.e_i.y.atan2(e.e_i.x);
        let alpha_j = e.e_j.y.atan2(e.e_j.x);
        let delta = degree as f64 * (alpha_j - alpha_i);
        // Coefficient of conj(G_i) G_j in the energy expansion: −e^{−iδ}.
        let (a, b) = (-delta.cos(), delta.sin());
        for (r, c, v) in [
            (2 * i, 2 * j, a),
            (2 * i, 2 * j + 1, -b),
            (2 * i + 1, 2 * j, b),
            (2 * i + 1, 2 * j + 1, a),
            (2 * i, 2 * i, 1.0),
            (2 * i + 1, 2 * i + 1, 1.0),
            (2 * j, 2 * j, 1.0),
            (2 * j + 1, 2 * j + 1, 1.0),
        ] {
            let slot = lap.slot(r.min(c), r.max(c));
            lap.values[slot] += v;
        }
    }
    lap
}

fn mean_diagonal(m: &SymCscUpper) -> f64 {
    let slots = m.diagonal_slots();
    slots.iter().map(|&s| m.values[s]).sum::<f64>() / m.n as f64
}

/// Smallest eigenpairs by shifted inverse-power iteration with deflation.
/// Returns up to `count` (eigenvalue, eigenvector) pairs in ascending order.
fn smallest_eigenpairs(
    m: &SymCscUpper,
    count: usize,
) -> Result<Vec<(f64, Vec<f64>)>, GuidingError> {
    let n = m.n;
    let scale = mean_diagonal(m).max(1e-300);
    let sigma = 1e-8 * scale;
    let mut shifted = m.clone();
    for slot in shifted.diagonal_slots() {
        shifted.values[slot] += sigma;
    }
    let mut symbolic = LdlSymbolic::analyze(&shifted);
    let factor = symbolic
        .factor(&shifted)
        .map_err(|_| GuidingError::EigenSolve("shifted matrix is not positive definite"))?;

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut found: Vec<(f64, Vec<f64>)> = Vec::new();
    let mut work = vec![0.0f64; n];
    for _ in 0..count {
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut rayleigh = f64::INFINITY;
        let mut converged = false;
        for _ in 0..EIGEN_MAX_ITERATIONS {
            // Deflate, solve, normalize.
            for (_, u) in &found {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
            factor.solve_in_place(&mut v);
            for (_, u) in &found {
                let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= dot * ui;
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(GuidingError::EigenSolve("iteration vector collapsed"));
            }
            for x in &mut v {
                *x /= norm;
            }
            m.mul_vec(&v, &mut work);
            let rho: f64 = v.iter().zip(&work).map(|(a, b)| a * b).sum();
            let change = (rho - rayleigh).abs();
            rayleigh = rho;
            if change <= EIGEN_TOL * rayleigh.abs().max(sigma) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(GuidingError::EigenSolve("no convergence"));
        }
        found.push((rayleigh, v));
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(found)
}

/// First nonzero eigenvalue of a PSD matrix whose kernel has dimension ≤ 3.
pub fn first_nonzero_eigenvalue(m: &SymCscUpper) -> Result<f64, GuidingError> {
    let scale = mean_diagonal(m).max(1e-300);
    let pairs = smallest_eigenpairs(m, 4)?;
    pairs
        .iter()
        .map(|(lam, _)| *lam)
        .find(|&lam| lam > KERNEL_TOL * scale)
        .ok_or(GuidingError::EigenSolve("kernel exhausted the probe budget"))
}

struct SmoothEdge {
    vars: [usize; 4],
    rot_i: Mat2,
    rot_j: Mat2,
    weight: f64,
}

impl ResidualBlock for SmoothEdge {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        2
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let gi = Vec2::new(v[0], v[1]);
        let gj = Vec2::new(v[2], v[3]);
        let r = self.rot_i * gi - self.rot_j * gj;
        residual[0] = r.x;
        residual[1] = r.y;
        if let Some(jac) = jacobian {
            for row in 0..2 {
                for col in 0..2 {
                    jac[row * 4 + col] = self.rot_i[(row, col)];
                    jac[row * 4 + 2 + col] = -self.rot_j[(row, col)];
                }
            }
        }
    }
}

struct PinValue {
    vars: [usize; 2],
    target: Vec2,
    weight: f64,
}

impl ResidualBlock for PinValue {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        2
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        residual[0] = v[0] - self.target.x;
        residual[1] = v[1] - self.target.y;
        if let Some(jac) = jacobian {
            jac.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
    }
}

struct PinSquare {
    vars: [usize; 2],
    target: Vec2,
    weight: f64,
}

impl ResidualBlock for PinSquare {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        2
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let g = Vec2::new(v[0], v[1]);
        let sq = complex_pow(g, 2);
        residual[0] = sq.x - self.target.x;
        residual[1] = sq.y - self.target.y;
        if let Some(jac) = jacobian {
            let d = complex_pow_jacobian(g, 2);
            jac.copy_from_slice(&[d[(0, 0)], d[(0, 1)], d[(1, 0)], d[(1, 1)]]);
        }
    }
}

fn smoothness_blocks(mesh: &TriangleSurface, lambda: f64) -> Vec<SmoothEdge> {
    let w = (1.0 / lambda).sqrt();
    mesh.interior_edges
        .iter()
        .map(|e| {
            let alpha_i = e.e_i.y.atan2(e.e_i.x);
            let alpha_j = e.e_j.y.atan2(e.e_j.x);
            SmoothEdge {
                vars: [2 * e.face_i, 2 * e.face_i + 1, 2 * e.face_j, 2 * e.face_j + 1],
                rot_i: rotation(-2.0 * alpha_i),
                rot_j: rotation(-2.0 * alpha_j),
                weight: w,
            }
        })
        .collect()
}

/// Alignment penalty `β Σ ρ² |G − d²|²` over the linear constraints at `x`.
pub fn linear_penalty_energy(constraints: &[GuidingConstraint], x: &[f64]) -> f64 {
    constraints
        .iter()
        .filter(|c| !c.quartic)
        .map(|c| {
            let g = Vec2::new(x[2 * c.face], x[2 * c.face + 1]);
            let d2 = complex_pow(c.dir, 2);
            BETA * c.weight * c.weight * (g - d2).norm_squared()
        })
        .sum()
}

/// Solve the guiding-field problem for an explicit constraint set.
pub fn solve_with_constraints(
    mesh: &TriangleSurface,
    constraints: &[GuidingConstraint],
) -> Result<RoSyField, GuidingError> {
    let nf = mesh.n_faces();
    let lap = build_rosy_laplacian(mesh, 2);
    let has_linear = constraints.iter().any(|c| !c.quartic);
    let has_quartic = constraints.iter().any(|c| c.quartic);

    let strategy = match (has_linear, has_quartic) {
        (false, false) => Strategy::Unconstrained,
        (true, false) => Strategy::LinearOnly,
        (false, true) => Strategy::QuarticAsLinear,
        (true, true) => Strategy::Penalty,
    };

    if strategy == Strategy::Unconstrained {
        let pairs = smallest_eigenpairs(&lap, 1)?;
        let (_, v) = &pairs[0];
        // Scale so a typical face magnitude is O(1).
        let s = (nf as f64).sqrt();
        let values = (0..nf)
            .map(|f| Vec2::new(v[2 * f] * s, v[2 * f + 1] * s))
            .collect();
        return Ok(RoSyField {
            degree: 2,
            values,
            strategy,
            lambda: 1.0,
        });
    }

    let lambda = first_nonzero_eigenvalue(&lap)?;
    let sqrt_beta = BETA.sqrt();

    let linearized: Vec<GuidingConstraint> = match strategy {
        // Quartic-only sets are re-posed as 2-RoSy constraints.
        Strategy::QuarticAsLinear => constraints
            .iter()
            .map(|c| GuidingConstraint {
                quartic: false,
                ..*c
            })
            .collect(),
        _ => constraints.iter().filter(|c| !c.quartic).copied().collect(),
    };

    // Convex problem: smoothness + linear pins only.
    let mut convex = ResidualSystem::new(2 * nf);
    for block in smoothness_blocks(mesh, lambda) {
        convex.add_block(block);
    }
    for c in &linearized {
        convex.add_block(PinValue {
            vars: [2 * c.face, 2 * c.face + 1],
            target: complex_pow(c.dir, 2),
            weight: sqrt_beta * c.weight,
        });
    }
    let config = SolverConfig::default();
    let (init, _) = nlls::solve(&convex, &vec![0.0; 2 * nf], &config)?;

    let values_of = |x: &[f64]| {
        (0..nf)
            .map(|f| Vec2::new(x[2 * f], x[2 * f + 1]))
            .collect::<Vec<_>>()
    };

    if strategy != Strategy::Penalty {
        return Ok(RoSyField {
            degree: 2,
            values: values_of(&init),
            strategy,
            lambda,
        });
    }

    let mut full = ResidualSystem::new(2 * nf);
    for block in smoothness_blocks(mesh, lambda) {
        full.add_block(block);
    }
    for c in constraints {
        let vars = [2 * c.face, 2 * c.face + 1];
        if c.quartic {
            full.add_block(PinSquare {
                vars,
                target: complex_pow(c.dir, 4),
                weight: sqrt_beta * c.weight,
            });
        } else {
            full.add_block(PinValue {
                vars,
                target: complex_pow(c.dir, 2),
                weight: sqrt_beta * c.weight,
            });
        }
    }
    let (x, _) = nlls::solve(&full, &init, &config)?;
    Ok(RoSyField {
        degree: 2,
        values: values_of(&x),
        strategy,
        lambda,
    })
}

/// Constraint set implied by curvature regions: parabolic faces pin the
/// minimal-absolute-curvature direction (2-RoSy), elliptic and hyperbolic
/// faces pin the principal cross (4-RoSy). Planar, umbilic, and boundary
/// faces float.
pub fn region_constraints(curv: &CurvatureData) -> Vec<GuidingConstraint> {
    let mut constraints = Vec::new();
    for f in 0..curv.region.len() {
        match curv.region[f] {
            Region::Parabolic => constraints.push(GuidingConstraint {
                face: f,
                dir: curv.d_abs_min[f],
                weight: curv.rho[f],
                quartic: false,
            }),
            Region::Elliptic | Region::Hyperbolic => constraints.push(GuidingConstraint {
                face: f,
                dir: curv.d_min[f],
                weight: curv.rho[f],
                quartic: true,
            }),
            _ => {}
        }
    }
    constraints
}

pub fn solve_guiding_field(
    mesh: &TriangleSurface,
    curv: &CurvatureData,
) -> Result<RoSyField, GuidingError> {
    solve_with_constraints(mesh, &region_constraints(curv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::analyze_curvature;
    use crate::mesh::shapes;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};

    /// Chart representation of the global +x direction, squared.
    fn x_squared_in_chart(mesh: &TriangleSurface, f: usize) -> Vec2 {
        let d = mesh.local_basis[f].transpose() * Vector3::new(1.0, 0.0, 0.0);
        complex_pow(d.normalize(), 2)
    }

    #[test]
    fn laplacian_annihilates_parallel_fields_on_flat_meshes() {
        let m = shapes::disk(1.0, 2, 12);
        let lap = build_rosy_laplacian(&m, 2);
        let mut x = vec![0.0; 2 * m.n_faces()];
        for f in 0..m.n_faces() {
            let g = x_squared_in_chart(&m, f);
            x[2 * f] = g.x;
            x[2 * f + 1] = g.y;
        }
        let mut y = vec![0.0; x.len()];
        lap.mul_vec(&x, &mut y);
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "residual {norm}");
    }

    #[test]
    fn laplacian_is_positive_semidefinite() {
        let m = shapes::icosphere(1, 1.0);
        let lap = build_rosy_laplacian(&m, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut y = vec![0.0; lap.n];
        for _ in 0..30 {
            let x: Vec<f64> = (0..lap.n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            lap.mul_vec(&x, &mut y);
            let quad: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            let norm: f64 = x.iter().map(|v| v * v).sum();
            assert!(quad >= -1e-10 * norm);
        }
    }

    #[test]
    fn two_triangle_laplacian_matches_hand_transport() {
        // Unit square split along the diagonal from (1,1) to (0,0).
        // Face 0 = [0,1,2] has chart x-axis along +x, so the shared edge
        // (2 -> 0, direction (-1,-1)/√2) sits at angle -3π/4. Face 1 =
        // [0,2,3] has chart x-axis along (1,1)/√2, so the same edge sits at
        // angle π. The degree-2 transport coefficient is then
        // -e^{-i2(π+3π/4)} = -e^{-i3π/2} = -i.
        let m = TriangleSurface::from_parts(
            vec![
                nalgebra::Point3::new(0.0, 0.0, 0.0),
                nalgebra::Point3::new(1.0, 0.0, 0.0),
                nalgebra::Point3::new(1.0, 1.0, 0.0),
                nalgebra::Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            None,
        )
        .unwrap();
        let dense = build_rosy_laplacian(&m, 2).to_dense();
        let expected = nalgebra::DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, 0.0, 0.0, 1.0, //
                0.0, 1.0, -1.0, 0.0, //
                0.0, -1.0, 1.0, 0.0, //
                1.0, 0.0, 0.0, 1.0,
            ],
        );
        assert!((dense - expected).abs().max() < 1e-12);
    }

    #[test]
    fn first_nonzero_eigenvalue_matches_dense_oracle() {
        // Flat disk: two exact kernel vectors (parallel fields) must be
        // skipped by the deflation.
        let m = shapes::disk(1.0, 2, 10);
        let lap = build_rosy_laplacian(&m, 2);
        let lambda = first_nonzero_eigenvalue(&lap).unwrap();
        let dense = lap.to_dense();
        let eig = dense.symmetric_eigen();
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        assert!(values[0].abs() < 1e-10 && values[1].abs() < 1e-10);
        assert_relative_eq!(lambda, values[2], max_relative = 1e-6);
    }

    #[test]
    fn sphere_without_constraints_takes_the_eigenvector_path() {
        let base = shapes::icosphere(2, 1.0);
        let normals = base.vertices.iter().map(|p| p.coords).collect();
        let m = TriangleSurface::from_parts(
            base.vertices.clone(),
            base.faces.clone(),
            Some(normals),
        )
        .unwrap();
        let curv = analyze_curvature(&m);
        assert!(curv.region.iter().all(|&r| r == Region::Umbilic));
        let field = solve_guiding_field(&m, &curv).unwrap();
        assert_eq!(field.strategy, Strategy::Unconstrained);
        for v in &field.values {
            assert!(v.norm() > 1e-12, "field vanished on a face");
        }
    }

    #[test]
    fn cylinder_field_follows_the_axis_in_parabolic_faces() {
        let m = shapes::cylinder(1.0, 4.0, 32, 16);
        let curv = analyze_curvature(&m);
        let field = solve_guiding_field(&m, &curv).unwrap();
        assert_eq!(field.strategy, Strategy::LinearOnly);
        let dirs = field.directions();
        let axis = Vector3::new(0.0, 0.0, 1.0);
        for f in 0..m.n_faces() {
            if curv.region[f] != Region::Parabolic {
                continue;
            }
            let d3 = (m.local_basis[f] * dirs[f]).normalize();
            let angle = d3.dot(&axis).abs().min(1.0).acos();
            assert!(
                angle < 1f64.to_radians(),
                "face {f}: {} degrees off axis",
                angle.to_degrees()
            );
        }
    }

    #[test]
    fn two_pinned_faces_extend_to_a_constant_field() {
        let m = shapes::annulus(0.5, 1.0, 2, 12);
        let constraints: Vec<GuidingConstraint> = [0usize, 17]
            .iter()
            .map(|&f| GuidingConstraint {
                face: f,
                dir: (m.local_basis[f].transpose() * Vector3::new(1.0, 0.0, 0.0)).normalize(),
                weight: 1.0,
                quartic: false,
            })
            .collect();
        let field = solve_with_constraints(&m, &constraints).unwrap();
        assert_eq!(field.strategy, Strategy::LinearOnly);
        // Constant (parallel) field: zero transport energy, constraints met.
        let lap = build_rosy_laplacian(&m, 2);
        let mut x = vec![0.0; 2 * m.n_faces()];
        for f in 0..m.n_faces() {
            x[2 * f] = field.values[f].x;
            x[2 * f + 1] = field.values[f].y;
        }
        let mut y = vec![0.0; x.len()];
        lap.mul_vec(&x, &mut y);
        let energy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        assert!(energy < 1e-12, "transport energy {energy}");
        for f in 0..m.n_faces() {
            assert_relative_eq!(
                field.values[f],
                x_squared_in_chart(&m, f),
                epsilon = 1e-7
            );
        }
    }

    #[test]
    fn quartic_only_sets_are_reposed_linearly() {
        let m = shapes::annulus(0.5, 1.0, 2, 12);
        let constraints = vec![GuidingConstraint {
            face: 3,
            dir: Vec2::new(1.0, 0.0),
            weight: 0.8,
            quartic: true,
        }];
        let field = solve_with_constraints(&m, &constraints).unwrap();
        assert_eq!(field.strategy, Strategy::QuarticAsLinear);
        assert!(field.values.iter().all(|v| v.norm() > 1e-12));
    }

    #[test]
    fn penalty_solve_does_not_worsen_linear_alignment() {
        // A torus sector mixes all constraint kinds: elliptic outside,
        // hyperbolic inside, and parabolic bands where the profile
        // curvature crosses zero.
        let m = shapes::torus_sector(2.0, 1.0, std::f64::consts::PI, 24, 24);
        let curv = analyze_curvature(&m);
        let constraints = region_constraints(&curv);
        assert!(constraints.iter().any(|c| c.quartic));
        assert!(constraints.iter().any(|c| !c.quartic));
        let field = solve_with_constraints(&m, &constraints).unwrap();
        assert_eq!(field.strategy, Strategy::Penalty);

        // Recompute the convex initialization for comparison.
        let lap = build_rosy_laplacian(&m, 2);
        let lambda = first_nonzero_eigenvalue(&lap).unwrap();
        let mut convex = ResidualSystem::new(2 * m.n_faces());
        for block in smoothness_blocks(&m, lambda) {
            convex.add_block(block);
        }
        for c in constraints.iter().filter(|c| !c.quartic) {
            convex.add_block(PinValue {
                vars: [2 * c.face, 2 * c.face + 1],
                target: complex_pow(c.dir, 2),
                weight: BETA.sqrt() * c.weight,
            });
        }
        let (init, _) =
            nlls::solve(&convex, &vec![0.0; 2 * m.n_faces()], &SolverConfig::default()).unwrap();
        let mut x = vec![0.0; 2 * m.n_faces()];
        for f in 0..m.n_faces() {
            x[2 * f] = field.values[f].x;
            x[2 * f + 1] = field.values[f].y;
        }
        let e_final = linear_penalty_energy(&constraints, &x);
        let e_init = linear_penalty_energy(&constraints, &init);
        assert!(
            e_final <= e_init + 1e-9,
            "linear alignment worsened: {e_init} -> {e_final}"
        );
    }

    #[test]
    fn recovered_directions_are_chart_independent() {
        // The same geometry with cyclically permuted face corners has
        // different per-face charts; recovered 3D lines must agree.
        let a = shapes::hypar(8, 1.0, 1.5);
        let permuted: Vec<[usize; 3]> = a.faces.iter().map(|t| [t[1], t[2], t[0]]).collect();
        let b = TriangleSurface::from_parts(a.vertices.clone(), permuted, None).unwrap();
        let fa = solve_guiding_field(&a, &analyze_curvature(&a)).unwrap();
        let fb = solve_guiding_field(&b, &analyze_curvature(&b)).unwrap();
        let (da, db) = (fa.directions(), fb.directions());
        for f in 0..a.n_faces() {
            let va = (a.local_basis[f] * da[f]).normalize();
            let vb = (b.local_basis[f] * db[f]).normalize();
            let aligned = va.dot(&vb).abs();
            assert!(1.0 - aligned <= 1e-8, "face {f}: |cos| = {aligned}");
        }
    }
}
