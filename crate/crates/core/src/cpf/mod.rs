//! Coordinate power fields: per-face tangent pairs (U, V) whose pulled-back
//! edges agree across faces after taking the N-th complex power.
//!
//! A pair (U, V) encodes the differential of a local parameterization,
//! dr = [U V]; the pullback of a shared edge into each face's parameter
//! domain must match up to a rotation by 2πk/N for a seamless N-symmetric
//! grid to exist. That continuity requirement is relaxed through per-edge
//! consensus auxiliaries and a penalty weight β that doubles until the
//! downstream integration accepts the field.

mod energy;

pub use energy::{
    assemble_system, balancing_lambda, barrier, squared_length_scale, term_energy,
    variable_count, Term, ALL_TERMS, BARRIER_CAP,
};

use crate::curvature::{CurvatureData, DupinMetric, Region};
use crate::geom::{complex_pow, rot90, Mat2, Vec2};
use crate::guiding::{principal_root, RoSyField};
use crate::mesh::TriangleSurface;
use crate::nlls::{self, SolveReport, SolverConfig};
use std::cell::RefCell;
use std::rc::Rc;
use thiserror::Error;

/// Orientation slack in balanced units: the barrier argument is s/λ² − ε.
pub const EPS_LICO: f64 = 1e-3;
/// Fraction of the previous orientation value used as the barrier threshold.
pub const BARRIER_SHRINK: f64 = 0.1;
/// Continuity mismatch below which a round counts as converged, measured in
/// N-th powers of the mean squared parameter edge length. That scale sits a
/// factor of ~λᴺ above the N-th-power magnitude itself, so the gate demands
/// a relative mismatch far smaller than what integer seam rounding needs.
pub const CONTINUITY_TOL: f64 = 1e-6;
/// Penalty rounds: β = 2^k for k in 0..MAX_ROUNDS.
pub const MAX_ROUNDS: u32 = 10;

#[derive(Debug, Error)]
pub enum CpfError {
    #[error("fields are not consistently oriented at face {face} (s = {s:e})")]
    LicoViolation { face: usize, s: f64 },
    #[error("pullback undefined: orientation s = {s:e} is not positive")]
    PullbackNotInvertible { s: f64 },
    #[error(
        "continuity optimization did not converge in {rounds} rounds \
         (best balanced mismatch {best:e})"
    )]
    DidNotConverge { rounds: u32, best: f64 },
    #[error("solver: {0}")]
    Solver(#[from] nlls::SolverError),
}

/// One face's alignment constraint: some pushed-forward grid direction of
/// the sub-symmetry `sub_degree` must be parallel to `dir`.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentData {
    /// Unit direction in the face chart.
    pub dir: Vec2,
    /// Even divisor of the field degree.
    pub sub_degree: u32,
    /// Residual multiplier (curvature-confidence polynomial in ρ).
    pub weight: f64,
}

/// Everything the objective needs besides the mesh: the symmetry degree and
/// the per-face constraint data. Flat lists hold only constrained faces.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub degree: u32,
    /// (face, data) pairs; at most one per face.
    pub alignment: Vec<(usize, AlignmentData)>,
    /// SPD sizing metric per face (identity when sizing is not constrained).
    pub sizing: Vec<Mat2>,
    /// (face, inner matrix) orthogonality terms; a face may appear several
    /// times (e.g. once with the shape operator, once with the identity).
    pub ortho: Vec<(usize, Mat2)>,
}

impl ConstraintSet {
    fn validate(&self, mesh: &TriangleSurface) {
        assert_eq!(self.sizing.len(), mesh.n_faces());
        for g in &self.sizing {
            assert!(
                g.determinant() > 0.0 && g[(0, 0)] > 0.0,
                "sizing metrics are positive definite"
            );
        }
        for &(f, AlignmentData { dir, sub_degree, .. }) in &self.alignment {
            assert!(f < mesh.n_faces());
            assert!(
                sub_degree >= 2 && sub_degree % 2 == 0 && self.degree % sub_degree == 0,
                "alignment sub-degree {sub_degree} must be an even divisor of {}",
                self.degree
            );
            assert!((dir.norm() - 1.0).abs() < 1e-8, "alignment directions are unit");
        }
        for &(f, m) in &self.ortho {
            assert!(f < mesh.n_faces());
            assert!((m - m.transpose()).norm() < 1e-12, "ortho inner matrices are symmetric");
        }
    }
}

/// The optimization state: per-face field pairs plus per-edge consensus
/// auxiliaries for the continuity and smoothness energies.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub degree: u32,
    pub u: Vec<Vec2>,
    pub v: Vec<Vec2>,
    /// Consensus N-th power of the pulled-back edge, per interior edge.
    pub z: Vec<Vec2>,
    /// Consensus for the 90°-rotated (smoothness) pullbacks.
    pub z_smooth: Vec<Vec2>,
}

impl FieldPair {
    /// Orientation s = det[U V] of one face.
    pub fn orientation(&self, f: usize) -> f64 {
        let (u, v) = (self.u[f], self.v[f]);
        u.x * v.y - u.y * v.x
    }

    /// Errors on the first face with non-positive orientation.
    pub fn check_lico(&self) -> Result<(), CpfError> {
        for f in 0..self.u.len() {
            let s = self.orientation(f);
            if !(s > 0.0) {
                return Err(CpfError::LicoViolation { face: f, s });
            }
        }
        Ok(())
    }

    /// dr⁻¹ of one face; errors if the pair is not positively oriented.
    pub fn pullback(&self, f: usize) -> Result<Mat2, CpfError> {
        pullback_map(self.u[f], self.v[f])
    }

    pub fn to_x(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(4 * self.u.len() + 4 * self.z.len());
        for f in 0..self.u.len() {
            x.extend_from_slice(&[self.u[f].x, self.u[f].y, self.v[f].x, self.v[f].y]);
        }
        for z in self.z.iter().chain(&self.z_smooth) {
            x.extend_from_slice(&[z.x, z.y]);
        }
        x
    }

    pub fn from_x(degree: u32, n_faces: usize, n_edges: usize, x: &[f64]) -> Self {
        assert_eq!(x.len(), 4 * n_faces + 4 * n_edges);
        let grab = |base: usize, k: usize| Vec2::new(x[base + 2 * k], x[base + 2 * k + 1]);
        FieldPair {
            degree,
            u: (0..n_faces).map(|f| grab(0, 2 * f)).collect(),
            v: (0..n_faces).map(|f| grab(0, 2 * f + 1)).collect(),
            z: (0..n_edges).map(|e| grab(4 * n_faces, e)).collect(),
            z_smooth: (0..n_edges).map(|e| grab(4 * n_faces + 2 * n_edges, e)).collect(),
        }
    }
}

/// Inverse differential dr⁻¹ = [U V]⁻¹ = (1/s)[[V₂, −V₁], [−U₂, U₁]].
/// Its rows are the parameter gradients ∇u and ∇v in the face chart.
pub fn pullback_map(u: Vec2, v: Vec2) -> Result<Mat2, CpfError> {
    let s = u.x * v.y - u.y * v.x;
    if !(s > 0.0) {
        return Err(CpfError::PullbackNotInvertible { s });
    }
    Ok(Mat2::new(v.y, -v.x, -u.y, u.x) / s)
}

/// Per-edge difference of the two pulled-back edge powers. With the
/// consensus auxiliary at its optimum (the average of the powers), the two
/// continuity residual pairs are ±half of this.
pub fn power_mismatch(
    mesh: &TriangleSurface,
    fields: &FieldPair,
    edge: usize,
    smooth: bool,
) -> Result<Vec2, CpfError> {
    let e = &mesh.interior_edges[edge];
    let (mut a_i, mut a_j) = (e.e_i, e.e_j);
    if smooth {
        a_i = rot90(a_i);
        a_j = rot90(a_j);
    }
    let p_i = complex_pow(fields.pullback(e.face_i)? * a_i, fields.degree);
    let p_j = complex_pow(fields.pullback(e.face_j)? * a_j, fields.degree);
    Ok(p_i - p_j)
}

/// Largest balanced continuity mismatch over the interior edges.
pub fn max_power_mismatch(
    mesh: &TriangleSurface,
    fields: &FieldPair,
    lambda: f64,
) -> Result<f64, CpfError> {
    let scale = lambda.powi(fields.degree as i32);
    let mut worst = 0.0f64;
    for e in 0..mesh.interior_edges.len() {
        worst = worst.max(power_mismatch(mesh, fields, e, false)?.norm() / scale);
    }
    Ok(worst)
}

/// Curvature-confidence weight of the alignment penalty.
pub fn alignment_weight(degree: u32, rho: f64) -> f64 {
    match degree {
        4 => rho * rho,
        // 1 − (1 − ρ)³, a sigmoid-like cubic flat at ρ = 1, then squared.
        6 => {
            let c = 1.0 - (1.0 - rho).powi(3);
            c * c
        }
        _ => 1.0,
    }
}

fn sqrt_direction(value: Vec2) -> Option<Vec2> {
    (value.norm() > 1e-12).then(|| principal_root(value, 2))
}

/// Hexagonal-mode constraints: Dupin sizing, alignment to the guiding field
/// (full symmetry in elliptic faces, two-fold in parabolic and hyperbolic
/// ones), conjugacy away from the boundary, and plain orthogonality.
pub fn ph_constraints(
    mesh: &TriangleSurface,
    curv: &CurvatureData,
    dupin: &DupinMetric,
    guiding: &RoSyField,
) -> ConstraintSet {
    build_curved_constraints(mesh, curv, dupin, guiding, 6)
}

/// Quad-mode constraints: identical structure with full symmetry 4 for the
/// alignment everywhere it applies.
pub fn pq_constraints(
    mesh: &TriangleSurface,
    curv: &CurvatureData,
    dupin: &DupinMetric,
    guiding: &RoSyField,
) -> ConstraintSet {
    build_curved_constraints(mesh, curv, dupin, guiding, 4)
}

fn build_curved_constraints(
    mesh: &TriangleSurface,
    curv: &CurvatureData,
    dupin: &DupinMetric,
    guiding: &RoSyField,
    degree: u32,
) -> ConstraintSet {
    let mut alignment = Vec::new();
    let mut ortho = Vec::new();
    for f in 0..mesh.n_faces() {
        let sub_degree = match (degree, curv.region[f]) {
            (6, Region::Elliptic) => Some(6),
            (6, Region::Parabolic | Region::Hyperbolic) => Some(2),
            (4, Region::Elliptic | Region::Parabolic | Region::Hyperbolic) => Some(4),
            _ => None,
        };
        if let (Some(sub_degree), Some(dir)) = (sub_degree, sqrt_direction(guiding.values[f])) {
            alignment.push((
                f,
                AlignmentData {
                    dir,
                    sub_degree,
                    weight: alignment_weight(degree, curv.rho[f]),
                },
            ));
        }
        if curv.region[f] != Region::Boundary {
            ortho.push((f, curv.shape_op[f]));
        }
        ortho.push((f, Mat2::identity()));
    }
    let cons = ConstraintSet {
        degree,
        alignment,
        sizing: dupin.g.clone(),
        ortho,
    };
    cons.validate(mesh);
    cons
}

/// Degree-1 sanity constraints: unit sizing and orthogonality only, which
/// drive the fields toward a plain isometric parameterization.
pub fn sanity_constraints(mesh: &TriangleSurface) -> ConstraintSet {
    ConstraintSet {
        degree: 1,
        alignment: Vec::new(),
        sizing: vec![Mat2::identity(); mesh.n_faces()],
        ortho: (0..mesh.n_faces()).map(|f| (f, Mat2::identity())).collect(),
    }
}

/// Initial fields from a guiding direction field: U along the principal
/// square root of the guiding value, V its 90° rotation (so the pair is
/// positively oriented), both normalized to unit sizing-metric length; the
/// consensus auxiliaries start at the average of the two edge powers.
pub fn initialize_from_guiding(
    mesh: &TriangleSurface,
    guiding: &RoSyField,
    sizing: &[Mat2],
    degree: u32,
) -> FieldPair {
    let n_faces = mesh.n_faces();
    let mut u = Vec::with_capacity(n_faces);
    let mut v = Vec::with_capacity(n_faces);
    for f in 0..n_faces {
        let u_dir = sqrt_direction(guiding.values[f]).unwrap_or_else(|| Vec2::new(1.0, 0.0));
        let v_dir = rot90(u_dir);
        let g = &sizing[f];
        u.push(u_dir / u_dir.dot(&(g * u_dir)).sqrt());
        v.push(v_dir / v_dir.dot(&(g * v_dir)).sqrt());
    }
    let mut fields = FieldPair {
        degree,
        u,
        v,
        z: vec![Vec2::zeros(); mesh.interior_edges.len()],
        z_smooth: vec![Vec2::zeros(); mesh.interior_edges.len()],
    };
    reset_consensus(mesh, &mut fields);
    fields
}

/// Sets each consensus auxiliary to the average of its two edge powers (the
/// closed-form optimum for fixed U, V).
pub fn reset_consensus(mesh: &TriangleSurface, fields: &mut FieldPair) {
    for (e, edge) in mesh.interior_edges.iter().enumerate() {
        let inv_i = pullback_map(fields.u[edge.face_i], fields.v[edge.face_i]);
        let inv_j = pullback_map(fields.u[edge.face_j], fields.v[edge.face_j]);
        let (inv_i, inv_j) = match (inv_i, inv_j) {
            (Ok(a), Ok(b)) => (a, b),
            // Leave non-orientable edges at zero; the optimizer rejects
            // such states anyway.
            _ => continue,
        };
        let avg = |a_i: Vec2, a_j: Vec2| {
            (complex_pow(inv_i * a_i, fields.degree) + complex_pow(inv_j * a_j, fields.degree))
                / 2.0
        };
        fields.z[e] = avg(edge.e_i, edge.e_j);
        fields.z_smooth[e] = avg(rot90(edge.e_i), rot90(edge.e_j));
    }
}

#[derive(Debug, Clone)]
pub struct RoundReport {
    pub beta: f64,
    pub solve: SolveReport,
    /// Continuity mismatch after the round, in convergence-gate units
    /// (N-th powers of the mean squared parameter edge length).
    pub mismatch: f64,
    pub succeeded: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizeReport {
    pub lambda: f64,
    pub rounds: Vec<RoundReport>,
}

/// Penalty-schedule optimization: solves the assembled system with β = 2^k,
/// re-starting each round from the previous fields, until the continuity
/// mismatch is below [`CONTINUITY_TOL`] and the caller-provided integration
/// check (if any) accepts the fields.
pub fn optimize_cpf(
    mesh: &TriangleSurface,
    cons: &ConstraintSet,
    init: &FieldPair,
    mut integration_ok: Option<&mut dyn FnMut(&FieldPair) -> bool>,
) -> Result<(FieldPair, OptimizeReport), CpfError> {
    cons.validate(mesh);
    assert_eq!(cons.degree, init.degree);
    init.check_lico()?;

    let lambda = balancing_lambda(mesh, &cons.sizing);
    // The convergence gate normalizes by the squared length scale rather
    // than the residual-weight λ: the threshold and that scale are
    // calibrated together (see CONTINUITY_TOL).
    let gate_scale = energy::squared_length_scale(mesh, &cons.sizing);
    let n_faces = mesh.n_faces();
    let n_edges = mesh.interior_edges.len();

    // Barrier anchors track the orientation in sizing-metric units, the
    // same quantity the barrier blocks evaluate.
    let scales: Vec<f64> =
        cons.sizing.iter().map(|g| g.determinant().sqrt()).collect();
    let anchors = Rc::new(RefCell::new(
        (0..n_faces)
            .map(|f| BARRIER_SHRINK * init.orientation(f) * scales[f])
            .collect::<Vec<_>>(),
    ));

    let mut x = init.to_x();
    let mut rounds = Vec::new();
    let mut best = f64::INFINITY;
    let config = SolverConfig::default();

    for k in 0..MAX_ROUNDS {
        let beta = 2f64.powi(k as i32);
        let system = assemble_system(mesh, cons, beta, lambda, &anchors);
        let hook_anchors = Rc::clone(&anchors);
        let (x_new, solve) = nlls::solve_with_hook(&system, &x, &config, |x: &[f64]| {
            let mut a = hook_anchors.borrow_mut();
            for (f, slot) in a.iter_mut().enumerate() {
                let s = x[4 * f] * x[4 * f + 3] - x[4 * f + 1] * x[4 * f + 2];
                // A non-positive trial orientation keeps the old threshold;
                // the barrier still pushes back toward feasibility.
                if s > 0.0 {
                    *slot = BARRIER_SHRINK * s * scales[f];
                }
            }
        })?;
        x = x_new;

        let fields = FieldPair::from_x(cons.degree, n_faces, n_edges, &x);
        let mismatch = max_power_mismatch(mesh, &fields, gate_scale)
            .unwrap_or(f64::INFINITY);
        best = best.min(mismatch);
        let succeeded = mismatch < CONTINUITY_TOL
            && match integration_ok.as_mut() {
                Some(check) => check(&fields),
                None => true,
            };
        rounds.push(RoundReport { beta, solve, mismatch, succeeded });
        if succeeded {
            return Ok((fields, OptimizeReport { lambda, rounds }));
        }
    }
    Err(CpfError::DidNotConverge { rounds: MAX_ROUNDS, best })
}

/// Convenience accessors for dump/report consumers.
impl FieldPair {
    /// U and V per face mapped into 3D by the face basis.
    pub fn fields_3d(
        &self,
        mesh: &TriangleSurface,
    ) -> Vec<(nalgebra::Vector3<f64>, nalgebra::Vector3<f64>)> {
        (0..self.u.len())
            .map(|f| (mesh.local_basis[f] * self.u[f], mesh.local_basis[f] * self.v[f]))
            .collect()
    }
}
