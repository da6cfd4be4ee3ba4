//! Residual blocks and assembly for the coordinate power field objective.
//!
//! The total cost is a sum of per-element averaged quadratic penalties:
//! edge-based continuity and smoothness terms in the power domain (rescaled
//! by the balancing factor 1/λᴺ), and face-based barrier, alignment, sizing,
//! and orthogonality terms. Each energy is averaged over its element count,
//! so every block carries a 1/√count factor in its weight.

use super::{AlignmentData, ConstraintSet, EPS_LICO};
use crate::geom::{complex_pow, complex_pow_jacobian, rot90, Mat2, Vec2};
use crate::mesh::TriangleSurface;
use crate::nlls::{ResidualBlock, ResidualSystem};
use std::cell::RefCell;
use std::rc::Rc;

/// Finite stand-in for the barrier pole; reached just above x = 0.
pub const BARRIER_CAP: f64 = 1e10;

/// One-sided barrier φ and its derivative: zero for x ≥ s̄, a smooth blowup
/// 1/g(x) − 1 with g(x) = 1 − (1 − x/s̄)³ on (0, s̄), and the tangent line
/// through the point where φ reaches [`BARRIER_CAP`] below that (keeping the
/// value finite and the gradient pointing back toward feasibility).
pub fn barrier(x: f64, s_bar: f64) -> (f64, f64) {
    debug_assert!(s_bar > 0.0);
    if x >= s_bar {
        return (0.0, 0.0);
    }
    let eval = |x: f64| {
        let t = 1.0 - x / s_bar;
        let g = 1.0 - t * t * t;
        let dg = 3.0 * t * t / s_bar;
        // 1/g − 1 written as t³/g to avoid cancellation for g near 1.
        (t * t * t / g, -dg / (g * g))
    };
    // g(x0) = 1/(1 + cap) ⇔ φ(x0) = cap.
    let x0 = s_bar * (1.0 - (BARRIER_CAP / (1.0 + BARRIER_CAP)).cbrt());
    if x <= x0 {
        let (phi0, dphi0) = eval(x0);
        (phi0 + dphi0 * (x - x0), dphi0)
    } else {
        eval(x)
    }
}

/// Inverse of [U V] scaled by the orientation s = det[U V], together with s.
/// Callers decide how to treat s ≤ 0; the raw division is well-defined in
/// IEEE arithmetic and non-finite residuals make the solver reject the step.
#[inline]
fn inverse_and_s(u: Vec2, v: Vec2) -> (Mat2, f64) {
    let s = u.x * v.y - u.y * v.x;
    (Mat2::new(v.y, -v.x, -u.y, u.x) / s, s)
}

/// Pulled-back argument, its N-th power, and the power's derivatives with
/// respect to U and V: for p = (A⁻¹a)ᴺ with A = [U V],
/// ∂p/∂U = Dpow · (−g₁ A⁻¹) and ∂p/∂V = Dpow · (−g₂ A⁻¹), where g = A⁻¹a.
#[inline]
fn power_side(u: Vec2, v: Vec2, arg: Vec2, n: u32, jac: bool) -> (Vec2, Mat2, Mat2) {
    let (a_inv, _) = inverse_and_s(u, v);
    let g = a_inv * arg;
    let p = complex_pow(g, n);
    if !jac {
        return (p, Mat2::zeros(), Mat2::zeros());
    }
    let dp = complex_pow_jacobian(g, n);
    (p, dp * (-g.x * a_inv), dp * (-g.y * a_inv))
}

/// Continuity (and, with rotated arguments, smoothness) block for one
/// interior edge: r = [(dr_i⁻¹ aᵢ)ᴺ − z, (dr_j⁻¹ aⱼ)ᴺ − z].
pub(super) struct PowerEdgeBlock {
    /// U_i, V_i, U_j, V_j (4 faces × 2), then the edge auxiliary z.
    pub vars: [usize; 10],
    pub arg_i: Vec2,
    pub arg_j: Vec2,
    pub degree: u32,
    pub weight: f64,
}

impl ResidualBlock for PowerEdgeBlock {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        4
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let z = Vec2::new(v[8], v[9]);
        let want_jac = jacobian.is_some();
        let sides = [
            power_side(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]), self.arg_i, self.degree, want_jac),
            power_side(Vec2::new(v[4], v[5]), Vec2::new(v[6], v[7]), self.arg_j, self.degree, want_jac),
        ];
        for (side, (p, _, _)) in sides.iter().enumerate() {
            residual[2 * side] = p.x - z.x;
            residual[2 * side + 1] = p.y - z.y;
        }
        if let Some(jac) = jacobian {
            jac.fill(0.0);
            for (side, (_, du, dv)) in sides.iter().enumerate() {
                let (row0, col0) = (2 * side, 4 * side);
                for r in 0..2 {
                    for c in 0..2 {
                        jac[(row0 + r) * 10 + col0 + c] = du[(r, c)];
                        jac[(row0 + r) * 10 + col0 + 2 + c] = dv[(r, c)];
                    }
                    jac[(row0 + r) * 10 + 8 + r] = -1.0;
                }
            }
        }
    }
}

/// Orientation barrier on one face: r = φ(ŝ − ε) with ŝ = s·√det(g) the
/// orientation in sizing-metric units (1 for a g-orthonormal pair, so ε is
/// a mesh-independent relative floor) and the threshold s̄ read from a
/// shared anchor vector the optimizer updates between steps.
pub(super) struct LicoBlock {
    pub vars: [usize; 4],
    pub face: usize,
    pub anchors: Rc<RefCell<Vec<f64>>>,
    /// √det of the face's sizing metric.
    pub scale: f64,
    pub weight: f64,
}

impl ResidualBlock for LicoBlock {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        1
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let (u, w) = (Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]));
        let s_hat = (u.x * w.y - u.y * w.x) * self.scale;
        let s_bar = self.anchors.borrow()[self.face];
        let (phi, dphi) = barrier(s_hat - EPS_LICO, s_bar);
        residual[0] = phi;
        if let Some(jac) = jacobian {
            let k = dphi * self.scale;
            jac.copy_from_slice(&[k * w.y, -k * w.x, -k * u.y, k * u.x]);
        }
    }
}

/// Direction alignment on one face: r = w · Im((dr⁻¹ d)^(n/2)).
pub(super) struct AlignmentBlock {
    pub vars: [usize; 4],
    pub dir: Vec2,
    pub half_degree: u32,
    pub weight: f64,
}

impl ResidualBlock for AlignmentBlock {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        1
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let (u, w) = (Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]));
        let (a_inv, _) = inverse_and_s(u, w);
        let q = a_inv * self.dir;
        residual[0] = complex_pow(q, self.half_degree).y;
        if let Some(jac) = jacobian {
            // d Im(qᵐ) = [m·Im(qᵐ⁻¹), m·Re(qᵐ⁻¹)] · dq.
            let m = self.half_degree as f64;
            let qm1 = complex_pow(q, self.half_degree - 1);
            let dim_dq = Vec2::new(m * qm1.y, m * qm1.x);
            let row_u = (-q.x * a_inv).transpose() * dim_dq;
            let row_v = (-q.y * a_inv).transpose() * dim_dq;
            jac.copy_from_slice(&[row_u.x, row_u.y, row_v.x, row_v.y]);
        }
    }
}

/// Sizing on a single field: r = XᵀgX − 1.
pub(super) struct SizingBlock {
    pub vars: [usize; 2],
    pub metric: Mat2,
    pub weight: f64,
}

impl ResidualBlock for SizingBlock {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        1
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let x = Vec2::new(v[0], v[1]);
        let gx = self.metric * x;
        residual[0] = x.dot(&gx) - 1.0;
        if let Some(jac) = jacobian {
            jac.copy_from_slice(&[2.0 * gx.x, 2.0 * gx.y]);
        }
    }
}

/// Generalized orthogonality on one face: r = Uᵀ S V for symmetric S.
pub(super) struct OrthoBlock {
    pub vars: [usize; 4],
    pub inner: Mat2,
    pub weight: f64,
}

impl ResidualBlock for OrthoBlock {
    fn variables(&self) -> &[usize] {
        &self.vars
    }
    fn dimension(&self) -> usize {
        1
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn evaluate(&self, v: &[f64], residual: &mut [f64], jacobian: Option<&mut [f64]>) {
        let (u, w) = (Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]));
        let su = self.inner * u;
        let sv = self.inner * w;
        residual[0] = u.dot(&sv);
        if let Some(jac) = jacobian {
            jac.copy_from_slice(&[sv.x, sv.y, su.x, su.y]);
        }
    }
}

/// Balancing factor: the expected 2D edge length, i.e. the mean over all
/// face-edge incidences of ‖e‖_g = √(eᵀ g e). An edge pullback of a
/// well-sized field has this magnitude, so dividing N-th power residuals by
/// λᴺ makes the power-domain energies dimensionless.
pub fn balancing_lambda(mesh: &TriangleSurface, sizing: &[Mat2]) -> f64 {
    let mut sum = 0.0;
    for f in 0..mesh.n_faces() {
        let q = mesh.face_local_coords(f);
        let g = &sizing[f];
        for k in 0..3 {
            let e = q[(k + 1) % 3] - q[k];
            sum += (e.dot(&(g * e))).abs().sqrt();
        }
    }
    sum / (3.0 * mesh.n_faces() as f64)
}

/// Mean squared parameter edge length. The continuity convergence gate is
/// measured against the N-th power of this scale: well below it, per-edge
/// rotation and translation rounding during integration is trustworthy.
pub fn squared_length_scale(mesh: &TriangleSurface, sizing: &[Mat2]) -> f64 {
    let mut sum = 0.0;
    for f in 0..mesh.n_faces() {
        let q = mesh.face_local_coords(f);
        let g = &sizing[f];
        for k in 0..3 {
            let e = q[(k + 1) % 3] - q[k];
            sum += (e.dot(&(g * e))).abs();
        }
    }
    sum / (3.0 * mesh.n_faces() as f64)
}

/// Which named energy a block belongs to; used to assemble term subsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Smoothness,
    Continuity,
    Lico,
    Alignment,
    Sizing,
    Ortho,
}

pub const ALL_TERMS: [Term; 6] = [
    Term::Smoothness,
    Term::Continuity,
    Term::Lico,
    Term::Alignment,
    Term::Sizing,
    Term::Ortho,
];

/// Variable layout: 4 per face (U, V interleaved), then 2 per interior edge
/// for the continuity auxiliaries, then 2 per edge for the smoothness ones.
pub fn variable_count(mesh: &TriangleSurface) -> usize {
    4 * mesh.n_faces() + 4 * mesh.interior_edges.len()
}

#[inline]
pub(super) fn face_vars(f: usize) -> [usize; 4] {
    [4 * f, 4 * f + 1, 4 * f + 2, 4 * f + 3]
}

#[inline]
pub(super) fn z_base(mesh: &TriangleSurface, smooth: bool) -> usize {
    4 * mesh.n_faces() + if smooth { 2 * mesh.interior_edges.len() } else { 0 }
}

fn add_term(
    system: &mut ResidualSystem,
    term: Term,
    mesh: &TriangleSurface,
    cons: &ConstraintSet,
    beta: f64,
    lambda: f64,
    anchors: &Rc<RefCell<Vec<f64>>>,
) {
    let n_faces = mesh.n_faces();
    let n_edges = mesh.interior_edges.len();
    let inv_pow = 1.0 / lambda.powi(cons.degree as i32);
    let w_face = 1.0 / (n_faces as f64).sqrt();

    match term {
        Term::Smoothness | Term::Continuity => {
            if n_edges == 0 {
                return;
            }
            let smooth = term == Term::Smoothness;
            let w_edge = inv_pow / (n_edges as f64).sqrt()
                * if smooth { 1.0 } else { beta.sqrt() };
            let zb = z_base(mesh, smooth);
            for (e, edge) in mesh.interior_edges.iter().enumerate() {
                let (fi, fj) = (face_vars(edge.face_i), face_vars(edge.face_j));
                let (arg_i, arg_j) = if smooth {
                    (rot90(edge.e_i), rot90(edge.e_j))
                } else {
                    (edge.e_i, edge.e_j)
                };
                system.add_block(PowerEdgeBlock {
                    vars: [
                        fi[0], fi[1], fi[2], fi[3], fj[0], fj[1], fj[2], fj[3],
                        zb + 2 * e, zb + 2 * e + 1,
                    ],
                    arg_i,
                    arg_j,
                    degree: cons.degree,
                    weight: w_edge,
                });
            }
        }
        Term::Lico => {
            for f in 0..n_faces {
                system.add_block(LicoBlock {
                    vars: face_vars(f),
                    face: f,
                    anchors: Rc::clone(anchors),
                    scale: cons.sizing[f].determinant().sqrt(),
                    weight: w_face,
                });
            }
        }
        Term::Alignment => {
            if cons.alignment.is_empty() {
                return;
            }
            let w_base = inv_pow / (cons.alignment.len() as f64).sqrt();
            for &(f, AlignmentData { dir, sub_degree, weight }) in &cons.alignment {
                system.add_block(AlignmentBlock {
                    vars: face_vars(f),
                    dir,
                    half_degree: sub_degree / 2,
                    weight: w_base * weight,
                });
            }
        }
        Term::Sizing => {
            for f in 0..n_faces {
                let fv = face_vars(f);
                for half in 0..2 {
                    system.add_block(SizingBlock {
                        vars: [fv[2 * half], fv[2 * half + 1]],
                        metric: cons.sizing[f],
                        weight: w_face,
                    });
                }
            }
        }
        Term::Ortho => {
            if cons.ortho.is_empty() {
                return;
            }
            let w = 1.0 / (cons.ortho.len() as f64).sqrt();
            for &(f, inner) in &cons.ortho {
                system.add_block(OrthoBlock {
                    vars: face_vars(f),
                    inner,
                    weight: w,
                });
            }
        }
    }
}

/// Full objective for one penalty round.
pub fn assemble_system(
    mesh: &TriangleSurface,
    cons: &ConstraintSet,
    beta: f64,
    lambda: f64,
    anchors: &Rc<RefCell<Vec<f64>>>,
) -> ResidualSystem {
    let mut system = ResidualSystem::new(variable_count(mesh));
    for term in ALL_TERMS {
        add_term(&mut system, term, mesh, cons, beta, lambda, anchors);
    }
    system
}

/// Value of a single named energy at `x` (β excluded from the continuity
/// term so the raw penalty is comparable across rounds).
pub fn term_energy(
    mesh: &TriangleSurface,
    cons: &ConstraintSet,
    term: Term,
    lambda: f64,
    anchors: &Rc<RefCell<Vec<f64>>>,
    x: &[f64],
) -> f64 {
    let mut system = ResidualSystem::new(variable_count(mesh));
    add_term(&mut system, term, mesh, cons, 1.0, lambda, anchors);
    system.cost(x)
}

/// Random fixtures shared by the energy tests and the field-level tests.
#[cfg(test)]
pub(super) mod test_support {
    use super::*;
    use crate::cpf::{reset_consensus, AlignmentData, FieldPair};
    use crate::geom::rotation;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// Random positively oriented fields with consensus auxiliaries.
    pub fn random_lico_fields(
        mesh: &TriangleSurface,
        degree: u32,
        rng: &mut ChaCha8Rng,
    ) -> FieldPair {
        let mut u = Vec::new();
        let mut v = Vec::new();
        for _ in 0..mesh.n_faces() {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let len = rng.gen_range(0.5..2.0);
            let uf = Vec2::new(angle.cos(), angle.sin()) * len;
            // V = a·rot90(U) + b·U with a > 0 keeps det[U V] = a‖U‖² > 0.
            let a = rng.gen_range(0.3..1.5);
            let b = rng.gen_range(-0.6..0.6);
            v.push(rot90(uf) * a + uf * b);
            u.push(uf);
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

    /// Random SPD sizing, random symmetric orthogonality inners (plus the
    /// identity), and alignment on every other face.
    pub fn random_constraints(
        mesh: &TriangleSurface,
        degree: u32,
        rng: &mut ChaCha8Rng,
    ) -> ConstraintSet {
        let mut sizing = Vec::new();
        let mut ortho = Vec::new();
        let mut alignment = Vec::new();
        for f in 0..mesh.n_faces() {
            let r = rotation(rng.gen_range(0.0..std::f64::consts::TAU));
            let diag = Mat2::new(rng.gen_range(0.5..2.0), 0.0, 0.0, rng.gen_range(0.5..2.0));
            sizing.push(r * diag * r.transpose());
            let sym = Mat2::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.0,
                rng.gen_range(-1.0..1.0),
            );
            ortho.push((f, Mat2::new(sym[(0, 0)], sym[(0, 1)], sym[(0, 1)], sym[(1, 1)])));
            ortho.push((f, Mat2::identity()));
            if f % 2 == 0 {
                let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                alignment.push((
                    f,
                    AlignmentData {
                        dir: Vec2::new(angle.cos(), angle.sin()),
                        sub_degree: if f % 4 == 0 { degree } else { 2 },
                        weight: rng.gen_range(0.2..1.0),
                    },
                ));
            }
        }
        ConstraintSet { degree, alignment, sizing, ortho }
    }
}
