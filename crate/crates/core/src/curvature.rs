//! Per-face curvature analysis: shape operator, principal curvatures and
//! directions, a polar (angle, magnitude) curvature representation, region
//! classification, and the regularized anisotropy metric used to size and
//! orient output elements.
//!
//! The shape operator is the tangential gradient of the piecewise-linear
//! vertex-normal field, symmetrized and projected into the face basis. With
//! outward normals a unit sphere gets eigenvalues (+1, +1) and a radius-r
//! cylinder (0, +1/r). Principal curvatures are ordered `k_min ≤ k_max` by
//! signed value.
//!
//! The polar representation maps the curvature pair to an angle
//! `phi = |atan((k_min + k_max) / (k_min − k_max))| ∈ [0, π/2]` (hyperbolic 0,
//! parabolic π/4, umbilic π/2) and a magnitude `rho = √(k_min² + k_max²)`,
//! normalized into [0, 1]. Faces are then binned into curvature regions that
//! downstream stages use to pick alignment constraints.

use crate::geom::{sym_eigen2, Mat2, Vec2};
use crate::mesh::TriangleSurface;
use nalgebra::Matrix3x2;
use thiserror::Error;

/// Faces with normalized rho at or below this are planar.
pub const RHO_PLANAR: f64 = 0.01;
/// Half-width of the parabolic band around phi = π/4.
pub const DELTA_PARABOLIC: f64 = 0.05;
/// Width of the umbilic band below phi = π/2.
pub const DELTA_UMBILIC: f64 = 0.2;
/// Quantile of raw rho used as the normalization denominator; robust to
/// curvature spikes from noisy discrete estimates.
const RHO_QUANTILE: f64 = 0.95;

#[derive(Debug, Error)]
pub enum CurvatureError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Elliptic,
    Parabolic,
    Hyperbolic,
    Umbilic,
    Planar,
    Boundary,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Elliptic => "elliptic",
            Region::Parabolic => "parabolic",
            Region::Hyperbolic => "hyperbolic",
            Region::Umbilic => "umbilic",
            Region::Planar => "planar",
            Region::Boundary => "boundary",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurvatureData {
    /// Symmetric 2x2 shape operator per face, in the face basis (1/length).
    pub shape_op: Vec<Mat2>,
    pub k_min: Vec<f64>,
    pub k_max: Vec<f64>,
    /// Unit principal direction of k_min, in the face basis.
    pub d_min: Vec<Vec2>,
    pub d_max: Vec<Vec2>,
    /// Normalized curvature magnitude in [0, 1].
    pub rho: Vec<f64>,
    /// Curvature-type angle in [0, π/2]; meaningful only where rho > 0.
    pub phi: Vec<f64>,
    pub region: Vec<Region>,
    /// Unit direction of minimal absolute normal curvature.
    pub d_abs_min: Vec<Vec2>,
}

/// Tangential gradient of the interpolated vertex normals, symmetrized and
/// projected into each face's basis.
pub fn compute_shape_operator(mesh: &TriangleSurface) -> Vec<Mat2> {
    let normals = mesh.effective_vertex_normals();
    (0..mesh.n_faces())
        .map(|f| {
            let grads = mesh.hat_gradients(f);
            let mut dn = Matrix3x2::zeros();
            for (k, &v) in mesh.faces[f].iter().enumerate() {
                dn += normals[v] * grads[k].transpose();
            }
            let s = mesh.local_basis[f].transpose() * dn;
            0.5 * (s + s.transpose())
        })
        .collect()
}

/// Polar representation of a curvature pair. The angle degenerates to π/2
/// at exact umbilics (k_min = k_max).
pub fn polar_curvature(k_min: f64, k_max: f64) -> (f64, f64) {
    let rho_raw = k_min.hypot(k_max);
    let phi = if k_min == k_max {
        std::f64::consts::FRAC_PI_2
    } else {
        ((k_min + k_max) / (k_min - k_max)).atan().abs()
    };
    (phi, rho_raw)
}

/// Region of a single face from its normalized rho and phi.
pub fn classify_face(rho: f64, phi: f64, rho_min: f64, delta_p: f64, delta_e: f64) -> Region {
    let quarter = std::f64::consts::FRAC_PI_4;
    if rho <= rho_min {
        Region::Planar
    } else if phi >= std::f64::consts::FRAC_PI_2 - delta_e {
        Region::Umbilic
    } else if phi - quarter >= delta_p {
        Region::Elliptic
    } else if (phi - quarter).abs() < delta_p {
        Region::Parabolic
    } else {
        Region::Hyperbolic
    }
}

/// Direction of minimal absolute curvature; ties go to `d_min`.
pub fn min_abs_curvature_direction(k_min: f64, k_max: f64, d_min: Vec2, d_max: Vec2) -> Vec2 {
    if k_min.abs() <= k_max.abs() {
        d_min
    } else {
        d_max
    }
}

/// Full per-face curvature analysis of a surface.
pub fn analyze_curvature(mesh: &TriangleSurface) -> CurvatureData {
    let shape_op = compute_shape_operator(mesh);
    let nf = mesh.n_faces();
    let mut k_min = vec![0.0; nf];
    let mut k_max = vec![0.0; nf];
    let mut d_min = vec![Vec2::zeros(); nf];
    let mut d_max = vec![Vec2::zeros(); nf];
    let mut phi = vec![0.0; nf];
    let mut rho_raw = vec![0.0; nf];
    for f in 0..nf {
        let (lo, dir_lo, hi, dir_hi) = sym_eigen2(&shape_op[f]);
        k_min[f] = lo;
        k_max[f] = hi;
        d_min[f] = dir_lo;
        d_max[f] = dir_hi;
        (phi[f], rho_raw[f]) = polar_curvature(lo, hi);
    }

    // Normalize rho by a high quantile over faces with trustworthy
    // curvature (boundary faces have one-sided normal estimates).
    let mut interior: Vec<f64> = (0..nf)
        .filter(|&f| !mesh.boundary_face[f])
        .map(|f| rho_raw[f])
        .collect();
    if interior.is_empty() {
        interior = rho_raw.clone();
    }
    interior.sort_unstable_by(f64::total_cmp);
    let idx = ((RHO_QUANTILE * interior.len() as f64).ceil() as usize)
        .clamp(1, interior.len())
        - 1;
    let denom = interior[idx];
    let denom = if denom > 0.0 { denom } else { 1.0 };
    let rho: Vec<f64> = rho_raw.iter().map(|r| (r / denom).min(1.0)).collect();

    let region: Vec<Region> = (0..nf)
        .map(|f| {
            if mesh.boundary_face[f] {
                Region::Boundary
            } else {
                classify_face(rho[f], phi[f], RHO_PLANAR, DELTA_PARABOLIC, DELTA_UMBILIC)
            }
        })
        .collect();
    let d_abs_min = (0..nf)
        .map(|f| min_abs_curvature_direction(k_min[f], k_max[f], d_min[f], d_max[f]))
        .collect();

    CurvatureData {
        shape_op,
        k_min,
        k_max,
        d_min,
        d_max,
        rho,
        phi,
        region,
        d_abs_min,
    }
}

/// Anisotropy metric with its regularization constants.
#[derive(Debug, Clone)]
pub struct DupinMetric {
    pub epsilon: f64,
    pub gamma: f64,
    /// Symmetric positive-definite 2x2 metric per face, in the face basis.
    pub g: Vec<Mat2>,
}

/// One face's metric: eigen-directions are the principal directions, the
/// eigenvalues of `γ² g` are the regularized magnitudes `√(κ² + ε²)`.
pub fn dupin_g(k_min: f64, k_max: f64, d_min: Vec2, d_max: Vec2, epsilon: f64, gamma: f64) -> Mat2 {
    let lam_min = k_min.hypot(epsilon);
    let lam_max = k_max.hypot(epsilon);
    let r = Mat2::from_columns(&[d_min, d_max]);
    (r * Mat2::new(lam_min, 0.0, 0.0, lam_max) * r.transpose()) / (gamma * gamma)
}

/// Build the per-face metric. `delta` is a fraction of the bounding-box
/// diagonal, `eta` a fraction of the total surface area; both are converted
/// to absolute units here, giving `ε = 2πδ/η` and `γ = √(2δ)`.
pub fn regularized_dupin_metric(
    mesh: &TriangleSurface,
    curv: &CurvatureData,
    delta: f64,
    eta: f64,
) -> Result<DupinMetric, CurvatureError> {
    if !(delta > 0.0) {
        return Err(CurvatureError::NonPositiveParameter {
            name: "delta",
            value: delta,
        });
    }
    if !(eta > 0.0) {
        return Err(CurvatureError::NonPositiveParameter {
            name: "eta",
            value: eta,
        });
    }
    let delta_abs = delta * mesh.bbox_diagonal;
    let eta_abs = eta * mesh.total_area;
    let epsilon = std::f64::consts::TAU * delta_abs / eta_abs;
    let gamma = (2.0 * delta_abs).sqrt();
    let g = (0..mesh.n_faces())
        .map(|f| {
            dupin_g(
                curv.k_min[f],
                curv.k_max[f],
                curv.d_min[f],
                curv.d_max[f],
                epsilon,
                gamma,
            )
        })
        .collect();
    Ok(DupinMetric { epsilon, gamma, g })
}
