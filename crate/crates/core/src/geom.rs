//! Small 2D numeric kernels shared across the crate: quarter-turn rotation,
//! integer complex powers with their real Jacobians, and closed-form
//! eigendecomposition of symmetric 2x2 matrices.

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Rotation by +90 degrees (counterclockwise): `J (x, y) = (-y, x)`.
pub fn rot90(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// The matrix of [`rot90`], `J = [[0,-1],[1,0]]`.
pub fn j_matrix() -> Mat2 {
    Mat2::new(0.0, -1.0, 1.0, 0.0)
}

/// Counterclockwise rotation matrix by `angle` radians.
pub fn rotation(angle: f64) -> Mat2 {
    let (s, c) = angle.sin_cos();
    Mat2::new(c, -s, s, c)
}

/// Rotation by `2 pi k / n`, the chart symmetries of an order-`n` grid.
pub fn rotation_k_of_n(k: i64, n: u32) -> Mat2 {
    rotation(std::f64::consts::TAU * k as f64 / n as f64)
}

pub fn to_complex(v: Vec2) -> Complex64 {
    Complex64::new(v.x, v.y)
}

pub fn from_complex(z: Complex64) -> Vec2 {
    Vec2::new(z.re, z.im)
}

/// `v^n` under the identification `(x, y) = x + iy`.
pub fn complex_pow(v: Vec2, n: u32) -> Vec2 {
    from_complex(to_complex(v).powu(n))
}

/// Real 2x2 Jacobian of [`complex_pow`] at `v`.
///
/// The map is holomorphic with derivative `n v^(n-1)`, so with
/// `w = n v^(n-1)` the Jacobian is `[[Re w, -Im w], [Im w, Re w]]`.
pub fn complex_pow_jacobian(v: Vec2, n: u32) -> Mat2 {
    if n == 0 {
        return Mat2::zeros();
    }
    let w = to_complex(v).powu(n - 1) * n as f64;
    Mat2::new(w.re, -w.im, w.im, w.re)
}

/// Eigendecomposition of a symmetric 2x2 matrix.
///
/// Returns `(eig_lo, dir_lo, eig_hi, dir_hi)` with `eig_lo <= eig_hi`
/// (signed order) and unit, mutually orthogonal directions with
/// `dir_hi = rot90(dir_lo)`. Near-umbilic input (eigenvalue gap below
/// `1e-12 * ||m||`) returns the coordinate axes.
pub fn sym_eigen2(m: &Mat2) -> (f64, Vec2, f64, Vec2) {
    let a = m.m11;
    let b = 0.5 * (m.m12 + m.m21);
    let c = m.m22;
    let mean = 0.5 * (a + c);
    let half_gap = f64::hypot(0.5 * (a - c), b);
    let lo = mean - half_gap;
    let hi = mean + half_gap;
    let scale = a.abs().max(c.abs()).max(b.abs());
    if half_gap <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return (lo, Vec2::new(1.0, 0.0), hi, Vec2::new(0.0, 1.0));
    }
    // Eigenvector for `hi` from the better-conditioned of the two rows.
    let dir_hi = if (a - lo).abs() >= (c - lo).abs() {
        Vec2::new(a - lo, b)
    } else {
        Vec2::new(b, c - lo)
    };
    let dir_hi = dir_hi.normalize();
    let dir_lo = rot90(dir_hi) * -1.0;
    // Keep the convention dir_hi = rot90(dir_lo).
    (lo, dir_lo, hi, dir_hi)
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(std::f64::consts::TAU);
    if x > std::f64::consts::PI {
        x -= std::f64::consts::TAU;
    }
    x
}

/// FNV-1a 64-bit hash; used for self-describing artifact headers.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1_0000_0000_01b3);
    }
    h
}
