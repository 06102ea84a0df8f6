//! Small fixed-size vector/matrix helpers.
//!
//! Everything the solver needs is 2- or 3-dimensional, so plain arrays with
//! free functions beat a linear-algebra dependency here. Matrices are
//! row-major: `m[row][col]`.

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];
pub type Mat2 = [[f64; 2]; 2];
pub type Mat3 = [[f64; 3]; 3];

pub const ZERO3: Vec3 = [0.0; 3];
pub const ZERO_MAT3: Mat3 = [[0.0; 3]; 3];

#[inline]
pub fn mat2_mul_vec(m: &Mat2, v: Vec2) -> Vec2 {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn mat3_mul_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

/// Rank-one accumulation `m += s * v vᵀ`.
#[inline]
pub fn mat3_add_outer(m: &mut Mat3, v: Vec3, s: f64) {
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] += s * v[r] * v[c];
        }
    }
}

pub fn mat3_frobenius(m: &Mat3) -> f64 {
    let mut acc = 0.0;
    for row in m {
        for &x in row {
            acc += x * x;
        }
    }
    acc.sqrt()
}

/// Closed-form inverse via the adjugate. Returns `None` when the determinant
/// underflows relative to the matrix scale.
pub fn mat3_inverse(m: &Mat3) -> Option<Mat3> {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;

    let scale = mat3_frobenius(m);
    if !det.is_finite() || det.abs() <= f64::EPSILON * scale * scale * scale {
        return None;
    }
    let inv_det = 1.0 / det;
    Some([
        [
            c00 * inv_det,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
        ],
        [
            c01 * inv_det,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
        ],
        [
            c02 * inv_det,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
        ],
    ])
}

/// Frobenius-based condition estimate `‖m‖_F ‖m⁻¹‖_F`; `f64::INFINITY` for
/// singular input.
pub fn mat3_condition(m: &Mat3) -> f64 {
    match mat3_inverse(m) {
        Some(inv) => mat3_frobenius(m) * mat3_frobenius(&inv),
        None => f64::INFINITY,
    }
}
