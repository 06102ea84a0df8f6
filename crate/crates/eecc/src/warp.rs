//! Feature state and the 2D Euclidean warp between global (sensor) and
//! template coordinates, plus its derivatives.
//!
//! A feature is parameterized by a 3-vector: center position in global pixel
//! coordinates and the orientation of its patch. Template coordinates are
//! centered on the feature and counter-rotated, so the template frame of a
//! freshly seeded feature coincides with the global pixel grid around it.

use crate::mat::{mat2_mul_vec, Mat2, Vec2};

/// Warp parameters of a tracked feature: center `(x, y)` in global pixels and
/// patch orientation `theta` in radians, stored wrapped to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl FeatureState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    /// Seed state: orientation starts at zero.
    pub fn seed(x: f64, y: f64) -> Self {
        Self { x, y, theta: 0.0 }
    }

    #[inline]
    pub fn center(&self) -> Vec2 {
        [self.x, self.y]
    }

    /// Nearest integer pixel to the feature center.
    #[inline]
    pub fn rounded_center(&self) -> [i32; 2] {
        [self.x.round() as i32, self.y.round() as i32]
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }
}

/// Wrap an angle to the half-open interval `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    if theta > -PI && theta <= PI {
        return theta;
    }
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// Rotation matrix `R(theta) = [[cos, -sin], [sin, cos]]`.
#[inline]
pub fn rotation_matrix(theta: f64) -> Mat2 {
    let (s, c) = theta.sin_cos();
    [[c, -s], [s, c]]
}

/// Map a global point into the feature's template frame:
/// `x' = Rᵀ(theta) (x - center)`.
#[inline]
pub fn warp_to_template(x: Vec2, state: &FeatureState) -> Vec2 {
    let (s, c) = state.theta.sin_cos();
    let dx = x[0] - state.x;
    let dy = x[1] - state.y;
    [c * dx + s * dy, -s * dx + c * dy]
}

/// Map a template point back to global coordinates:
/// `x = R(theta) x' + center`. Inverse of [`warp_to_template`].
#[inline]
pub fn warp_from_template(xp: Vec2, state: &FeatureState) -> Vec2 {
    let r = rotation_matrix(state.theta);
    let rotated = mat2_mul_vec(&r, xp);
    [rotated[0] + state.x, rotated[1] + state.y]
}

/// Derivative of the template-frame position of the fixed global point `n`
/// with respect to the state, a 2x3 matrix.
///
/// With `x'(s) = Rᵀ(theta)(n - center)` the columns are
/// `d/dx = -Rᵀ e1`, `d/dy = -Rᵀ e2` and `d/dtheta = (dRᵀ/dtheta)(n - center)`.
#[inline]
pub fn warp_jacobian(n: Vec2, state: &FeatureState) -> [[f64; 3]; 2] {
    let (s, c) = state.theta.sin_cos();
    let dx = n[0] - state.x;
    let dy = n[1] - state.y;
    [
        [-c, -s, -s * dx + c * dy],
        [s, -c, -c * dx - s * dy],
    ]
}

/// Closed-ball membership test for event gating: true iff
/// `‖x - center‖₂ <= radius`.
#[inline]
pub fn in_neighborhood(x: Vec2, state: &FeatureState, radius: i32) -> bool {
    let dx = x[0] - state.x;
    let dy = x[1] - state.y;
    dx * dx + dy * dy <= (radius as f64) * (radius as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    #[test]
    fn rotation_at_zero_is_identity() {
        let r = rotation_matrix(0.0);
        assert_eq!(r, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn rotation_quarter_turn() {
        let r = rotation_matrix(PI / 2.0);
        let expect = [[0.0, -1.0], [1.0, 0.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((r[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn rotation_is_orthonormal_with_unit_determinant() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..1000 {
            let theta: f64 = rng.random_range(-10.0..10.0);
            let r = rotation_matrix(theta);
            // RᵀR = I
            let dot00 = r[0][0] * r[0][0] + r[1][0] * r[1][0];
            let dot01 = r[0][0] * r[0][1] + r[1][0] * r[1][1];
            let dot11 = r[0][1] * r[0][1] + r[1][1] * r[1][1];
            assert!((dot00 - 1.0).abs() < 1e-14);
            assert!(dot01.abs() < 1e-14);
            assert!((dot11 - 1.0).abs() < 1e-14);
            let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
            assert!((det - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn center_maps_to_origin() {
        let s = FeatureState::new(12.5, -3.0, 1.1);
        assert_eq!(warp_to_template(s.center(), &s), [0.0, 0.0]);
    }

    #[test]
    fn pure_translation_warp() {
        let s = FeatureState::seed(10.0, 20.0);
        assert_eq!(warp_to_template([13.0, 24.0], &s), [3.0, 4.0]);
    }

    #[test]
    fn quarter_turn_warp_example() {
        let s = FeatureState::new(5.0, 5.0, PI / 2.0);
        let xp = warp_to_template([6.0, 5.0], &s);
        assert!((xp[0] - 0.0).abs() < 1e-15);
        assert!((xp[1] - (-1.0)).abs() < 1e-15);
    }

    #[test]
    fn half_turn_from_template() {
        let s = FeatureState::new(2.0, 3.0, PI);
        let x = warp_from_template([1.0, 0.0], &s);
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn warp_round_trip() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..1000 {
            let s = FeatureState::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(-PI..PI),
            );
            let x = [rng.random_range(-200.0..200.0), rng.random_range(-200.0..200.0)];
            let back = warp_from_template(warp_to_template(x, &s), &s);
            assert!((back[0] - x[0]).abs() < 1e-12);
            assert!((back[1] - x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_at_center_theta_zero() {
        let s = FeatureState::seed(4.0, 9.0);
        let w = warp_jacobian(s.center(), &s);
        assert_eq!(w, [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]]);
    }

    #[test]
    fn jacobian_theta_column_unit_lever() {
        // dRᵀ/dtheta at 0 is [[0, 1], [-1, 0]], so a lever of (0, 1) gives (1, 0).
        let s = FeatureState::seed(0.0, 0.0);
        let w = warp_jacobian([0.0, 1.0], &s);
        assert_eq!([w[0][2], w[1][2]], [1.0, 0.0]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(3);
        let step = 1e-6;
        for _ in 0..1000 {
            let s = FeatureState::new(
                rng.random_range(-50.0..50.0),
                rng.random_range(-50.0..50.0),
                rng.random_range(-PI..PI),
            );
            let n = [rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0)];
            let w = warp_jacobian(n, &s);
            let mut max_rel = 0.0f64;
            for p in 0..3 {
                let mut lo = s.as_array();
                let mut hi = s.as_array();
                lo[p] -= step;
                hi[p] += step;
                let s_lo = FeatureState { x: lo[0], y: lo[1], theta: lo[2] };
                let s_hi = FeatureState { x: hi[0], y: hi[1], theta: hi[2] };
                let f_lo = warp_to_template(n, &s_lo);
                let f_hi = warp_to_template(n, &s_hi);
                for axis in 0..2 {
                    let fd = (f_hi[axis] - f_lo[axis]) / (2.0 * step);
                    let denom = fd.abs().max(w[axis][p].abs()).max(1.0);
                    max_rel = max_rel.max((w[axis][p] - fd).abs() / denom);
                }
            }
            assert!(max_rel < 1e-5, "finite-difference mismatch {max_rel}");
        }
    }

    #[test]
    fn neighborhood_is_closed_ball() {
        let s = FeatureState::seed(50.0, 50.0);
        assert!(in_neighborhood([50.0, 50.0], &s, 15));
        assert!(in_neighborhood([65.0, 50.0], &s, 15)); // exactly on the boundary
        assert!(!in_neighborhood([65.01, 50.0], &s, 15));
    }

    #[test]
    fn wrap_angle_range_and_equivalence() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) - (-PI / 2.0)).abs() < 1e-12);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..1000 {
            let t: f64 = rng.random_range(-50.0..50.0);
            let w = wrap_angle(t);
            assert!(w > -PI && w <= PI, "wrap({t}) = {w} out of range");
            // Same point on the circle.
            assert!((w.sin() - t.sin()).abs() < 1e-9);
            assert!((w.cos() - t.cos()).abs() < 1e-9);
        }
    }
}
