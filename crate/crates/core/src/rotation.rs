//! Small rotation helpers shared by the vertex chains, the uniform closed form
//! and the mesh reconstruction.

use nalgebra::{Matrix3, Vector3};

/// Rotation by `angle` about the first coordinate axis.
pub fn rot_x(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

/// Derivative of [`rot_x`] with respect to its angle.
pub fn rot_x_prime(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

/// Rotation by `angle` about the third coordinate axis.
pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Cross-product matrix: `hat(v) * w == v.cross(&w)`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues rotation about the unit vector `axis`.
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = hat(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Max-norm of `m - I`.
pub fn deviation_from_identity(m: &Matrix3<f64>) -> f64 {
    (m - Matrix3::identity()).amax()
}

/// Skew components `(r_a, r_b, r_c)` of a near-identity matrix laid out as
///
/// ```text
/// [ 1    -r_a   r_c ]
/// [ r_a   1    -r_b ]
/// [-r_c   r_b   1   ]
/// ```
///
/// using the antisymmetrized average of each entry pair.
pub fn skew_components(m: &Matrix3<f64>) -> [f64; 3] {
    [0.5 * (m[(1, 0)] - m[(0, 1)]), 0.5 * (m[(2, 1)] - m[(1, 2)]), 0.5 * (m[(0, 2)] - m[(2, 0)])]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_angle_matches_coordinate_rotations() {
        let a = 0.37;
        assert!((axis_angle(&Vector3::x(), a) - rot_x(a)).amax() < 1e-15);
        assert!((axis_angle(&Vector3::z(), a) - rot_z(a)).amax() < 1e-15);
    }

    #[test]
    fn rot_x_prime_is_finite_difference() {
        let a = 1.1;
        let h = 1e-6;
        let fd = (rot_x(a + h) - rot_x(a - h)) / (2.0 * h);
        assert!((fd - rot_x_prime(a)).amax() < 1e-9);
    }

    #[test]
    fn skew_of_small_rotations() {
        let t = 1e-4;
        let [ra, rb, rc] = skew_components(&rot_z(t));
        assert!((ra - t.sin()).abs() < 1e-18 && rb == 0.0 && rc == 0.0);
        let [ra, rb, rc] = skew_components(&rot_x(t));
        assert!(ra == 0.0 && (rb - t.sin()).abs() < 1e-18 && rc == 0.0);
    }
}
