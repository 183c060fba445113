use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rodrigues rotation about `axis` (need not be unit length) by `angle` radians.
pub fn rotation_from_axis_angle<T: Real>(axis: &Vector3<T>, angle: T) -> Matrix3<T> {
    let n = axis.norm();
    if n == T::zero() {
        return Matrix3::identity();
    }
    let u = axis / n;
    let (s, c) = angle.sin_cos();
    let k = Matrix3::new(
        T::zero(),
        -u.z,
        u.y,
        u.z,
        T::zero(),
        -u.x,
        -u.y,
        u.x,
        T::zero(),
    );
    Matrix3::identity() + k * s + k * k * (T::one() - c)
}

fn quaternion_to_matrix<T: Real>(w: T, x: T, y: T, z: T) -> Matrix3<T> {
    let two = T::lit(2.0);
    let one = T::one();
    Matrix3::new(
        one - two * (y * y + z * z),
        two * (x * y - z * w),
        two * (x * z + y * w),
        two * (x * y + z * w),
        one - two * (x * x + z * z),
        two * (y * z - x * w),
        two * (x * z - y * w),
        two * (y * z + x * w),
        one - two * (x * x + y * y),
    )
}

/// Draws a random rotation whose angle does not exceed `max_angle_deg`.
///
/// At 180° the draw is Haar-uniform over SO(3) (Shoemake's unit quaternion
/// construction). Below 180° the axis is uniform on the sphere and the angle
/// uniform in `[0, max_angle_deg]`.
pub fn random_rotation<T: Real, R: Rng + ?Sized>(
    max_angle_deg: T,
    rng: &mut R,
) -> Result<Matrix3<T>> {
    let max = max_angle_deg.as_f64();
    if !(max > 0.0 && max <= 180.0) {
        return Err(Error::invalid(
            "max_angle_deg",
            format!("must lie in (0, 180], got {max}"),
        ));
    }
    if max >= 180.0 {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        let u3: f64 = rng.random();
        let tau = std::f64::consts::TAU;
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let q = [
            a * (tau * u2).sin(),
            a * (tau * u2).cos(),
            b * (tau * u3).sin(),
            b * (tau * u3).cos(),
        ];
        return Ok(quaternion_to_matrix(
            T::lit(q[3]),
            T::lit(q[0]),
            T::lit(q[1]),
            T::lit(q[2]),
        ));
    }
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n2: f64 = v.norm_squared();
        if n2 > 1e-6 && n2 <= 1.0 {
            break v / n2.sqrt();
        }
    };
    let angle = rng.random_range(0.0..=max).to_radians();
    Ok(rotation_from_axis_angle(&axis.map(T::lit), T::lit(angle)))
}

/// Intrinsic Z-Y-X (yaw, pitch, roll) angles in degrees, `R = Rz(yaw)·Ry(pitch)·Rx(roll)`.
///
/// At gimbal lock (|pitch| = 90°) roll is forced to 0 and the combined angle is
/// reported as yaw.
pub fn euler_angles_deg<T: Real>(r: &Matrix3<T>) -> (T, T, T) {
    let deg = T::lit(180.0) / T::pi();
    let s = (-r[(2, 0)]).max(-T::one()).min(T::one());
    let pitch = s.asin();
    if s.abs() >= T::one() - T::lit(1e-12) {
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        return (yaw * deg, pitch * deg, T::zero());
    }
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    (yaw * deg, pitch * deg, roll * deg)
}

/// Inverse of [`euler_angles_deg`].
pub fn rotation_from_euler_deg<T: Real>(yaw: T, pitch: T, roll: T) -> Matrix3<T> {
    let rad = T::pi() / T::lit(180.0);
    rotation_from_axis_angle(&Vector3::z(), yaw * rad)
        * rotation_from_axis_angle(&Vector3::y(), pitch * rad)
        * rotation_from_axis_angle(&Vector3::x(), roll * rad)
}

/// Geodesic rotation angle of `r` in degrees, in `[0, 180]`.
pub fn rotation_angle_deg<T: Real>(r: &Matrix3<T>) -> T {
    // atan2 of the skew part keeps precision near 0° and 180°
    let c = (r.trace() - T::one()) / T::lit(2.0);
    let skew = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let s = skew.norm() / T::lit(2.0);
    s.atan2(c) * T::lit(180.0) / T::pi()
}
