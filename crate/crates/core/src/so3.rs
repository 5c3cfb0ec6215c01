//! Rotation-group primitives: skew/vee operators, exponential and logarithm
//! maps, orientation error, and Euler-angle reporting.
//!
//! All rotations are stored as 3x3 matrices. Quaternions (w, x, y, z) are
//! accepted and produced only as an exchange format for files and streams.

use nalgebra::{Matrix3, Vector3};
use std::fmt;

/// Frobenius-norm tolerance for the orthonormality check in [`Rotation::from_matrix`].
pub const ORTHONORMALITY_TOL: f64 = 1e-9;

/// Frobenius-norm tolerance on `A + A^T` below which [`vee`] accepts a matrix.
pub const ANTISYMMETRY_TOL: f64 = 1e-8;

/// Unit-norm tolerance for quaternions read from files.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

/// Pitch window (rad) around +-pi/2 treated as gimbal lock in [`euler_xyz`].
pub const GIMBAL_LOCK_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum So3Error {
    /// Matrix failed the `||m^T m - I||_F <= 1e-9` / `det = 1` check.
    NotOrthonormal { deviation: f64 },
    /// `||A + A^T||_F` exceeded the tolerance in [`vee`].
    NotAntisymmetric { deviation: f64 },
    /// Quaternion norm differs from 1 by more than 1e-6.
    BadQuaternionNorm { norm: f64 },
}

impl fmt::Display for So3Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NotOrthonormal { deviation } => {
                write!(f, "matrix is not orthonormal (deviation {deviation:.3e})")
            }
            Self::NotAntisymmetric { deviation } => {
                write!(f, "matrix is not antisymmetric (||A + A^T||_F = {deviation:.3e})")
            }
            Self::BadQuaternionNorm { norm } => {
                write!(f, "quaternion norm {norm:.9} is off unit by more than 1e-6")
            }
        }
    }
}

impl std::error::Error for So3Error {}

/// An element of SO(3), stored as an orthonormal 3x3 matrix with determinant +1.
///
/// Constructors either validate ([`Rotation::from_matrix`]) or project
/// ([`Rotation::renormalized`]); arithmetic on valid rotations stays within
/// floating-point drift of the group, so products are not re-projected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Accepts `m` as-is after checking orthonormality and determinant.
    ///
    /// The matrix bits are preserved exactly, which file round-trips rely on.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, So3Error> {
        let deviation = (m.transpose() * m - Matrix3::identity()).norm();
        let det = m.determinant();
        if deviation > ORTHONORMALITY_TOL || (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(So3Error::NotOrthonormal {
                deviation: deviation.max((det - 1.0).abs()),
            });
        }
        Ok(Rotation(m))
    }

    /// Projects `m` onto SO(3) via the polar factor of its SVD.
    ///
    /// Idempotent on valid rotations up to ~1e-15.
    pub fn renormalized(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd of 3x3 always yields u");
        let v_t = svd.v_t.expect("svd of 3x3 always yields v_t");
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            // Flip the weakest singular direction to land on det +1.
            let mut u_fixed = u;
            u_fixed.column_mut(2).neg_mut();
            r = u_fixed * v_t;
        }
        Rotation(r)
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        debug_assert!(
            (m.transpose() * m - Matrix3::identity()).norm() < 1e-7,
            "internal rotation drifted off SO(3)"
        );
        Rotation(m)
    }

    /// Builds a rotation from a quaternion in (w, x, y, z) order.
    ///
    /// The norm must be within 1e-6 of 1; the quaternion is normalized exactly
    /// before conversion.
    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Result<Self, So3Error> {
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            return Err(So3Error::BadQuaternionNorm { norm });
        }
        let (w, x, y, z) = (w / norm, x / norm, y / norm, z / norm);
        let m = Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        );
        Ok(Rotation(m))
    }

    /// Converts to a unit quaternion (w, x, y, z) with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        let sign = if w < 0.0 { -1.0 } else { 1.0 };
        [
            sign * w / norm,
            sign * x / norm,
            sign * y / norm,
            sign * z / norm,
        ]
    }

    pub fn rot_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Rotates a vector: `self * v`.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

/// Maps a vector to its skew-symmetric cross-product matrix: `skew(v) w = v x w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] for antisymmetric matrices.
pub fn vee(a: &Matrix3<f64>) -> Result<Vector3<f64>, So3Error> {
    let deviation = (a + a.transpose()).norm();
    if deviation > ANTISYMMETRY_TOL {
        return Err(So3Error::NotAntisymmetric { deviation });
    }
    Ok(vee_unchecked(a))
}

fn vee_unchecked(a: &Matrix3<f64>) -> Vector3<f64> {
    // Average the off-diagonal pairs so nearly-antisymmetric input is
    // handled the same as its exact antisymmetric part.
    Vector3::new(
        0.5 * (a[(2, 1)] - a[(1, 2)]),
        0.5 * (a[(0, 2)] - a[(2, 0)]),
        0.5 * (a[(1, 0)] - a[(0, 1)]),
    )
}

/// Antisymmetric part `(A - A^T) / 2`.
pub fn sk(a: &Matrix3<f64>) -> Matrix3<f64> {
    (a - a.transpose()) * 0.5
}

/// Exponential map via the Rodrigues formula.
pub fn exp_so3(omega: &Vector3<f64>) -> Rotation {
    let theta = omega.norm();
    let k = skew(omega);
    // Taylor fallbacks keep the coefficients accurate through theta -> 0.
    let (a, b) = if theta < 1e-8 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Rotation::from_matrix_unchecked(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map; principal branch with `||log|| <= pi`.
pub fn log_so3(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let w = vee_unchecked(m);
    if theta < 1e-6 {
        // w = sin(theta) * axis; correct the sin/theta factor by series.
        return w * (1.0 + theta * theta / 6.0);
    }
    if theta > std::f64::consts::PI - 1e-6 {
        // Near pi the off-diagonal signal vanishes; recover the axis from
        // the dominant diagonal of R + I = 2 a a^T (at theta = pi).
        let b = m + Matrix3::identity();
        let diag = [b[(0, 0)], b[(1, 1)], b[(2, 2)]];
        let i = diag
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let col = b.column(i);
        let mut axis = Vector3::new(col[0], col[1], col[2]).normalize();
        // Keep the branch consistent with the residual antisymmetric part.
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    w * (theta / theta.sin())
}

/// Orientation error `vee(sk(target * actual^T))` between two rotations.
///
/// Zero iff `target == actual`. For `actual = exp(skew(d)) * target` with
/// small `||d||` this evaluates to approximately `-d`, so feeding it back
/// with a positive gain drives `actual` toward `target`.
pub fn rotation_error(target: &Rotation, actual: &Rotation) -> Vector3<f64> {
    let q = target.matrix() * actual.matrix().transpose();
    vee_unchecked(&sk(&q))
}

/// Rotation angle of `a^T b` in `[0, pi]`.
///
/// Evaluated as `atan2(||vee(sk(q))||, (trace(q) - 1) / 2)`, which agrees with
/// the arccos form but stays well conditioned for nearly equal rotations.
pub fn geodesic_angle(a: &Rotation, b: &Rotation) -> f64 {
    let q = a.matrix().transpose() * b.matrix();
    let cos = ((q.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = vee_unchecked(&q).norm();
    sin.atan2(cos).clamp(0.0, std::f64::consts::PI)
}

/// Euler angles for reporting: intrinsic x-y-z rotations, `R = Rx(roll) Ry(pitch) Rz(yaw)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerXyz {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Set when `|pitch|` is within 1e-6 of pi/2; roll is then fixed to 0
    /// and the remaining rotation folded into yaw.
    pub gimbal_lock: bool,
}

/// Extracts intrinsic x-y-z Euler angles. Reporting-only; never used in control math.
pub fn euler_xyz(r: &Rotation) -> EulerXyz {
    let m = r.matrix();
    let pitch = m[(0, 2)].clamp(-1.0, 1.0).asin();
    if std::f64::consts::FRAC_PI_2 - pitch.abs() < GIMBAL_LOCK_TOL {
        return EulerXyz {
            roll: 0.0,
            pitch,
            yaw: m[(1, 0)].atan2(m[(1, 1)]),
            gimbal_lock: true,
        };
    }
    EulerXyz {
        roll: (-m[(1, 2)]).atan2(m[(2, 2)]),
        pitch,
        yaw: (-m[(0, 1)]).atan2(m[(0, 0)]),
        gimbal_lock: false,
    }
}

/// Composes intrinsic x-y-z Euler angles back into a rotation.
pub fn from_euler_xyz(roll: f64, pitch: f64, yaw: f64) -> Rotation {
    Rotation::rot_x(roll) * Rotation::rot_y(pitch) * Rotation::rot_z(yaw)
}
