//! SO(3) and SE2(3) machinery.
//!
//! An [`SE23`] element packs attitude `R`, velocity `v` and position `p` into
//! the 5x5 matrix
//!
//! ```text
//! | R  v  p |
//! | 0  1  0 |
//! | 0  0  1 |
//! ```
//!
//! Tangent vectors are ordered `[xi_R, xi_v, xi_p]`, matching the block order
//! of the filter covariance.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix5, SMatrix, SVector, SymmetricEigen, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat5 = Matrix5<f64>;
pub type Vec9 = SVector<f64, 9>;
pub type Adj9 = SMatrix<f64, 9, 9>;

/// Below this rotation angle (rad) the closed forms switch to series.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Maximum Frobenius deviation of `R^T R` from identity accepted by [`Rot3::log`].
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Cross-product matrix: `skew(w) * u == w.cross(u)`.
pub fn skew(w: &Vec3) -> Mat3 {
    Mat3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of [`skew`] on the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// SO(3) left Jacobian `J_l(phi) = sum_k skew(phi)^k / (k+1)!`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let theta = phi.norm();
    let k = skew(phi);
    let k2 = k * k;
    if theta < SMALL_ANGLE {
        Mat3::identity() + k * 0.5 + k2 / 6.0
    } else {
        let t2 = theta * theta;
        let half = (0.5 * theta).sin();
        Mat3::identity() + k * (2.0 * half * half / t2) + k2 * ((theta - theta.sin()) / (t2 * theta))
    }
}

/// A 3D rotation matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rot3(Mat3);

impl Default for Rot3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rot3 {
    pub fn identity() -> Self {
        Rot3(Mat3::identity())
    }

    /// Wraps a matrix without checking orthonormality.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rot3(m)
    }

    /// Wraps a matrix after checking `R^T R = I` and `det R = 1` within `tol`.
    pub fn try_from_matrix(m: Mat3, tol: f64) -> Result<Self> {
        let r = Rot3(m);
        let dev = r.orthonormality_error().max((m.determinant() - 1.0).abs());
        if !dev.is_finite() || dev > tol {
            return Err(Error::NotOrthonormal { deviation: dev });
        }
        Ok(r)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rot3(self.0.transpose())
    }

    /// Rotation about the world z axis by `yaw` radians.
    pub fn from_yaw(yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Rot3(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// `Ry(pitch) * Rx(roll)`, i.e. the yaw-free attitude used at start-up.
    pub fn from_roll_pitch(roll: f64, pitch: f64) -> Self {
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        Rot3(Mat3::new(
            cp,
            sr * sp,
            cr * sp,
            0.0,
            cr,
            -sr,
            -sp,
            sr * cp,
            cr * cp,
        ))
    }

    /// Rodrigues' formula, with a second-order series below [`SMALL_ANGLE`].
    pub fn exp(phi: &Vec3) -> Self {
        let theta = phi.norm();
        let k = skew(phi);
        let k2 = k * k;
        if theta < SMALL_ANGLE {
            Rot3(Mat3::identity() + k + k2 * 0.5)
        } else {
            let half = (0.5 * theta).sin();
            Rot3(Mat3::identity() + k * (theta.sin() / theta) + k2 * (2.0 * half * half / (theta * theta)))
        }
    }

    /// Rotation vector with angle in `[0, pi]`.
    ///
    /// Fails when `R^T R` deviates from identity by more than
    /// [`ORTHONORMAL_TOL`] in Frobenius norm.
    pub fn log(&self) -> Result<Vec3> {
        let dev = self.orthonormality_error();
        if !dev.is_finite() || dev > ORTHONORMAL_TOL {
            return Err(Error::NotOrthonormal { deviation: dev });
        }
        let r = &self.0;
        let w = vee(r);
        let sin_t = w.norm();
        let cos_t = 0.5 * (r.trace() - 1.0);
        let theta = sin_t.atan2(cos_t);

        if theta < SMALL_ANGLE {
            // theta / sin(theta) ~ 1 + theta^2 / 6
            return Ok(w * (1.0 + theta * theta / 6.0));
        }
        if cos_t > -0.9 {
            return Ok(w * (theta / sin_t));
        }

        // Near pi: (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) a a^T.
        let sym = (r + r.transpose()) * 0.5 - Mat3::identity() * cos_t;
        let i = sym.diagonal().imax();
        let mut axis = sym.column(i).normalize();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        Ok(axis * theta)
    }

    /// `||R^T R - I||_F`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    /// Nearest rotation by symmetric orthogonalization `R (R^T R)^{-1/2}`.
    pub fn reorthonormalize(&self) -> Self {
        let gram = self.0.transpose() * self.0;
        let eig = SymmetricEigen::new(gram);
        let inv_sqrt = Mat3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
        Rot3(self.0 * eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose())
    }

    /// Hamilton unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let rot = nalgebra::Rotation3::from_matrix_unchecked(self.0);
        let q = UnitQuaternion::from_rotation_matrix(&rot);
        let q = q.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Inverse of [`Rot3::to_quaternion`]; the input is normalized first.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Rot3(*uq.to_rotation_matrix().matrix())
    }

    /// Heading of the body x axis projected on the horizontal plane.
    pub fn yaw(&self) -> f64 {
        self.0[(1, 0)].atan2(self.0[(0, 0)])
    }
}

impl Mul for Rot3 {
    type Output = Rot3;
    fn mul(self, rhs: Rot3) -> Rot3 {
        Rot3(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for Rot3 {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Tangent vector of SE2(3).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tangent9 {
    pub xi_r: Vec3,
    pub xi_v: Vec3,
    pub xi_p: Vec3,
}

impl Tangent9 {
    pub fn new(xi_r: Vec3, xi_v: Vec3, xi_p: Vec3) -> Self {
        Tangent9 { xi_r, xi_v, xi_p }
    }

    pub fn from_vector(v: &Vec9) -> Self {
        Tangent9 {
            xi_r: v.fixed_rows::<3>(0).into_owned(),
            xi_v: v.fixed_rows::<3>(3).into_owned(),
            xi_p: v.fixed_rows::<3>(6).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vec9 {
        let mut v = Vec9::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.xi_r);
        v.fixed_rows_mut::<3>(3).copy_from(&self.xi_v);
        v.fixed_rows_mut::<3>(6).copy_from(&self.xi_p);
        v
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// Lie algebra element as a 5x5 matrix.
    pub fn wedge(&self) -> Mat5 {
        let mut m = Mat5::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&self.xi_r));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.xi_v);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.xi_p);
        m
    }
}

/// Extended pose: attitude, velocity and position.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SE23 {
    pub rot: Rot3,
    pub vel: Vec3,
    pub pos: Vec3,
}

impl SE23 {
    pub fn new(rot: Rot3, vel: Vec3, pos: Vec3) -> Self {
        SE23 { rot, vel, pos }
    }

    pub fn identity() -> Self {
        SE23 {
            rot: Rot3::identity(),
            vel: Vec3::zeros(),
            pos: Vec3::zeros(),
        }
    }

    pub fn to_matrix(&self) -> Mat5 {
        let mut m = Mat5::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rot.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.vel);
        m.fixed_view_mut::<3, 1>(0, 4).copy_from(&self.pos);
        m
    }

    /// Reads the blocks of a 5x5 matrix, ignoring the bottom two rows.
    pub fn from_matrix_unchecked(m: &Mat5) -> Self {
        SE23 {
            rot: Rot3::from_matrix_unchecked(m.fixed_view::<3, 3>(0, 0).into_owned()),
            vel: m.fixed_view::<3, 1>(0, 3).into_owned(),
            pos: m.fixed_view::<3, 1>(0, 4).into_owned(),
        }
    }

    /// Closed-form exponential: `R = exp(xi_R)`, `v = J_l xi_v`, `p = J_l xi_p`.
    pub fn exp(xi: &Tangent9) -> Self {
        let jl = left_jacobian(&xi.xi_r);
        SE23 {
            rot: Rot3::exp(&xi.xi_r),
            vel: jl * xi.xi_v,
            pos: jl * xi.xi_p,
        }
    }

    /// Group product, equal to the product of the 5x5 embeddings.
    pub fn compose(&self, other: &SE23) -> SE23 {
        let r = self.rot.matrix();
        SE23 {
            rot: self.rot * other.rot,
            vel: r * other.vel + self.vel,
            pos: r * other.pos + self.pos,
        }
    }

    pub fn inverse(&self) -> SE23 {
        let rt = self.rot.transpose();
        SE23 {
            rot: rt,
            vel: -(rt * self.vel),
            pos: -(rt * self.pos),
        }
    }

    /// `Ad_X`, satisfying `wedge(Ad_X xi) = X wedge(xi) X^{-1}`.
    pub fn adjoint(&self) -> Adj9 {
        let r = self.rot.matrix();
        let mut ad = Adj9::zeros();
        ad.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 3).copy_from(r);
        ad.fixed_view_mut::<3, 3>(6, 6).copy_from(r);
        ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.vel) * r));
        ad.fixed_view_mut::<3, 3>(6, 0).copy_from(&(skew(&self.pos) * r));
        ad
    }

    pub fn is_finite(&self) -> bool {
        self.rot.matrix().iter().chain(self.vel.iter()).chain(self.pos.iter()).all(|x| x.is_finite())
    }
}

impl Mul for SE23 {
    type Output = SE23;
    fn mul(self, rhs: SE23) -> SE23 {
        self.compose(&rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    /// Truncated power series of a square matrix exponential.
    fn series_expm<const N: usize>(a: &SMatrix<f64, N, N>, terms: usize) -> SMatrix<f64, N, N> {
        let mut out = SMatrix::<f64, N, N>::identity();
        let mut term = SMatrix::<f64, N, N>::identity();
        for k in 1..terms {
            term = term * a / k as f64;
            out += term;
        }
        out
    }

    fn arb_vec3(scale: f64) -> impl Strategy<Value = Vec3> {
        (-scale..scale, -scale..scale, -scale..scale).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    fn arb_se23() -> impl Strategy<Value = SE23> {
        (arb_vec3(3.0), arb_vec3(5.0), arb_vec3(20.0))
            .prop_map(|(phi, v, p)| SE23::new(Rot3::exp(&phi), v, p))
    }

    #[test]
    fn skew_examples() {
        let s = skew(&Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(s, Mat3::new(0.0, -3.0, 2.0, 3.0, 0.0, -1.0, -2.0, 1.0, 0.0));
        assert_eq!(skew(&Vec3::zeros()), Mat3::zeros());
        let s = skew(&Vec3::new(0.3, -1.2, 7.0));
        assert_eq!(s.transpose(), -s);
        assert_eq!(vee(&s), Vec3::new(0.3, -1.2, 7.0));
    }

    #[test]
    fn exp_so3_examples() {
        assert_eq!(Rot3::exp(&Vec3::zeros()), Rot3::identity());
        let phi = Vec3::new(0.0, 0.0, FRAC_PI_2);
        let oracle = series_expm(&skew(&phi), 20);
        let expected = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(oracle, expected, epsilon = 1e-12);
        assert_relative_eq!(*Rot3::exp(&phi).matrix(), expected, epsilon = 1e-12);
        let phi = Vec3::new(0.1, 0.2, 0.3);
        let prod = Rot3::exp(&phi) * Rot3::exp(&-phi);
        assert_relative_eq!(*prod.matrix(), Mat3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn log_so3_examples() {
        assert_eq!(Rot3::identity().log().unwrap(), Vec3::zeros());
        let phi = Vec3::new(0.4, -0.1, 0.9);
        assert_relative_eq!(Rot3::exp(&phi).log().unwrap(), phi, epsilon = 1e-10);

        // Quaternion oracle: half-turn about z is q = (0, 0, 0, 1), axis z, angle 2 acos(0).
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(0.0, 0.0, 0.0, 1.0));
        let r = Rot3::from_matrix_unchecked(*q.to_rotation_matrix().matrix());
        let expected = Vec3::new(0.0, 0.0, 2.0 * 0.0f64.acos());
        assert_relative_eq!(r.log().unwrap(), expected, epsilon = 1e-7);
        assert_relative_eq!(expected.z, PI);
    }

    #[test]
    fn log_rejects_non_orthonormal() {
        let r = Rot3::from_matrix_unchecked(Mat3::identity() * 1.01);
        assert!(matches!(r.log(), Err(Error::NotOrthonormal { .. })));
    }

    #[test]
    fn log_near_pi_round_trip() {
        for &theta in &[PI - 1e-3, PI - 1e-6, PI] {
            let axis = Vec3::new(0.3, -0.5, 0.8).normalize();
            let phi = axis * theta;
            let back = Rot3::exp(&phi).log().unwrap();
            assert_relative_eq!(*Rot3::exp(&back).matrix(), *Rot3::exp(&phi).matrix(), epsilon = 1e-9);
        }
    }

    #[test]
    fn small_angle_branches_are_continuous() {
        let dir = Vec3::new(0.6, -0.48, 0.64);
        for &scale in &[0.9, 0.99, 1.01, 1.1] {
            let phi = dir * (SMALL_ANGLE * scale);
            let oracle = series_expm(&skew(&phi), 6);
            assert_relative_eq!(*Rot3::exp(&phi).matrix(), oracle, epsilon = 1e-12);
            let jl_oracle = {
                let k = skew(&phi);
                Mat3::identity() + k / 2.0 + k * k / 6.0 + k * k * k / 24.0
            };
            assert_relative_eq!(left_jacobian(&phi), jl_oracle, epsilon = 1e-12);
            assert_relative_eq!(Rot3::exp(&phi).log().unwrap(), phi, epsilon = 1e-12);
        }
    }

    #[test]
    fn exp_se23_examples() {
        assert_eq!(SE23::exp(&Tangent9::default()), SE23::identity());
        let xi = Tangent9::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0));
        let x = SE23::exp(&xi);
        assert_eq!(x.rot, Rot3::identity());
        assert_eq!(x.vel, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(x.pos, Vec3::new(4.0, 5.0, 6.0));

        let xi = Tangent9::new(Vec3::new(0.0, 0.0, FRAC_PI_2), Vec3::x(), Vec3::zeros());
        let oracle = series_expm(&xi.wedge(), 30);
        assert_relative_eq!(SE23::exp(&xi).to_matrix(), oracle, epsilon = 1e-10);
    }

    #[test]
    fn inverse_and_compose_examples() {
        assert_eq!(SE23::identity().inverse(), SE23::identity());
        let x = SE23::new(Rot3::identity(), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0));
        let xi = x.inverse();
        assert_eq!(xi.vel, Vec3::new(-1.0, 0.0, 0.0));
        assert_eq!(xi.pos, Vec3::new(0.0, -2.0, 0.0));

        assert_eq!(x.compose(&SE23::identity()), x);
        let a = SE23::new(Rot3::identity(), Vec3::x(), Vec3::zeros());
        let b = SE23::new(Rot3::identity(), Vec3::zeros(), Vec3::y());
        let ab = a * b;
        assert_eq!(ab.vel, Vec3::x());
        assert_eq!(ab.pos, Vec3::y());
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(SE23::identity().adjoint(), Adj9::identity());
        let x = SE23::new(Rot3::identity(), Vec3::new(0.0, 0.0, 1.0), Vec3::zeros());
        let ad = x.adjoint();
        assert_eq!(ad.fixed_view::<3, 3>(3, 0).into_owned(), skew(&Vec3::z()));
        assert_eq!(ad.fixed_view::<3, 3>(6, 0).into_owned(), Mat3::zeros());
    }

    #[test]
    fn reorthonormalize_recovers_rotation() {
        let r = Rot3::exp(&Vec3::new(0.3, 1.0, -2.0));
        let noisy = Rot3::from_matrix_unchecked(r.matrix() + Mat3::new(1e-4, 0.0, 2e-4, 0.0, -1e-4, 0.0, 3e-5, 0.0, 0.0));
        let fixed = noisy.reorthonormalize();
        assert!(fixed.orthonormality_error() < 1e-14);
        assert!((fixed.matrix() - r.matrix()).norm() < 1e-3);
    }

    #[test]
    fn quaternion_round_trip() {
        assert_eq!(Rot3::identity().to_quaternion(), [1.0, 0.0, 0.0, 0.0]);
        let r = Rot3::exp(&Vec3::new(2.0, -1.0, 0.5));
        let q = r.to_quaternion();
        assert!(q[0] >= 0.0);
        assert_relative_eq!(*Rot3::from_quaternion(q).matrix(), *r.matrix(), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn group_axioms(a in arb_se23(), b in arb_se23(), c in arb_se23()) {
            let lhs = ((a * b) * c).to_matrix();
            let rhs = (a * (b * c)).to_matrix();
            prop_assert!((lhs - rhs).norm() < 1e-11);
            prop_assert!(((a * a.inverse()).to_matrix() - Mat5::identity()).norm() < 1e-12);
            prop_assert!(((a * b).to_matrix() - a.to_matrix() * b.to_matrix()).norm() < 1e-12);
        }

        #[test]
        fn adjoint_conjugation(x in arb_se23(), r in arb_vec3(2.0), v in arb_vec3(2.0), p in arb_vec3(2.0)) {
            let xi = Tangent9::new(r, v, p);
            let lhs = Tangent9::from_vector(&(x.adjoint() * xi.to_vector())).wedge();
            let rhs = x.to_matrix() * xi.wedge() * x.inverse().to_matrix();
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn adjoint_homomorphism(a in arb_se23(), b in arb_se23()) {
            let lhs = (a * b).adjoint();
            let rhs = a.adjoint() * b.adjoint();
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }

        #[test]
        fn so3_round_trip(dir in arb_vec3(1.0), frac in 0.0..1.0f64) {
            prop_assume!(dir.norm() > 1e-3);
            let phi = dir.normalize() * frac * (PI - 1e-3);
            prop_assert!((Rot3::exp(&phi).log().unwrap() - phi).norm() < 1e-9);
        }

        #[test]
        fn exp_se23_matches_series(r in arb_vec3(1.0), v in arb_vec3(1.0), p in arb_vec3(1.0)) {
            let xi = Tangent9::new(r, v, p);
            prop_assume!(xi.norm() <= 2.0);
            let oracle = series_expm(&xi.wedge(), 30);
            prop_assert!((SE23::exp(&xi).to_matrix() - oracle).norm() < 1e-10);
        }
    }
}
