//! Unit quaternions, split SE(3) poses and the retraction operators used by
//! the solvers.
//!
//! Rotations are perturbed on the left: `q ⊞ ω = exp(ω) * q` and
//! `a ⊟ b = log(a * b⁻¹)`. Translations and plain vectors use ordinary
//! addition. Pose tangents are ordered `[rotation; translation]`.

use std::fmt;
use std::ops::Mul;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Below this angle the exp/log maps switch to Taylor expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

/// Below this angle the SO(3) Jacobians switch to series expansions.
const JACOBIAN_SMALL_ANGLE: f64 = 1e-5;

/// Scalar-first unit quaternion, canonicalized to the `w >= 0` hemisphere.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl fmt::Debug for UnitQuaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Quat(w={}, x={}, y={}, z={})", self.w, self.x, self.y, self.z)
    }
}

impl From<UnitQuaternion> for [f64; 4] {
    fn from(q: UnitQuaternion) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl From<[f64; 4]> for UnitQuaternion {
    fn from(c: [f64; 4]) -> Self {
        UnitQuaternion::new(c[0], c[1], c[2], c[3])
    }
}

impl Default for UnitQuaternion {
    fn default() -> Self {
        Self::identity()
    }
}

impl UnitQuaternion {
    /// Normalizes and canonicalizes the given components.
    ///
    /// Panics on a zero or non-finite quaternion.
    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        assert!(
            n.is_finite() && n > 0.0,
            "quaternion must be finite and non-zero"
        );
        // Already-unit input is kept verbatim so serialization round-trips.
        let n = if (n - 1.0).abs() <= 4.0 * f64::EPSILON { 1.0 } else { n };
        let (mut w, mut x, mut y, mut z) = (w / n, x / n, y / n, z / n);
        let flip = if w != 0.0 {
            w < 0.0
        } else if x != 0.0 {
            x < 0.0
        } else if y != 0.0 {
            y < 0.0
        } else {
            z < 0.0
        };
        if flip {
            w = -w;
            x = -x;
            y = -y;
            z = -z;
        }
        Self { w, x, y, z }
    }

    pub const fn identity() -> Self {
        Self {
            w: 1.0,
            x: 0.0,
            y: 0.0,
            z: 0.0,
        }
    }

    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn norm(&self) -> f64 {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn inverse(&self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    pub fn exp(omega: &Vector3<f64>) -> Self {
        quat_exp(omega)
    }

    pub fn log(&self) -> Vector3<f64> {
        quat_log(self)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Rotates by the inverse rotation.
    pub fn inverse_rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = -self.vector();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Geodesic angle to `other`, in `[0, π]`.
    pub fn angle_to(&self, other: &UnitQuaternion) -> f64 {
        boxminus_rotation(self, other).norm()
    }
}

impl Mul for UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, r: UnitQuaternion) -> UnitQuaternion {
        let l = self;
        UnitQuaternion::new(
            l.w * r.w - l.x * r.x - l.y * r.y - l.z * r.z,
            l.w * r.x + l.x * r.w + l.y * r.z - l.z * r.y,
            l.w * r.y - l.x * r.z + l.y * r.w + l.z * r.x,
            l.w * r.z + l.x * r.y - l.y * r.x + l.z * r.w,
        )
    }
}

impl Mul for &UnitQuaternion {
    type Output = UnitQuaternion;

    fn mul(self, r: &UnitQuaternion) -> UnitQuaternion {
        *self * *r
    }
}

/// Exponential map from an axis-angle vector (radians) to a unit quaternion.
pub fn quat_exp(omega: &Vector3<f64>) -> UnitQuaternion {
    let theta = omega.norm();
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let s = 0.5 * (1.0 - t2 / 24.0);
        UnitQuaternion::new(1.0 - t2 / 8.0, s * omega.x, s * omega.y, s * omega.z)
    } else {
        let half = 0.5 * theta;
        let s = half.sin() / theta;
        UnitQuaternion::new(half.cos(), s * omega.x, s * omega.y, s * omega.z)
    }
}

/// Principal logarithm; the result has norm at most π.
pub fn quat_log(q: &UnitQuaternion) -> Vector3<f64> {
    let v = q.vector();
    let n = v.norm();
    if n < SMALL_ANGLE {
        // w is ~1 here because of canonicalization.
        let w = q.w();
        v * (2.0 / w) * (1.0 - n * n / (3.0 * w * w))
    } else {
        let theta = 2.0 * n.atan2(q.w());
        v * (theta / n)
    }
}

/// Cross-product (hat) matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3): `exp(φ + δ) ≈ exp(J_l(φ) δ) exp(φ)`.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let (a, b) = if theta < JACOBIAN_SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + a * k + b * k * k
}

/// Inverse of [`so3_left_jacobian`].
pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let c = if theta < JACOBIAN_SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - 0.5 * k + c * k * k
}

/// Right Jacobian of SO(3): `exp(φ + δ) ≈ exp(φ) exp(J_r(φ) δ)`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian(&-phi)
}

/// Inverse of [`so3_right_jacobian`].
pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    so3_left_jacobian_inv(&-phi)
}

pub fn boxplus_rotation(q: &UnitQuaternion, omega: &Vector3<f64>) -> UnitQuaternion {
    quat_exp(omega) * *q
}

pub fn boxminus_rotation(a: &UnitQuaternion, b: &UnitQuaternion) -> Vector3<f64> {
    quat_log(&(*a * b.inverse()))
}

/// Split SE(3) element: rotation and translation are retracted independently.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    /// Rigid-body composition `self * other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose {
            rotation: r,
            translation: -r.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn boxplus(&self, tau: &Vector6<f64>) -> Pose {
        let w = tau.fixed_rows::<3>(0).into_owned();
        let v = tau.fixed_rows::<3>(3).into_owned();
        Pose {
            rotation: boxplus_rotation(&self.rotation, &w),
            translation: self.translation + v,
        }
    }

    pub fn boxminus(&self, other: &Pose) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        out.fixed_rows_mut::<3>(0)
            .copy_from(&boxminus_rotation(&self.rotation, &other.rotation));
        out.fixed_rows_mut::<3>(3)
            .copy_from(&(self.translation - other.translation));
        out
    }
}

/// Jacobian of `boxplus(x, τ + δ) ⊟ boxplus(x, τ)` with respect to `δ`.
pub fn dboxplus_dtau_pose(tau: &Vector6<f64>) -> Matrix6<f64> {
    let mut j = Matrix6::identity();
    let w = tau.fixed_rows::<3>(0).into_owned();
    j.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&so3_left_jacobian(&w));
    j
}

/// Discriminates the manifold a variable lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementKind {
    Pose,
    Rotation,
    Vector(usize),
}

impl ElementKind {
    pub fn tangent_dim(&self) -> usize {
        match self {
            ElementKind::Pose => 6,
            ElementKind::Rotation => 3,
            ElementKind::Vector(n) => *n,
        }
    }
}

/// A value on one of the supported manifolds, with dynamically sized tangents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Element {
    Pose(Pose),
    Rotation(UnitQuaternion),
    Vector(DVector<f64>),
}

impl Element {
    pub fn vector3(v: Vector3<f64>) -> Self {
        Element::Vector(DVector::from_column_slice(v.as_slice()))
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            Element::Pose(_) => ElementKind::Pose,
            Element::Rotation(_) => ElementKind::Rotation,
            Element::Vector(v) => ElementKind::Vector(v.len()),
        }
    }

    pub fn tangent_dim(&self) -> usize {
        self.kind().tangent_dim()
    }

    pub fn identity_like(&self) -> Element {
        match self {
            Element::Pose(_) => Element::Pose(Pose::identity()),
            Element::Rotation(_) => Element::Rotation(UnitQuaternion::identity()),
            Element::Vector(v) => Element::Vector(DVector::zeros(v.len())),
        }
    }

    pub fn as_pose(&self) -> Option<&Pose> {
        match self {
            Element::Pose(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_rotation(&self) -> Option<&UnitQuaternion> {
        match self {
            Element::Rotation(q) => Some(q),
            _ => None,
        }
    }

    pub fn as_vector(&self) -> Option<&DVector<f64>> {
        match self {
            Element::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_vector3(&self) -> Option<Vector3<f64>> {
        match self {
            Element::Vector(v) if v.len() == 3 => Some(Vector3::new(v[0], v[1], v[2])),
            _ => None,
        }
    }

    /// `self ⊞ τ`. Panics if `τ` does not match the tangent dimension.
    pub fn boxplus(&self, tau: &DVector<f64>) -> Element {
        assert_eq!(
            tau.len(),
            self.tangent_dim(),
            "tangent dimension mismatch in boxplus"
        );
        match self {
            Element::Pose(p) => Element::Pose(p.boxplus(&Vector6::from_column_slice(tau.as_slice()))),
            Element::Rotation(q) => Element::Rotation(boxplus_rotation(
                q,
                &Vector3::from_column_slice(tau.as_slice()),
            )),
            Element::Vector(v) => Element::Vector(v + tau),
        }
    }

    /// `self ⊟ other`. Panics if the two elements are of different kinds.
    pub fn boxminus(&self, other: &Element) -> DVector<f64> {
        match (self, other) {
            (Element::Pose(a), Element::Pose(b)) => {
                DVector::from_column_slice(a.boxminus(b).as_slice())
            }
            (Element::Rotation(a), Element::Rotation(b)) => {
                DVector::from_column_slice(boxminus_rotation(a, b).as_slice())
            }
            (Element::Vector(a), Element::Vector(b)) => {
                assert_eq!(a.len(), b.len(), "vector dimension mismatch in boxminus");
                a - b
            }
            _ => panic!(
                "boxminus between different kinds: {:?} vs {:?}",
                self.kind(),
                other.kind()
            ),
        }
    }

    /// Jacobian of `(x ⊞ (τ + δ)) ⊟ (x ⊞ τ)` with respect to `δ` at `δ = 0`.
    ///
    /// Does not depend on `x` for the left retraction; the receiver only
    /// selects the kind.
    pub fn dboxplus_dtau(&self, tau: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(tau.len(), self.tangent_dim(), "tangent dimension mismatch");
        match self {
            Element::Pose(_) => {
                let j = dboxplus_dtau_pose(&Vector6::from_column_slice(tau.as_slice()));
                DMatrix::from_column_slice(6, 6, j.as_slice())
            }
            Element::Rotation(_) => {
                let j = so3_left_jacobian(&Vector3::from_column_slice(tau.as_slice()));
                DMatrix::from_column_slice(3, 3, j.as_slice())
            }
            Element::Vector(v) => DMatrix::identity(v.len(), v.len()),
        }
    }

    /// Jacobian of `(x ⊞ δ) ⊟ ref` with respect to `δ` at `δ = 0`, where
    /// `x ⊟ ref = e`. This is the inverse left Jacobian at `e` for rotations.
    pub fn dboxminus_dx(&self, reference: &Element) -> DMatrix<f64> {
        let e = self.boxminus(reference);
        match self {
            Element::Pose(_) => {
                let mut j = DMatrix::identity(6, 6);
                let w = Vector3::new(e[0], e[1], e[2]);
                j.view_mut((0, 0), (3, 3))
                    .copy_from(&so3_left_jacobian_inv(&w));
                j
            }
            Element::Rotation(_) => {
                let j = so3_left_jacobian_inv(&Vector3::from_column_slice(e.as_slice()));
                DMatrix::from_column_slice(3, 3, j.as_slice())
            }
            Element::Vector(v) => DMatrix::identity(v.len(), v.len()),
        }
    }
}
