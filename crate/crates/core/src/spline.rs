//! Uniform cubic split trajectories in cumulative form.
//!
//! A segment is defined by the window of bases `{B_i, .., B_{i+3}}` with the
//! normalized time `u ∈ [0, 1)` measured between `B_{i+1}` and `B_{i+2}`.
//! Rotations blend as a cumulative product of scaled relative rotations,
//! translations as a cumulative sum of scaled differences.
//!
//! Jacobians are taken with respect to left (world-frame) rotation
//! perturbations and additive translation perturbations of every basis in
//! the window. Rotation outputs are perturbed on the left as well; angular
//! rates and accelerations are body-frame vectors.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{quat_exp, quat_log, skew, so3_left_jacobian_inv, so3_right_jacobian, so3_right_jacobian_inv, Pose, UnitQuaternion};

/// Number of bases contributing to one segment.
pub const ORDER: usize = 4;

/// Relative tolerance used to snap query times onto knots.
const KNOT_SNAP: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplineError {
    #[error("time {t} outside of the spline domain [{start}, {end})")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("a spline needs at least {ORDER} bases, got {0}")]
    TooFewBases(usize),
    #[error("knot interval must be positive, got {0}")]
    BadInterval(f64),
    #[error("basis times are not uniformly spaced at row {0}")]
    NonUniform(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum SplineKind {
    /// Approximating uniform cubic B-spline.
    #[default]
    #[serde(rename = "bspline")]
    BSpline,
    /// Interpolating cubic (Catmull–Rom) spline.
    #[serde(rename = "zspline")]
    ZSpline,
}

impl SplineKind {
    pub fn name(&self) -> &'static str {
        match self {
            SplineKind::BSpline => "bspline",
            SplineKind::ZSpline => "zspline",
        }
    }
}

impl std::str::FromStr for SplineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bspline" | "b" | "b-spline" => Ok(SplineKind::BSpline),
            "zspline" | "z" | "z-spline" => Ok(SplineKind::ZSpline),
            other => Err(format!("unknown spline kind '{other}'")),
        }
    }
}

/// Cumulative blending coefficients: row `j` holds the coefficients of
/// `λ_j(u)` over the monomials `(1, u, u², u³)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendingMatrix {
    kind: SplineKind,
    rows: [[f64; 4]; 4],
}

impl BlendingMatrix {
    pub fn new(kind: SplineKind) -> Self {
        let rows = match kind {
            SplineKind::BSpline => [
                [1.0, 0.0, 0.0, 0.0],
                [5.0 / 6.0, 3.0 / 6.0, -3.0 / 6.0, 1.0 / 6.0],
                [1.0 / 6.0, 3.0 / 6.0, 3.0 / 6.0, -2.0 / 6.0],
                [0.0, 0.0, 0.0, 1.0 / 6.0],
            ],
            // Catmull–Rom basis telescoped into cumulative form.
            SplineKind::ZSpline => [
                [1.0, 0.0, 0.0, 0.0],
                [1.0, 0.5, -1.0, 0.5],
                [0.0, 0.5, 1.5, -1.0],
                [0.0, 0.0, -0.5, 0.5],
            ],
        };
        Self { kind, rows }
    }

    pub fn kind(&self) -> SplineKind {
        self.kind
    }

    pub fn rows(&self) -> &[[f64; 4]; 4] {
        &self.rows
    }

    /// `d`-th derivative of `λ_j` with respect to `u`, for `j` in `0..4`.
    pub fn lambda_du(&self, j: usize, u: f64, d: usize) -> f64 {
        let c = &self.rows[j];
        match d {
            0 => c[0] + u * (c[1] + u * (c[2] + u * c[3])),
            1 => c[1] + u * (2.0 * c[2] + u * 3.0 * c[3]),
            2 => 2.0 * c[2] + 6.0 * c[3] * u,
            3 => 6.0 * c[3],
            _ => 0.0,
        }
    }

    /// `(λ₁, λ₂, λ₃)` or their `d`-th time derivatives for knot interval `dt`.
    pub fn lambdas(&self, u: f64, d: usize, dt: f64) -> Vector3<f64> {
        let scale = dt.powi(-(d as i32));
        Vector3::new(
            self.lambda_du(1, u, d),
            self.lambda_du(2, u, d),
            self.lambda_du(3, u, d),
        ) * scale
    }

    /// Conventional (non-cumulative) weights of the four bases.
    pub fn weights(&self, u: f64, d: usize, dt: f64) -> [f64; 4] {
        let l = self.lambdas(u, d, dt);
        let l0 = if d == 0 { 1.0 } else { 0.0 };
        [l0 - l[0], l[0] - l[1], l[1] - l[2], l[2]]
    }
}

/// One control point of the trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Basis {
    pub time: f64,
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl Basis {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.translation)
    }
}

/// Pose plus first and second time derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionState {
    pub pose: Pose,
    /// Body-frame angular velocity (rad/s).
    pub angular_velocity: Vector3<f64>,
    /// World-frame linear velocity (m/s).
    pub linear_velocity: Vector3<f64>,
    /// Body-frame angular acceleration (rad/s²).
    pub angular_acceleration: Vector3<f64>,
    /// World-frame linear acceleration (m/s²).
    pub linear_acceleration: Vector3<f64>,
}

/// Which evaluated quantity a Jacobian refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianTarget {
    /// 6×6 blocks, rows `[rotation; translation]`.
    Pose,
    /// 3×3 blocks against the basis translation.
    Translation,
    /// 3×3 blocks against the basis rotation.
    Rotation,
}

/// Derivatives of a segment evaluation with respect to its four bases.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentJacobians {
    /// Output rotation (left perturbation) w.r.t. each basis rotation.
    pub rotation: [Matrix3<f64>; ORDER],
    /// Body angular velocity w.r.t. each basis rotation.
    pub angular_velocity: [Matrix3<f64>; ORDER],
    /// Body angular acceleration w.r.t. each basis rotation.
    pub angular_acceleration: [Matrix3<f64>; ORDER],
    /// Scalar weights `∂p/∂T_k`, `∂ṗ/∂T_k`, `∂p̈/∂T_k` (times identity).
    pub translation: [f64; ORDER],
    pub linear_velocity: [f64; ORDER],
    pub linear_acceleration: [f64; ORDER],
}

/// Full result of evaluating a single segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEval {
    pub motion: MotionState,
    pub jacobians: Option<SegmentJacobians>,
}

/// Evaluates the segment spanned by `bases` at normalized time `u`.
///
/// `order` selects how many time derivatives are computed (0, 1 or 2);
/// uncomputed derivatives are reported as zero.
pub fn evaluate_segment(
    bases: [&Pose; ORDER],
    u: f64,
    dt: f64,
    blending: &BlendingMatrix,
    order: usize,
    with_jacobians: bool,
) -> SegmentEval {
    let lam = blending.lambdas(u, 0, dt);
    let dlam = blending.lambdas(u, 1, dt);
    let ddlam = blending.lambdas(u, 2, dt);

    // Translation.
    let w0 = blending.weights(u, 0, dt);
    let w1 = blending.weights(u, 1, dt);
    let w2 = blending.weights(u, 2, dt);
    let mut p = Vector3::zeros();
    let mut v = Vector3::zeros();
    let mut a = Vector3::zeros();
    for k in 0..ORDER {
        p += w0[k] * bases[k].translation;
        if order >= 1 {
            v += w1[k] * bases[k].translation;
        }
        if order >= 2 {
            a += w2[k] * bases[k].translation;
        }
    }

    // Rotation: q = Q_0 Π_j exp(λ_j d_j), d_j = log(Q_{j-1}⁻¹ Q_j).
    let mut d = [Vector3::zeros(); 3];
    let mut big_a = [Matrix3::identity(); 3];
    let mut a_quat = [UnitQuaternion::identity(); 3];
    for j in 0..3 {
        let rel = bases[j].rotation.inverse() * bases[j + 1].rotation;
        d[j] = quat_log(&rel);
        a_quat[j] = quat_exp(&(lam[j] * d[j]));
        big_a[j] = a_quat[j].rotation_matrix();
    }
    let q = bases[0].rotation * a_quat[0] * a_quat[1] * a_quat[2];

    let mut omega = Vector3::zeros();
    let mut alpha = Vector3::zeros();
    // Per-stage intermediates kept for the Jacobian recursion.
    let mut omega_prev = [Vector3::zeros(); 3];
    let mut alpha_prev = [Vector3::zeros(); 3];
    if order >= 1 {
        for j in 0..3 {
            omega_prev[j] = omega;
            alpha_prev[j] = alpha;
            let at = big_a[j].transpose();
            let wj = at * omega;
            let vj = dlam[j] * d[j];
            if order >= 2 {
                alpha = at * alpha + wj.cross(&vj) + ddlam[j] * d[j];
            }
            omega = wj + vj;
        }
    }

    let motion = MotionState {
        pose: Pose::new(q, p),
        angular_velocity: omega,
        linear_velocity: v,
        angular_acceleration: alpha,
        linear_acceleration: a,
    };

    let jacobians = with_jacobians.then(|| {
        // ∂d_j/∂β_j and ∂d_j/∂β_{j-1} for body perturbations Q_k exp(β_k).
        let dd_next: [Matrix3<f64>; 3] = std::array::from_fn(|j| so3_right_jacobian_inv(&d[j]));
        let dd_prev: [Matrix3<f64>; 3] = std::array::from_fn(|j| -so3_left_jacobian_inv(&d[j]));
        // K_j = λ_j J_r(λ_j d_j): exp(λ_j (d_j + Δ)) ≈ A_j exp(K_j Δ).
        let kmat: [Matrix3<f64>; 3] =
            std::array::from_fn(|j| lam[j] * so3_right_jacobian(&(lam[j] * d[j])));

        // Orientation, body frame: sensitivities to Δd_j and β_0.
        let mut tail = Matrix3::identity(); // (A_{j+1} .. A_3)ᵀ
        let mut g = [Matrix3::zeros(); 3];
        for j in (0..3).rev() {
            g[j] = tail * kmat[j];
            tail *= big_a[j].transpose();
        }
        let full_tail = tail; // (A_1 A_2 A_3)ᵀ

        // Angular velocity/acceleration sensitivities to each Δd_m.
        let mut wsens = [Matrix3::zeros(); 3];
        let mut asens = [Matrix3::zeros(); 3];
        if order >= 1 {
            for j in 0..3 {
                let at = big_a[j].transpose();
                let wj = at * omega_prev[j];
                let vj = dlam[j] * d[j];
                let mut dw = [Matrix3::zeros(); 3];
                for m in 0..3 {
                    dw[m] = at * wsens[m];
                }
                dw[j] += skew(&wj) * kmat[j];
                if order >= 2 {
                    let aa = at * alpha_prev[j];
                    let mut da = [Matrix3::zeros(); 3];
                    for m in 0..3 {
                        da[m] = at * asens[m] - skew(&vj) * dw[m];
                    }
                    da[j] += skew(&aa) * kmat[j]
                        + dlam[j] * skew(&wj)
                        + ddlam[j] * Matrix3::identity();
                    asens = da;
                }
                wsens[..3].copy_from_slice(&dw[..3]);
                wsens[j] += dlam[j] * Matrix3::identity();
            }
        }

        let rq = q.rotation_matrix();
        let mut rotation = [Matrix3::zeros(); ORDER];
        let mut angular_velocity = [Matrix3::zeros(); ORDER];
        let mut angular_acceleration = [Matrix3::zeros(); ORDER];
        for k in 0..ORDER {
            // Σ over the relative rotations touching basis k.
            let mut ori = if k == 0 { full_tail } else { Matrix3::zeros() };
            let mut om = Matrix3::zeros();
            let mut al = Matrix3::zeros();
            if k >= 1 {
                let j = k - 1;
                ori += g[j] * dd_next[j];
                om += wsens[j] * dd_next[j];
                al += asens[j] * dd_next[j];
            }
            if k < 3 {
                let j = k;
                ori += g[j] * dd_prev[j];
                om += wsens[j] * dd_prev[j];
                al += asens[j] * dd_prev[j];
            }
            let rk_t = bases[k].rotation.rotation_matrix().transpose();
            rotation[k] = rq * ori * rk_t;
            angular_velocity[k] = om * rk_t;
            angular_acceleration[k] = al * rk_t;
        }
        SegmentJacobians {
            rotation,
            angular_velocity,
            angular_acceleration,
            translation: w0,
            linear_velocity: w1,
            linear_acceleration: w2,
        }
    });

    SegmentEval { motion, jacobians }
}

/// Uniform cubic split trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineTrajectory {
    start_time: f64,
    interval: f64,
    bases: Vec<Pose>,
    blending: BlendingMatrix,
}

impl SplineTrajectory {
    /// Builds a trajectory whose basis `i` sits at `start_time + i * interval`.
    pub fn new(
        kind: SplineKind,
        start_time: f64,
        interval: f64,
        bases: Vec<Pose>,
    ) -> Result<Self, SplineError> {
        if !(interval > 0.0 && interval.is_finite()) {
            return Err(SplineError::BadInterval(interval));
        }
        if bases.len() < ORDER {
            return Err(SplineError::TooFewBases(bases.len()));
        }
        Ok(Self {
            start_time,
            interval,
            bases,
            blending: BlendingMatrix::new(kind),
        })
    }

    /// Builds a trajectory from explicit time-stamped bases, checking that
    /// the spacing is uniform.
    pub fn from_bases(kind: SplineKind, bases: &[Basis]) -> Result<Self, SplineError> {
        if bases.len() < ORDER {
            return Err(SplineError::TooFewBases(bases.len()));
        }
        let t0 = bases[0].time;
        let dt = bases[1].time - t0;
        if !(dt > 0.0) {
            return Err(SplineError::BadInterval(dt));
        }
        for (i, b) in bases.iter().enumerate() {
            let expected = t0 + i as f64 * dt;
            if (b.time - expected).abs() > 1e-6 * dt.max(1.0) {
                return Err(SplineError::NonUniform(i));
            }
        }
        Self::new(kind, t0, dt, bases.iter().map(Basis::pose).collect())
    }

    pub fn kind(&self) -> SplineKind {
        self.blending.kind
    }

    pub fn blending(&self) -> &BlendingMatrix {
        &self.blending
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn interval(&self) -> f64 {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn bases(&self) -> &[Pose] {
        &self.bases
    }

    pub fn bases_mut(&mut self) -> &mut [Pose] {
        &mut self.bases
    }

    pub fn basis_time(&self, i: usize) -> f64 {
        self.start_time + i as f64 * self.interval
    }

    pub fn basis(&self, i: usize) -> Basis {
        Basis {
            time: self.basis_time(i),
            rotation: self.bases[i].rotation,
            translation: self.bases[i].translation,
        }
    }

    pub fn to_bases(&self) -> Vec<Basis> {
        (0..self.len()).map(|i| self.basis(i)).collect()
    }

    /// Half-open query domain `[start, end)`.
    pub fn domain(&self) -> (f64, f64) {
        (
            self.basis_time(1),
            self.basis_time(self.len() - 2),
        )
    }

    /// Segment index and normalized time for `t`.
    pub fn locate(&self, t: f64) -> Result<(usize, f64), SplineError> {
        let (start, end) = self.domain();
        let out = || SplineError::OutOfDomain { t, start, end };
        if !t.is_finite() {
            return Err(out());
        }
        let mut s = (t - self.start_time) / self.interval - 1.0;
        let nearest = s.round();
        if (s - nearest).abs() <= KNOT_SNAP * nearest.abs().max(1.0) {
            s = nearest;
        }
        if s < 0.0 {
            return Err(out());
        }
        let i = s.floor();
        let u = s - i;
        let i = i as usize;
        if i + ORDER > self.len() {
            return Err(out());
        }
        Ok((i, u))
    }

    fn window(&self, i: usize) -> [&Pose; ORDER] {
        std::array::from_fn(|k| &self.bases[i + k])
    }

    pub fn evaluate(
        &self,
        t: f64,
        order: usize,
        with_jacobians: bool,
    ) -> Result<(usize, SegmentEval), SplineError> {
        let (i, u) = self.locate(t)?;
        Ok((
            i,
            evaluate_segment(self.window(i), u, self.interval, &self.blending, order, with_jacobians),
        ))
    }

    /// Position (`d = 0`), velocity (`d = 1`) or acceleration (`d = 2`).
    pub fn eval_translation(&self, t: f64, d: usize) -> Result<Vector3<f64>, SplineError> {
        let (i, u) = self.locate(t)?;
        let w = self.blending.weights(u, d, self.interval);
        Ok((0..ORDER).fold(Vector3::zeros(), |acc, k| {
            acc + w[k] * self.bases[i + k].translation
        }))
    }

    pub fn eval_rotation(&self, t: f64) -> Result<UnitQuaternion, SplineError> {
        Ok(self.evaluate(t, 0, false)?.1.motion.pose.rotation)
    }

    /// Body-frame angular velocity (`d = 1`) or acceleration (`d = 2`).
    pub fn eval_angular(&self, t: f64, d: usize) -> Result<Vector3<f64>, SplineError> {
        let m = self.evaluate(t, d, false)?.1.motion;
        Ok(match d {
            1 => m.angular_velocity,
            2 => m.angular_acceleration,
            _ => Vector3::zeros(),
        })
    }

    pub fn eval_pose(&self, t: f64) -> Result<Pose, SplineError> {
        Ok(self.evaluate(t, 0, false)?.1.motion.pose)
    }

    pub fn eval_motion(&self, t: f64) -> Result<MotionState, SplineError> {
        Ok(self.evaluate(t, 2, false)?.1.motion)
    }

    /// Jacobians of the evaluated pose, translation or rotation with respect
    /// to the four bases of the owning segment. Returns the index of the
    /// first basis and one dense block per basis.
    pub fn jacobian_wrt_bases(
        &self,
        t: f64,
        which: JacobianTarget,
    ) -> Result<(usize, [nalgebra::DMatrix<f64>; ORDER]), SplineError> {
        let (i, eval) = self.evaluate(t, 0, true)?;
        let jac = eval.jacobians.expect("requested jacobians");
        let blocks = std::array::from_fn(|k| match which {
            JacobianTarget::Rotation => {
                nalgebra::DMatrix::from_column_slice(3, 3, jac.rotation[k].as_slice())
            }
            JacobianTarget::Translation => {
                nalgebra::DMatrix::identity(3, 3) * jac.translation[k]
            }
            JacobianTarget::Pose => {
                let mut m = nalgebra::DMatrix::zeros(6, 6);
                m.view_mut((0, 0), (3, 3)).copy_from(&jac.rotation[k]);
                m.view_mut((3, 3), (3, 3))
                    .copy_from(&(Matrix3::identity() * jac.translation[k]));
                m
            }
        });
        Ok((i, blocks))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::boxminus_rotation;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bases(rng: &mut ChaCha8Rng, n: usize, step: f64) -> Vec<Pose> {
        let mut out = Vec::with_capacity(n);
        let mut q = quat_exp(&Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        for _ in 0..n {
            let dq = Vector3::new(
                rng.random_range(-step..step),
                rng.random_range(-step..step),
                rng.random_range(-step..step),
            );
            q = quat_exp(&dq) * q;
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            out.push(Pose::new(q, p));
        }
        out
    }

    fn traj(kind: SplineKind, bases: Vec<Pose>) -> SplineTrajectory {
        SplineTrajectory::new(kind, 0.5, 0.1, bases).unwrap()
    }

    /// Cox–de Boor recursion on the integer knot vector.
    fn de_boor_basis(i: usize, p: usize, x: f64) -> f64 {
        let i_f = i as f64;
        if p == 0 {
            return if x >= i_f && x < i_f + 1.0 { 1.0 } else { 0.0 };
        }
        let p_f = p as f64;
        let left = (x - i_f) / p_f * de_boor_basis(i, p - 1, x);
        let right = (i_f + p_f + 1.0 - x) / p_f * de_boor_basis(i + 1, p - 1, x);
        left + right
    }

    #[test]
    fn bspline_lambdas_at_zero() {
        let b = BlendingMatrix::new(SplineKind::BSpline);
        let l = b.lambdas(0.0, 0, 1.0);
        assert_relative_eq!(l, Vector3::new(5.0 / 6.0, 1.0 / 6.0, 0.0), epsilon = 1e-15);
        let z = BlendingMatrix::new(SplineKind::ZSpline);
        assert_eq!(z.lambdas(0.0, 0, 1.0), Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(z.lambdas(1.0, 0, 1.0), Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn lambda_zero_row_is_one() {
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            let b = BlendingMatrix::new(kind);
            for k in 0..20 {
                let u = k as f64 / 20.0;
                assert_eq!(b.lambda_du(0, u, 0), 1.0);
            }
        }
    }

    #[test]
    fn cumulative_bspline_matches_de_boor() {
        let b = BlendingMatrix::new(SplineKind::BSpline);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let u: f64 = rng.random_range(0.0..1.0);
            let w = b.weights(u, 0, 1.0);
            for k in 0..4 {
                let oracle = de_boor_basis(k, 3, 3.0 + u);
                assert!((w[k] - oracle).abs() < 1e-12, "k={k} u={u}");
            }
        }
    }

    #[test]
    fn lambda_derivatives_match_finite_differences() {
        let dt = 0.1;
        let h = 1e-6;
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            let b = BlendingMatrix::new(kind);
            for k in 1..10 {
                let u = k as f64 / 10.0;
                for d in 0..2 {
                    let fd = (b.lambdas(u + h, d, dt) - b.lambdas(u - h, d, dt)) / (2.0 * h * dt);
                    let an = b.lambdas(u, d + 1, dt);
                    assert!((fd - an).amax() < 1e-8 * an.amax().max(1.0) * 10f64.powi(d as i32), "{kind:?} d={d}");
                }
            }
        }
    }

    #[test]
    fn locate_examples() {
        let bases = vec![Pose::identity(); 8];
        let tr = traj(SplineKind::BSpline, bases);
        assert_eq!(tr.locate(0.6).unwrap(), (0, 0.0));
        let (start, end) = tr.domain();
        assert_relative_eq!(start, 0.6, epsilon = 1e-15);
        assert_relative_eq!(end, 1.1, epsilon = 1e-12);
        let (i, u) = tr.locate(end - 1e-7).unwrap();
        assert_eq!(i, 4);
        assert!(u > 0.99 && u < 1.0);
        assert!(matches!(tr.locate(end), Err(SplineError::OutOfDomain { .. })));
        assert!(tr.locate(start - 1e-6).is_err());
        assert!(tr.locate(f64::NAN).is_err());
        // knot boundary belongs to the right segment
        assert_eq!(tr.locate(0.8).unwrap(), (2, 0.0));
    }

    #[test]
    fn locate_agrees_with_linear_scan() {
        let tr = traj(SplineKind::BSpline, vec![Pose::identity(); 30]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (start, end) = tr.domain();
        for _ in 0..1000 {
            let t = rng.random_range(start..end);
            let mut oracle = None;
            for i in 0..tr.len() - 3 {
                let lo = tr.basis_time(i + 1);
                let hi = tr.basis_time(i + 2);
                if t >= lo && t < hi {
                    oracle = Some((i, (t - lo) / tr.interval()));
                }
            }
            let (oi, ou) = oracle.unwrap();
            let (i, u) = tr.locate(t).unwrap();
            if (ou - 0.0).abs() > 1e-8 && (ou - 1.0).abs() > 1e-8 {
                assert_eq!(i, oi);
                assert!((u - ou).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_spline() {
        let p = Pose::new(quat_exp(&Vector3::new(0.3, -0.2, 0.1)), Vector3::new(1.0, 2.0, 3.0));
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            let tr = traj(kind, vec![p; 6]);
            let m = tr.eval_motion(0.75).unwrap();
            assert!(m.pose.boxminus(&p).norm() < 1e-12);
            assert!(m.linear_velocity.norm() < 1e-12);
            assert!(m.linear_acceleration.norm() < 1e-10);
            assert!(m.angular_velocity.norm() < 1e-12);
            assert!(m.angular_acceleration.norm() < 1e-10);
        }
    }

    #[test]
    fn linear_precision() {
        let v = Vector3::new(0.5, -1.0, 2.0);
        let dt = 0.1;
        let bases: Vec<Pose> = (0..8)
            .map(|i| Pose::new(UnitQuaternion::identity(), v * (i as f64 * dt)))
            .collect();
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            let tr = traj(kind, bases.clone());
            for k in 0..20 {
                let t = 0.6 + k as f64 * 0.024;
                assert_relative_eq!(tr.eval_translation(t, 1).unwrap(), v, epsilon = 1e-10);
                assert!(tr.eval_translation(t, 2).unwrap().norm() < 1e-8);
            }
        }
    }

    #[test]
    fn identity_rotation_spline() {
        let tr = traj(SplineKind::BSpline, vec![Pose::identity(); 6]);
        assert_eq!(tr.eval_rotation(0.7).unwrap(), UnitQuaternion::identity());
        assert_eq!(tr.eval_angular(0.7, 1).unwrap(), Vector3::zeros());
    }

    #[test]
    fn zspline_interpolates_bases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bases = random_bases(&mut rng, 12, 0.6);
        let tr = traj(SplineKind::ZSpline, bases.clone());
        for i in 1..tr.len() - 2 {
            let t = tr.basis_time(i);
            if tr.locate(t).is_err() {
                continue;
            }
            let p = tr.eval_pose(t).unwrap();
            assert!(boxminus_rotation(&p.rotation, &bases[i].rotation).norm() < 1e-12);
            assert!((p.translation - bases[i].translation).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_relative_rotation_zspline_hits_knots() {
        let r = quat_exp(&Vector3::new(0.1, 0.2, -0.05));
        let mut q = UnitQuaternion::identity();
        let bases: Vec<Pose> = (0..8)
            .map(|_| {
                q = q * r;
                Pose::new(q, Vector3::zeros())
            })
            .collect();
        let tr = traj(SplineKind::ZSpline, bases.clone());
        for i in 1..5 {
            let q = tr.eval_rotation(tr.basis_time(i)).unwrap();
            assert!(boxminus_rotation(&q, &bases[i].rotation).norm() < 1e-12);
        }
    }

    fn fd_motion(tr: &SplineTrajectory, t: f64, h: f64) -> (Vector3<f64>, Vector3<f64>) {
        // body angular velocity via log increments, accel via differences of velocity
        let qm = tr.eval_rotation(t - h).unwrap();
        let qp = tr.eval_rotation(t + h).unwrap();
        let w = quat_log(&(qm.inverse() * qp)) / (2.0 * h);
        let wp = tr.eval_angular(t + h, 1).unwrap();
        let wm = tr.eval_angular(t - h, 1).unwrap();
        (w, (wp - wm) / (2.0 * h))
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            for _ in 0..50 {
                let tr = traj(kind, random_bases(&mut rng, 7, 0.8));
                let (s, e) = tr.domain();
                let t = rng.random_range(s + 1e-3..e - 1e-3);
                let (_, seg) = tr.evaluate(t, 2, false).unwrap();
                let (w_fd, a_fd) = fd_motion(&tr, t, 1e-6);
                let m = seg.motion;
                assert!((m.angular_velocity - w_fd).amax() < 1e-5 * m.angular_velocity.amax().max(1.0));
                assert!((m.angular_acceleration - a_fd).amax() < 1e-4 * m.angular_acceleration.amax().max(1.0));
                let h = 1e-6;
                let vfd = (tr.eval_translation(t + h, 0).unwrap() - tr.eval_translation(t - h, 0).unwrap()) / (2.0 * h);
                let afd = (tr.eval_translation(t + h, 1).unwrap() - tr.eval_translation(t - h, 1).unwrap()) / (2.0 * h);
                assert!((m.linear_velocity - vfd).amax() < 1e-6 * m.linear_velocity.amax().max(1.0));
                assert!((m.linear_acceleration - afd).amax() < 1e-6 * m.linear_acceleration.amax().max(1.0));
            }
        }
    }

    #[test]
    fn continuity_across_knots() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            let tr = traj(kind, random_bases(&mut rng, 10, 0.7));
            let bl = tr.blending();
            for i in 0..tr.len() - 4 {
                let left = evaluate_segment(std::array::from_fn(|k| &tr.bases()[i + k]), 1.0, tr.interval(), bl, 2, false).motion;
                let right = evaluate_segment(std::array::from_fn(|k| &tr.bases()[i + 1 + k]), 0.0, tr.interval(), bl, 2, false).motion;
                assert!(left.pose.boxminus(&right.pose).norm() < 1e-10);
                assert!((left.linear_velocity - right.linear_velocity).norm() < 1e-8);
                assert!((left.angular_velocity - right.angular_velocity).norm() < 1e-8);
                if kind == SplineKind::BSpline {
                    assert!((left.linear_acceleration - right.linear_acceleration).norm() < 1e-8);
                    assert!((left.angular_acceleration - right.angular_acceleration).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn global_frame_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let bases = random_bases(&mut rng, 8, 0.5);
        let r = quat_exp(&Vector3::new(0.4, -1.1, 0.7));
        let rotated: Vec<Pose> = bases
            .iter()
            .map(|b| Pose::new(r * b.rotation, b.translation))
            .collect();
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            let a = traj(kind, bases.clone());
            let b = traj(kind, rotated.clone());
            for k in 0..30 {
                let t = 0.6 + k as f64 * 0.013;
                let qa = a.eval_rotation(t).unwrap();
                let qb = b.eval_rotation(t).unwrap();
                assert!(boxminus_rotation(&qb, &(r * qa)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn translation_jacobian_blocks_sum_to_identity() {
        let tr = traj(SplineKind::BSpline, vec![Pose::identity(); 6]);
        let (_, blocks) = tr.jacobian_wrt_bases(0.73, JacobianTarget::Translation).unwrap();
        let (i, u) = tr.locate(0.73).unwrap();
        assert_eq!(i, 1);
        let l = tr.blending().lambdas(u, 0, 0.1);
        let expected = [1.0 - l[0], l[0] - l[1], l[1] - l[2], l[2]];
        let mut sum = nalgebra::DMatrix::zeros(3, 3);
        for k in 0..4 {
            assert_relative_eq!(blocks[k], nalgebra::DMatrix::identity(3, 3) * expected[k], epsilon = 1e-15);
            sum += &blocks[k];
        }
        assert_relative_eq!(sum, nalgebra::DMatrix::identity(3, 3), epsilon = 1e-14);
    }

    #[test]
    fn rotation_jacobian_blocks_sum_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bases in [vec![Pose::identity(); 6], random_bases(&mut rng, 6, 0.6)] {
            for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
                let tr = traj(kind, bases.clone());
                let (_, blocks) = tr.jacobian_wrt_bases(0.71, JacobianTarget::Rotation).unwrap();
                let sum = blocks.iter().fold(nalgebra::DMatrix::zeros(3, 3), |a, b| a + b);
                assert!((sum - nalgebra::DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn all_jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let h = 1e-6;
        for kind in [SplineKind::BSpline, SplineKind::ZSpline] {
            for _ in 0..60 {
                let bases = random_bases(&mut rng, 4, 0.9);
                let u: f64 = rng.random_range(0.0..1.0);
                let dt = 0.1;
                let bl = BlendingMatrix::new(kind);
                let refs: [&Pose; 4] = std::array::from_fn(|k| &bases[k]);
                let base = evaluate_segment(refs, u, dt, &bl, 2, true);
                let jac = base.jacobians.unwrap();
                for k in 0..4 {
                    for c in 0..6 {
                        let mut plus = bases.clone();
                        let mut minus = bases.clone();
                        let mut e = Vector6::zeros();
                        e[c] = h;
                        plus[k] = plus[k].boxplus(&e);
                        minus[k] = minus[k].boxplus(&-e);
                        let mp = evaluate_segment(std::array::from_fn(|m| &plus[m]), u, dt, &bl, 2, false).motion;
                        let mm = evaluate_segment(std::array::from_fn(|m| &minus[m]), u, dt, &bl, 2, false).motion;
                        let rot_fd = (boxminus_rotation(&mp.pose.rotation, &base.motion.pose.rotation)
                            - boxminus_rotation(&mm.pose.rotation, &base.motion.pose.rotation))
                            / (2.0 * h);
                        let tr_fd = (mp.pose.translation - mm.pose.translation) / (2.0 * h);
                        let w_fd = (mp.angular_velocity - mm.angular_velocity) / (2.0 * h);
                        let a_fd = (mp.angular_acceleration - mm.angular_acceleration) / (2.0 * h);
                        let v_fd = (mp.linear_velocity - mm.linear_velocity) / (2.0 * h);
                        let la_fd = (mp.linear_acceleration - mm.linear_acceleration) / (2.0 * h);
                        let (rot_an, tr_an, w_an, a_an, v_an, la_an) = if c < 3 {
                            (
                                jac.rotation[k].column(c).into_owned(),
                                Vector3::zeros(),
                                jac.angular_velocity[k].column(c).into_owned(),
                                jac.angular_acceleration[k].column(c).into_owned(),
                                Vector3::zeros(),
                                Vector3::zeros(),
                            )
                        } else {
                            let mut unit = Vector3::zeros();
                            unit[c - 3] = 1.0;
                            (
                                Vector3::zeros(),
                                unit * jac.translation[k],
                                Vector3::zeros(),
                                Vector3::zeros(),
                                unit * jac.linear_velocity[k],
                                unit * jac.linear_acceleration[k],
                            )
                        };
                        let check = |an: Vector3<f64>, fd: Vector3<f64>, what: &str| {
                            let scale = an.amax().max(1.0);
                            assert!((an - fd).amax() / scale < 1e-5, "{kind:?} {what} k={k} c={c}: {an:?} vs {fd:?}");
                        };
                        check(rot_an, rot_fd, "rotation");
                        check(tr_an, tr_fd, "translation");
                        check(w_an * dt, w_fd * dt, "angular velocity");
                        check(v_an, v_fd, "linear velocity");
                        check(a_an * dt * dt, a_fd * dt * dt, "angular acceleration");
                        check(la_an * dt * dt, la_fd * dt * dt, "linear acceleration");
                    }
                }
            }
        }
    }
}
