//! Residual models: absolute pose and pinhole reprojection over spline
//! bases, unary priors and generic linear factors.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::graph::{Evaluation, ResidualError, ResidualModel, SnapshotError, Slot};
use crate::manifold::{quat_log, skew, so3_left_jacobian_inv, Element, ElementKind, Pose};
use crate::spline::{evaluate_segment, BlendingMatrix, SplineKind, SplineTrajectory, ORDER};

/// Minimum depth for a point to count as in front of the camera.
pub const MIN_DEPTH: f64 = 1e-6;

/// Timestamped pose reading of a sensor in the world frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsoluteMeasurement {
    pub time: f64,
    pub pose: Pose,
}

/// Pixel observation of a landmark.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualMeasurement {
    pub time: f64,
    pub landmark: usize,
    pub pixel: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
        }
    }
}

impl Intrinsics {
    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite()
    }

    /// Projects a point given in the camera frame.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>, ResidualError> {
        if !(p.z > MIN_DEPTH) {
            return Err(ResidualError::Cheirality { depth: p.z });
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        )
    }
}

/// Position of a timestamp inside a spline: first basis index and
/// normalized segment time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplineSample {
    pub time: f64,
    pub segment: usize,
    pub u: f64,
    pub interval: f64,
    pub kind: SplineKind,
}

impl SplineSample {
    pub fn locate(traj: &SplineTrajectory, time: f64) -> Result<Self, ResidualError> {
        let (segment, u) = traj.locate(time)?;
        Ok(Self {
            time,
            segment,
            u,
            interval: traj.interval(),
            kind: traj.kind(),
        })
    }

    /// `(T_wb, ∂rotation/∂basis rotation, translation weights)`.
    fn body_pose(
        &self,
        bases: [&Pose; ORDER],
        with_jacobians: bool,
    ) -> (Pose, Option<([Matrix3<f64>; ORDER], [f64; ORDER])>) {
        let eval = evaluate_segment(
            bases,
            self.u,
            self.interval,
            &BlendingMatrix::new(self.kind),
            0,
            with_jacobians,
        );
        let jac = eval.jacobians.map(|j| (j.rotation, j.translation));
        (eval.motion.pose, jac)
    }
}

fn pose_values<'a>(values: &[&'a Element]) -> [&'a Pose; ORDER] {
    std::array::from_fn(|k| values[k].as_pose().expect("slot kinds checked on insertion"))
}

fn to_dmatrix<const R: usize, const C: usize>(
    m: &nalgebra::SMatrix<f64, R, C>,
) -> DMatrix<f64> {
    DMatrix::from_column_slice(R, C, m.as_slice())
}

/// Sensor pose `T_wb(t) T_bs` compared against a measured world pose.
///
/// Residual `[log(Q̂ Q_m⁻¹); t̂ − t_m]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbsolutePoseFactor {
    pub sample: SplineSample,
    pub measured: Pose,
    /// Body-to-sensor extrinsic `T_bs`.
    pub extrinsic: Pose,
}

impl AbsolutePoseFactor {
    pub fn new(sample: SplineSample, measured: Pose, extrinsic: Pose) -> Self {
        Self {
            sample,
            measured,
            extrinsic,
        }
    }

    /// Residual and 6×6 Jacobian blocks with respect to four pose bases.
    pub fn residual(
        &self,
        bases: [&Pose; ORDER],
        with_jacobians: bool,
    ) -> (DVector<f64>, Option<[DMatrix<f64>; ORDER]>) {
        let (t_wb, jac) = self.sample.body_pose(bases, with_jacobians);
        let r_wb = t_wb.rotation.rotation_matrix();
        let lever = r_wb * self.extrinsic.translation;
        let q_ws = t_wb.rotation * self.extrinsic.rotation;
        let t_ws = lever + t_wb.translation;
        let e = quat_log(&(q_ws * self.measured.rotation.inverse()));
        let mut r = DVector::zeros(6);
        r.fixed_rows_mut::<3>(0).copy_from(&e);
        r.fixed_rows_mut::<3>(3)
            .copy_from(&(t_ws - self.measured.translation));
        let blocks = jac.map(|(rot, w)| {
            let jl_inv = so3_left_jacobian_inv(&e);
            let lever_x = skew(&lever);
            std::array::from_fn(|k| {
                let mut b = DMatrix::zeros(6, 6);
                b.view_mut((0, 0), (3, 3)).copy_from(&(jl_inv * rot[k]));
                b.view_mut((3, 0), (3, 3)).copy_from(&(-lever_x * rot[k]));
                b.view_mut((3, 3), (3, 3))
                    .copy_from(&(Matrix3::identity() * w[k]));
                b
            })
        });
        (r, blocks)
    }
}

impl ResidualModel for AbsolutePoseFactor {
    fn name(&self) -> &'static str {
        "absolute_pose"
    }

    fn residual_dim(&self) -> usize {
        6
    }

    fn slots(&self) -> Vec<Slot> {
        vec![Slot::Variable(ElementKind::Pose); ORDER]
    }

    fn evaluate(&self, values: &[&Element], with_jacobians: bool) -> Result<Evaluation, ResidualError> {
        let (residual, blocks) = self.residual(pose_values(values), with_jacobians);
        let jacobians = match blocks {
            Some(b) => b.into_iter().map(Some).collect(),
            None => vec![None; ORDER],
        };
        Ok(Evaluation {
            residual,
            jacobians,
        })
    }

    fn payload(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// Pinhole projection of a world landmark into a camera rigidly attached to
/// the spline body. Neighbors: four pose bases, the landmark, and the
/// constant extrinsic `T_sb`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReprojectionFactor {
    pub sample: SplineSample,
    pub pixel: [f64; 2],
    pub intrinsics: Intrinsics,
}

/// Residual plus Jacobians of a reprojection: 2×6 per basis and 2×3 for the
/// landmark.
pub type ReprojectionJacobians = ([DMatrix<f64>; ORDER], DMatrix<f64>);

impl ReprojectionFactor {
    pub fn new(sample: SplineSample, pixel: [f64; 2], intrinsics: Intrinsics) -> Self {
        Self {
            sample,
            pixel,
            intrinsics,
        }
    }

    pub fn residual(
        &self,
        bases: [&Pose; ORDER],
        landmark: &Vector3<f64>,
        extrinsic_sb: &Pose,
        with_jacobians: bool,
    ) -> Result<(DVector<f64>, Option<ReprojectionJacobians>), ResidualError> {
        let (t_wb, jac) = self.sample.body_pose(bases, with_jacobians);
        let r_bw = t_wb.rotation.rotation_matrix().transpose();
        let rel = landmark - t_wb.translation;
        let p_b = r_bw * rel;
        let r_sb = extrinsic_sb.rotation.rotation_matrix();
        let p_s = r_sb * p_b + extrinsic_sb.translation;
        let proj = self.intrinsics.project(&p_s)?;
        let r = DVector::from_vec(vec![proj.x - self.pixel[0], proj.y - self.pixel[1]]);
        let blocks = jac.map(|(rot, w)| {
            let dpi = self.intrinsics.projection_jacobian(&p_s) * r_sb;
            let d_rot = dpi * r_bw * skew(&rel);
            let d_trans = -(dpi * r_bw);
            let bases = std::array::from_fn(|k| {
                let mut b = DMatrix::zeros(2, 6);
                b.view_mut((0, 0), (2, 3)).copy_from(&(d_rot * rot[k]));
                b.view_mut((0, 3), (2, 3)).copy_from(&(d_trans * w[k]));
                b
            });
            (bases, to_dmatrix(&(dpi * r_bw)))
        });
        Ok((r, blocks))
    }
}

impl ResidualModel for ReprojectionFactor {
    fn name(&self) -> &'static str {
        "reprojection"
    }

    fn residual_dim(&self) -> usize {
        2
    }

    fn slots(&self) -> Vec<Slot> {
        let mut s = vec![Slot::Variable(ElementKind::Pose); ORDER];
        s.push(Slot::Any(ElementKind::Vector(3)));
        s.push(Slot::Constant(ElementKind::Pose));
        s
    }

    fn evaluate(&self, values: &[&Element], with_jacobians: bool) -> Result<Evaluation, ResidualError> {
        let landmark = values[ORDER].as_vector3().expect("slot kinds checked on insertion");
        let extrinsic = values[ORDER + 1].as_pose().expect("slot kinds checked on insertion");
        let (residual, blocks) = self.residual(pose_values(values), &landmark, extrinsic, with_jacobians)?;
        let jacobians = match blocks {
            Some((b, l)) => {
                let mut v: Vec<Option<DMatrix<f64>>> = b.into_iter().map(Some).collect();
                v.push(Some(l));
                v.push(None);
                v
            }
            None => vec![None; ORDER + 2],
        };
        Ok(Evaluation {
            residual,
            jacobians,
        })
    }

    fn payload(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// Unary prior `x ⊟ mean`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorFactor {
    pub mean: Element,
}

impl PriorFactor {
    pub fn new(mean: Element) -> Self {
        Self { mean }
    }
}

impl ResidualModel for PriorFactor {
    fn name(&self) -> &'static str {
        "prior"
    }

    fn residual_dim(&self) -> usize {
        self.mean.tangent_dim()
    }

    fn slots(&self) -> Vec<Slot> {
        vec![Slot::Variable(self.mean.kind())]
    }

    fn evaluate(&self, values: &[&Element], with_jacobians: bool) -> Result<Evaluation, ResidualError> {
        let x = values[0];
        Ok(Evaluation {
            residual: x.boxminus(&self.mean),
            jacobians: vec![with_jacobians.then(|| x.dboxminus_dx(&self.mean))],
        })
    }

    fn payload(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("serializable")
    }
}

/// `Σ_k A_k x_k − b` over Euclidean neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearFactor {
    pub blocks: Vec<DMatrix<f64>>,
    pub offset: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearPayload {
    blocks: Vec<Vec<Vec<f64>>>,
    offset: Vec<f64>,
}

impl LinearFactor {
    pub fn new(blocks: Vec<DMatrix<f64>>, offset: DVector<f64>) -> Self {
        assert!(
            blocks.iter().all(|b| b.nrows() == offset.len()),
            "block row count must match the offset length"
        );
        Self { blocks, offset }
    }
}

impl ResidualModel for LinearFactor {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn residual_dim(&self) -> usize {
        self.offset.len()
    }

    fn slots(&self) -> Vec<Slot> {
        self.blocks
            .iter()
            .map(|b| Slot::Any(ElementKind::Vector(b.ncols())))
            .collect()
    }

    fn evaluate(&self, values: &[&Element], with_jacobians: bool) -> Result<Evaluation, ResidualError> {
        let mut r = -self.offset.clone();
        for (a, v) in self.blocks.iter().zip(values) {
            r += a * v.as_vector().expect("slot kinds checked on insertion");
        }
        Ok(Evaluation {
            residual: r,
            jacobians: self
                .blocks
                .iter()
                .map(|a| with_jacobians.then(|| a.clone()))
                .collect(),
        })
    }

    fn payload(&self) -> serde_json::Value {
        let rows = |m: &DMatrix<f64>| m.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::to_value(LinearPayload {
            blocks: self.blocks.iter().map(rows).collect(),
            offset: self.offset.iter().copied().collect(),
        })
        .expect("serializable")
    }
}

/// Reconstructs a residual model from its snapshot name and payload.
pub fn model_from_payload(
    name: &str,
    payload: &serde_json::Value,
) -> Result<Arc<dyn ResidualModel>, SnapshotError> {
    fn parse<T: serde::de::DeserializeOwned>(
        name: &str,
        v: &serde_json::Value,
    ) -> Result<T, SnapshotError> {
        serde_json::from_value(v.clone()).map_err(|source| SnapshotError::Payload {
            model: name.to_string(),
            source,
        })
    }
    Ok(match name {
        "absolute_pose" => Arc::new(parse::<AbsolutePoseFactor>(name, payload)?),
        "reprojection" => Arc::new(parse::<ReprojectionFactor>(name, payload)?),
        "prior" => Arc::new(parse::<PriorFactor>(name, payload)?),
        "linear" => {
            let p: LinearPayload = parse(name, payload)?;
            let blocks = p
                .blocks
                .iter()
                .map(|rows| {
                    let n = rows.len();
                    let m = rows.first().map_or(0, Vec::len);
                    DMatrix::from_fn(n, m, |i, j| rows[i][j])
                })
                .collect();
            Arc::new(LinearFactor::new(blocks, DVector::from_vec(p.offset)))
        }
        other => return Err(SnapshotError::UnknownModel(other.to_string())),
    })
}
