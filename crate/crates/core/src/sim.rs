//! Ground-truth trajectories, initial-state perturbation and synthetic
//! measurements for the absolute and localization setups.

use nalgebra::{DVector, Vector3, Vector6};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifold::{quat_exp, Pose};
use crate::sensors::{AbsoluteMeasurement, Intrinsics, VisualMeasurement};
use crate::spline::{SplineError, SplineKind, SplineTrajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Setup {
    #[default]
    Absolute,
    Localization,
}

impl Setup {
    pub fn name(&self) -> &'static str {
        match self {
            Setup::Absolute => "absolute",
            Setup::Localization => "localization",
        }
    }
}

/// Visibility limits of the simulated camera.
pub const MIN_VISIBLE_DEPTH: f64 = 0.5;
pub const MAX_VISIBLE_DEPTH: f64 = 20.0;
/// `tan(45°)`: half of a 90° field of view.
pub const HALF_FOV_TAN: f64 = 1.0;
/// Fraction of frames in which every landmark must be visible.
pub const MIN_VISIBLE_FRACTION: f64 = 0.8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub setup: Setup,
    /// Seconds.
    pub duration: f64,
    /// Seconds between adjacent bases.
    pub knot_interval: f64,
    pub spline: SplineKind,
    /// Hz.
    pub absolute_rate: f64,
    /// Hz.
    pub image_rate: f64,
    pub landmark_count: usize,
    /// Meters, `[min, max]`.
    pub landmark_range: [f64; 2],
    /// Basis perturbation bound (m/rad); setup default when absent.
    pub perturbation: Option<f64>,
    /// Landmark perturbation bound (m); equals `perturbation` when absent.
    pub landmark_perturbation: Option<f64>,
    /// Measurement noise σ (m/rad or px); setup default when absent.
    pub noise: Option<f64>,
    pub intrinsics: Intrinsics,
    /// Body-to-sensor transform of the absolute sensor.
    pub absolute_extrinsic: Pose,
    /// Body-to-camera transform `T_sb` of the camera.
    pub camera_extrinsic: Pose,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            setup: Setup::Absolute,
            duration: 10.0,
            knot_interval: 0.1,
            spline: SplineKind::BSpline,
            absolute_rate: 40.0,
            image_rate: 20.0,
            landmark_count: 50,
            landmark_range: [2.0, 6.0],
            perturbation: None,
            landmark_perturbation: None,
            noise: None,
            intrinsics: Intrinsics::default(),
            absolute_extrinsic: Pose::identity(),
            camera_extrinsic: Pose::identity(),
            seed: 0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("{field} must be positive and finite, got {value}")]
    NotPositive { field: &'static str, value: f64 },
    #[error("{field} must be non-negative and finite, got {value}")]
    Negative { field: &'static str, value: f64 },
    #[error("landmark range must satisfy 0 < min <= max, got [{0}, {1}]")]
    LandmarkRange(f64, f64),
    #[error("camera intrinsics must be positive")]
    Intrinsics,
    #[error("duration must span at least one knot interval")]
    TooShort,
    #[error("could not place landmark {0} with the required visibility")]
    LandmarkPlacement(usize),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

impl ScenarioSpec {
    pub fn absolute() -> Self {
        Self::default()
    }

    pub fn localization() -> Self {
        Self {
            setup: Setup::Localization,
            ..Self::default()
        }
    }

    pub fn perturbation(&self) -> f64 {
        self.perturbation.unwrap_or(match self.setup {
            Setup::Absolute => 0.1,
            Setup::Localization => 0.2,
        })
    }

    pub fn landmark_perturbation(&self) -> f64 {
        self.landmark_perturbation.unwrap_or_else(|| self.perturbation())
    }

    pub fn noise(&self) -> f64 {
        self.noise.unwrap_or(match self.setup {
            Setup::Absolute => 1e-5,
            Setup::Localization => 1.0,
        })
    }

    /// Number of bases: the measured span plus one guard basis before and
    /// two after, so every timestamp in `[0, duration)` has a full segment.
    pub fn basis_count(&self) -> usize {
        (self.duration / self.knot_interval).round() as usize + 3
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let positive = [
            ("duration", self.duration),
            ("knot_interval", self.knot_interval),
            ("absolute_rate", self.absolute_rate),
            ("image_rate", self.image_rate),
        ];
        for (field, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SpecError::NotPositive { field, value });
            }
        }
        let non_negative = [
            ("perturbation", self.perturbation()),
            ("landmark_perturbation", self.landmark_perturbation()),
            ("noise", self.noise()),
        ];
        for (field, value) in non_negative {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(SpecError::Negative { field, value });
            }
        }
        let [lo, hi] = self.landmark_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SpecError::LandmarkRange(lo, hi));
        }
        if !self.intrinsics.is_valid() {
            return Err(SpecError::Intrinsics);
        }
        if self.duration < self.knot_interval {
            return Err(SpecError::TooShort);
        }
        Ok(())
    }

    /// Timestamps of the absolute sensor.
    pub fn absolute_times(&self) -> Vec<f64> {
        sample_times(self.duration, self.absolute_rate)
    }

    /// Timestamps of the camera frames.
    pub fn image_times(&self) -> Vec<f64> {
        sample_times(self.duration, self.image_rate)
    }
}

fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate - 1e-9).ceil().max(0.0) as usize;
    (0..n).map(|k| k as f64 / rate).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub trajectory: SplineTrajectory,
    pub landmarks: Vec<Vector3<f64>>,
}

/// Smooth Lissajous-style motion with seed-dependent frequencies and phases.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Motion {
    amp: [f64; 6],
    freq: [f64; 6],
    phase: [f64; 6],
}

impl Motion {
    fn sample(rng: &mut ChaCha8Rng) -> Self {
        // rotation x/y/z (rad), then position x/y/z (m)
        let amp = [0.25, 0.25, 0.4, 1.0, 0.8, 0.3];
        let base_freq = [0.11, 0.17, 0.07, 0.13, 0.21, 0.17];
        let freq = std::array::from_fn(|k| base_freq[k] * rng.random_range(0.8..1.2));
        let phase = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
        Self { amp, freq, phase }
    }

    fn pose(&self, t: f64) -> Pose {
        let v: [f64; 6] = std::array::from_fn(|k| {
            self.amp[k] * (std::f64::consts::TAU * self.freq[k] * t + self.phase[k]).sin()
        });
        Pose::new(quat_exp(&Vector3::new(v[0], v[1], v[2])), Vector3::new(v[3], v[4], v[5]))
    }
}

/// Point seen by the camera at a body pose, if inside the field of view.
pub fn camera_point(body: &Pose, camera_extrinsic: &Pose, landmark: &Vector3<f64>) -> Option<Vector3<f64>> {
    let p = camera_extrinsic.transform_point(&body.inverse().transform_point(landmark));
    let visible = p.z >= MIN_VISIBLE_DEPTH
        && p.z <= MAX_VISIBLE_DEPTH
        && (p.x / p.z).abs() <= HALF_FOV_TAN
        && (p.y / p.z).abs() <= HALF_FOV_TAN;
    visible.then_some(p)
}

pub fn generate_trajectory(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<GroundTruth, SpecError> {
    spec.validate()?;
    let motion = Motion::sample(rng);
    let n = spec.basis_count();
    let start = -spec.knot_interval;
    let bases: Vec<Pose> = (0..n)
        .map(|i| motion.pose(start + i as f64 * spec.knot_interval))
        .collect();
    let trajectory = SplineTrajectory::new(spec.spline, start, spec.knot_interval, bases)?;

    let mut landmarks = Vec::new();
    if spec.setup == Setup::Localization {
        let frames: Vec<Pose> = spec
            .image_times()
            .iter()
            .map(|&t| trajectory.eval_pose(t))
            .collect::<Result<_, _>>()?;
        let [lo, hi] = spec.landmark_range;
        for id in 0..spec.landmark_count {
            let mut placed = None;
            for _ in 0..10_000 {
                // Direction inside a cone around the mean optical axis (+z).
                let dir = Vector3::new(rng.random_range(-0.45..0.45), rng.random_range(-0.45..0.45), 1.0).normalize();
                let l = dir * rng.random_range(lo..hi);
                let seen = frames
                    .iter()
                    .filter(|f| camera_point(f, &spec.camera_extrinsic, &l).is_some())
                    .count();
                if seen as f64 >= MIN_VISIBLE_FRACTION * frames.len() as f64 {
                    placed = Some(l);
                    break;
                }
            }
            landmarks.push(placed.ok_or(SpecError::LandmarkPlacement(id))?);
        }
    }
    Ok(GroundTruth {
        trajectory,
        landmarks,
    })
}

fn uniform_vec<const N: usize>(rng: &mut ChaCha8Rng, level: f64) -> [f64; N] {
    std::array::from_fn(|_| if level > 0.0 { rng.random_range(-level..=level) } else { 0.0 })
}

/// Perturbs every basis by a tangent vector with components uniform in
/// `[−level, level]`.
pub fn perturb_bases(traj: &SplineTrajectory, level: f64, rng: &mut ChaCha8Rng) -> SplineTrajectory {
    let mut out = traj.clone();
    for b in out.bases_mut() {
        let tau = Vector6::from(uniform_vec::<6>(rng, level));
        *b = b.boxplus(&tau);
    }
    out
}

pub fn perturb_landmarks(landmarks: &[Vector3<f64>], level: f64, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    landmarks
        .iter()
        .map(|l| l + Vector3::from(uniform_vec::<3>(rng, level)))
        .collect()
}

/// Synthetic measurement sets of one scenario.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Measurements {
    pub absolute: Vec<AbsoluteMeasurement>,
    pub visual: Vec<VisualMeasurement>,
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
    } else {
        0.0
    }
}

pub fn sample_measurements(gt: &GroundTruth, spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Result<Measurements, SpecError> {
    let sigma = spec.noise();
    let mut out = Measurements::default();
    match spec.setup {
        Setup::Absolute => {
            for t in spec.absolute_times() {
                let pose = gt.trajectory.eval_pose(t)?.compose(&spec.absolute_extrinsic);
                let noise = Vector6::from_fn(|_, _| gaussian(rng, sigma));
                out.absolute.push(AbsoluteMeasurement {
                    time: t,
                    pose: pose.boxplus(&noise),
                });
            }
        }
        Setup::Localization => {
            for t in spec.image_times() {
                let body = gt.trajectory.eval_pose(t)?;
                for (id, l) in gt.landmarks.iter().enumerate() {
                    let Some(p) = camera_point(&body, &spec.camera_extrinsic, l) else {
                        continue;
                    };
                    let px = spec.intrinsics.project(&p).expect("visible points have positive depth");
                    out.visual.push(VisualMeasurement {
                        time: t,
                        landmark: id,
                        pixel: [px.x + gaussian(rng, sigma), px.y + gaussian(rng, sigma)],
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Per-sample trajectory errors at a fixed rate over the common domain.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ErrorSamples {
    pub t: Vec<f64>,
    /// Geodesic rotation error (rad).
    pub rotation: Vec<f64>,
    /// Euclidean translation error (m).
    pub translation: Vec<f64>,
}

impl ErrorSamples {
    pub fn rmse(&self) -> (f64, f64) {
        let rms = |v: &[f64]| {
            if v.is_empty() {
                return f64::NAN;
            }
            (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
        };
        (rms(&self.rotation), rms(&self.translation))
    }
}

/// Default RMSE sampling rate (Hz).
pub const RMSE_RATE: f64 = 100.0;

pub fn trajectory_errors(est: &SplineTrajectory, gt: &SplineTrajectory, rate: f64) -> Result<ErrorSamples, SplineError> {
    let (a0, a1) = est.domain();
    let (b0, b1) = gt.domain();
    let (start, end) = (a0.max(b0), a1.min(b1));
    let mut out = ErrorSamples::default();
    // The domain end is exclusive; guard against round-off at the last knot.
    let count = ((end - start) * rate - 1e-6).ceil().max(0.0) as usize;
    for k in 0..count {
        let t = start + k as f64 / rate;
        let e = est.eval_pose(t)?;
        let g = gt.eval_pose(t)?;
        out.t.push(t);
        out.rotation.push(e.rotation.angle_to(&g.rotation));
        out.translation.push((e.translation - g.translation).norm());
    }
    Ok(out)
}

/// `(rotation RMSE, translation RMSE)` sampled at `rate` Hz.
pub fn rmse(est: &SplineTrajectory, gt: &SplineTrajectory, rate: f64) -> Result<(f64, f64), SplineError> {
    Ok(trajectory_errors(est, gt, rate)?.rmse())
}

/// Landmark positions as graph values.
pub fn landmark_vector(l: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(l.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn default_absolute_layout() {
        let spec = ScenarioSpec::absolute();
        let gt = generate_trajectory(&spec, &mut rng(1)).unwrap();
        assert_eq!(gt.trajectory.len(), 103);
        for i in 1..gt.trajectory.len() {
            let dt = gt.trajectory.basis_time(i) - gt.trajectory.basis_time(i - 1);
            assert!((dt - 0.1).abs() < 1e-12);
        }
        let m = sample_measurements(&gt, &spec, &mut rng(2)).unwrap();
        assert_eq!(m.absolute.len(), 400);
        let (lo, hi) = gt.trajectory.domain();
        assert!(m.absolute.iter().all(|a| a.time >= lo && a.time < hi));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = ScenarioSpec::localization();
        let a = generate_trajectory(&spec, &mut rng(5)).unwrap();
        let b = generate_trajectory(&spec, &mut rng(5)).unwrap();
        assert_eq!(a, b);
        let pa = perturb_bases(&a.trajectory, 0.2, &mut rng(6));
        let pb = perturb_bases(&b.trajectory, 0.2, &mut rng(6));
        assert_eq!(pa, pb);
        let ma = sample_measurements(&a, &spec, &mut rng(7)).unwrap();
        let mb = sample_measurements(&b, &spec, &mut rng(7)).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn landmarks_visible_in_most_frames() {
        let spec = ScenarioSpec::localization();
        let gt = generate_trajectory(&spec, &mut rng(3)).unwrap();
        assert_eq!(gt.landmarks.len(), 50);
        let frames = spec.image_times();
        assert_eq!(frames.len(), 200);
        for l in &gt.landmarks {
            let n = l.norm();
            assert!((2.0..=6.0).contains(&n));
            let seen = frames
                .iter()
                .filter(|&&t| camera_point(&gt.trajectory.eval_pose(t).unwrap(), &spec.camera_extrinsic, l).is_some())
                .count();
            assert!(seen as f64 >= 0.8 * frames.len() as f64);
        }
    }

    #[test]
    fn perturbation_bounded_and_zero_is_identity() {
        let gt = generate_trajectory(&ScenarioSpec::absolute(), &mut rng(1)).unwrap();
        let same = perturb_bases(&gt.trajectory, 0.0, &mut rng(2));
        assert_eq!(same, gt.trajectory);
        let p = perturb_bases(&gt.trajectory, 0.3, &mut rng(2));
        for (a, b) in p.bases().iter().zip(gt.trajectory.bases()) {
            let d = a.boxminus(b);
            assert!(d.amax() <= 0.3 + 1e-12);
        }
    }

    #[test]
    fn noise_statistics() {
        let spec = ScenarioSpec {
            noise: Some(0.01),
            duration: 300.0,
            ..ScenarioSpec::absolute()
        };
        let gt = generate_trajectory(&spec, &mut rng(1)).unwrap();
        let m = sample_measurements(&gt, &spec, &mut rng(2)).unwrap();
        let mut samples = Vec::new();
        for a in &m.absolute {
            let truth = gt.trajectory.eval_pose(a.time).unwrap();
            samples.extend(a.pose.boxminus(&truth).iter().copied());
        }
        assert!(samples.len() >= 10_000);
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!((sd - 0.01).abs() < 0.05 * 0.01, "{sd}");
    }

    #[test]
    fn zero_noise_measurements_are_exact() {
        let spec = ScenarioSpec {
            noise: Some(0.0),
            ..ScenarioSpec::localization()
        };
        let gt = generate_trajectory(&spec, &mut rng(4)).unwrap();
        let m = sample_measurements(&gt, &spec, &mut rng(5)).unwrap();
        for v in m.visual.iter().take(500) {
            let body = gt.trajectory.eval_pose(v.time).unwrap();
            let p = camera_point(&body, &spec.camera_extrinsic, &gt.landmarks[v.landmark]).unwrap();
            let px = spec.intrinsics.project(&p).unwrap();
            assert_eq!([px.x, px.y], v.pixel);
        }
    }

    #[test]
    fn rmse_cases() {
        let gt = generate_trajectory(&ScenarioSpec::absolute(), &mut rng(1)).unwrap().trajectory;
        let (r0, t0) = rmse(&gt, &gt, RMSE_RATE).unwrap();
        assert!(r0 < 1e-12 && t0 == 0.0);
        let mut shifted = gt.clone();
        let d = Vector3::new(0.3, -0.4, 0.0);
        for b in shifted.bases_mut() {
            b.translation += d;
        }
        let (r, t) = rmse(&shifted, &gt, RMSE_RATE).unwrap();
        assert!(r < 1e-12);
        assert!((t - 0.5).abs() < 1e-12);
        let e = trajectory_errors(&gt, &gt, RMSE_RATE).unwrap();
        assert_eq!(e.t.len(), 1000);
    }

    #[test]
    fn invalid_specs_rejected() {
        let zero = ScenarioSpec {
            duration: 0.0,
            ..ScenarioSpec::default()
        };
        assert!(zero.validate().is_err());
        let neg = ScenarioSpec {
            noise: Some(-1.0),
            ..ScenarioSpec::default()
        };
        assert!(neg.validate().is_err());
    }
}
