//! CSV formats for trajectories, measurements and landmarks. Every file
//! starts with a version comment line.

use std::io::{Read, Write};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbp::CSV_HEADER;
use crate::manifold::{Pose, UnitQuaternion};
use crate::sensors::{AbsoluteMeasurement, VisualMeasurement};
use crate::spline::{Basis, SplineError, SplineKind, SplineTrajectory};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error("invalid quaternion on row {0}")]
    Quaternion(usize),
}

#[derive(Serialize, Deserialize)]
struct PoseRow {
    t: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    tx: f64,
    ty: f64,
    tz: f64,
}

impl PoseRow {
    fn new(t: f64, p: &Pose) -> Self {
        let [qw, qx, qy, qz] = p.rotation.coords();
        Self {
            t,
            qw,
            qx,
            qy,
            qz,
            tx: p.translation.x,
            ty: p.translation.y,
            tz: p.translation.z,
        }
    }

    fn pose(&self, row: usize) -> Result<Pose, IoError> {
        let n = (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz).sqrt();
        if !(n.is_finite() && (n - 1.0).abs() < 1e-6) {
            return Err(IoError::Quaternion(row));
        }
        Ok(Pose::new(
            UnitQuaternion::new(self.qw, self.qx, self.qy, self.qz),
            Vector3::new(self.tx, self.ty, self.tz),
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct VisualRow {
    t: f64,
    landmark_id: usize,
    u: f64,
    v: f64,
}

#[derive(Serialize, Deserialize)]
struct LandmarkRow {
    id: usize,
    x: f64,
    y: f64,
    z: f64,
}

/// Writes the version comment followed by serialized rows.
pub fn write_rows<W: Write, T: Serialize>(mut out: W, rows: impl IntoIterator<Item = T>) -> Result<(), IoError> {
    writeln!(out, "{CSV_HEADER}")?;
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows, skipping `#` comment lines.
pub fn read_rows<R: Read, T: for<'de> Deserialize<'de>>(input: R) -> Result<Vec<T>, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(input);
    Ok(rdr.deserialize().collect::<Result<_, _>>()?)
}

pub fn write_trajectory<W: Write>(out: W, traj: &SplineTrajectory) -> Result<(), IoError> {
    write_rows(
        out,
        traj.to_bases().iter().map(|b| PoseRow::new(b.time, &b.pose())),
    )
}

pub fn read_trajectory<R: Read>(input: R, kind: SplineKind) -> Result<SplineTrajectory, IoError> {
    let rows: Vec<PoseRow> = read_rows(input)?;
    let bases = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let p = r.pose(i)?;
            Ok(Basis {
                time: r.t,
                rotation: p.rotation,
                translation: p.translation,
            })
        })
        .collect::<Result<Vec<_>, IoError>>()?;
    Ok(SplineTrajectory::from_bases(kind, &bases)?)
}

pub fn write_absolute<W: Write>(out: W, meas: &[AbsoluteMeasurement]) -> Result<(), IoError> {
    write_rows(out, meas.iter().map(|m| PoseRow::new(m.time, &m.pose)))
}

pub fn read_absolute<R: Read>(input: R) -> Result<Vec<AbsoluteMeasurement>, IoError> {
    let rows: Vec<PoseRow> = read_rows(input)?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(AbsoluteMeasurement {
                time: r.t,
                pose: r.pose(i)?,
            })
        })
        .collect()
}

pub fn write_visual<W: Write>(out: W, meas: &[VisualMeasurement]) -> Result<(), IoError> {
    write_rows(
        out,
        meas.iter().map(|m| VisualRow {
            t: m.time,
            landmark_id: m.landmark,
            u: m.pixel[0],
            v: m.pixel[1],
        }),
    )
}

pub fn read_visual<R: Read>(input: R) -> Result<Vec<VisualMeasurement>, IoError> {
    let rows: Vec<VisualRow> = read_rows(input)?;
    Ok(rows
        .into_iter()
        .map(|r| VisualMeasurement {
            time: r.t,
            landmark: r.landmark_id,
            pixel: [r.u, r.v],
        })
        .collect())
}

pub fn write_landmarks<W: Write>(out: W, landmarks: &[Vector3<f64>]) -> Result<(), IoError> {
    write_rows(
        out,
        landmarks.iter().enumerate().map(|(id, l)| LandmarkRow {
            id,
            x: l.x,
            y: l.y,
            z: l.z,
        }),
    )
}

/// Landmarks indexed by id; ids must be `0..n` in any order.
pub fn read_landmarks<R: Read>(input: R) -> Result<Vec<Vector3<f64>>, IoError> {
    let mut rows: Vec<LandmarkRow> = read_rows(input)?;
    rows.sort_by_key(|r| r.id);
    Ok(rows.iter().map(|r| Vector3::new(r.x, r.y, r.z)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_trajectory, sample_measurements, ScenarioSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn trajectory_round_trip_is_exact() {
        let gt = generate_trajectory(&ScenarioSpec::absolute(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &gt.trajectory).unwrap();
        assert!(buf.starts_with(b"# ct-gbp v1\nt,qw,qx,qy,qz,tx,ty,tz\n"));
        let back = read_trajectory(&buf[..], gt.trajectory.kind()).unwrap();
        assert_eq!(back, gt.trajectory);
    }

    #[test]
    fn measurement_round_trips() {
        let spec = ScenarioSpec::localization();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let gt = generate_trajectory(&spec, &mut rng).unwrap();
        let m = sample_measurements(&gt, &spec, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_visual(&mut buf, &m.visual).unwrap();
        assert_eq!(read_visual(&buf[..]).unwrap(), m.visual);
        let mut buf = Vec::new();
        write_landmarks(&mut buf, &gt.landmarks).unwrap();
        assert_eq!(read_landmarks(&buf[..]).unwrap(), gt.landmarks);

        let spec = ScenarioSpec::absolute();
        let gt = generate_trajectory(&spec, &mut rng).unwrap();
        let m = sample_measurements(&gt, &spec, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_absolute(&mut buf, &m.absolute).unwrap();
        assert_eq!(read_absolute(&buf[..]).unwrap(), m.absolute);
    }

    #[test]
    fn malformed_quaternion_rejected() {
        let text = "# ct-gbp v1\nt,qw,qx,qy,qz,tx,ty,tz\n0,2,0,0,0,0,0,0\n";
        assert!(matches!(read_absolute(text.as_bytes()), Err(IoError::Quaternion(0))));
    }
}
