//! Anatomical torso coordinate frame.
//!
//! Axis conventions: +ML points to the subject's right (ipsilateral for the
//! right arm), +AP anterior, +V superior. V runs from the T8 landmark toward
//! T1 in both the marker and keypoint variants.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::KeypointTrajectory;

/// Smallest admissible |AP_temp × V| (m²) before landmarks count as collinear.
pub const MIN_CROSS_NORM: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLandmarks {
    /// Sternal notch marker, or the "clavicle" keypoint.
    pub sternal_notch: Vector3<f64>,
    /// T1 marker, or the "backneck" keypoint.
    pub t1: Vector3<f64>,
    /// T8 marker, or the "upper back" keypoint.
    pub t8: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TorsoFrame {
    pub origin: Vector3<f64>,
    pub ml_axis: Vector3<f64>,
    pub ap_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
}

impl TorsoFrame {
    /// Builds the frame: origin at the sternal-notch/T1 midpoint,
    /// V = T8→T1, ML = (sternal − T8) × V, AP = V × ML.
    pub fn build(landmarks: &FrameLandmarks) -> Result<Self> {
        let FrameLandmarks {
            sternal_notch,
            t1,
            t8,
        } = *landmarks;
        let v_raw = t1 - t8;
        let v_norm = v_raw.norm();
        if v_norm < MIN_CROSS_NORM {
            return Err(Error::DegenerateGeometry("T1 and T8 coincide".into()));
        }
        let v_axis = v_raw / v_norm;
        let ap_temp = sternal_notch - t8;
        let ml_raw = ap_temp.cross(&v_raw);
        let ml_norm = ml_raw.norm();
        if ml_norm < MIN_CROSS_NORM {
            return Err(Error::DegenerateGeometry(
                "sternal notch, T1 and T8 are collinear".into(),
            ));
        }
        let ml_axis = ml_raw / ml_norm;
        let ap_axis = v_axis.cross(&ml_axis);
        Ok(TorsoFrame {
            origin: (sternal_notch + t1) * 0.5,
            ml_axis,
            ap_axis,
            v_axis,
        })
    }

    /// Columns are the ML, AP and V axes in world coordinates.
    pub fn basis(&self) -> Matrix3<f64> {
        Matrix3::from_columns(&[self.ml_axis, self.ap_axis, self.v_axis])
    }

    /// World point to (ML, AP, V) local coordinates.
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let d = p - self.origin;
        Vector3::new(
            self.ml_axis.dot(&d),
            self.ap_axis.dot(&d),
            self.v_axis.dot(&d),
        )
    }

    pub fn to_world(&self, local: &Vector3<f64>) -> Vector3<f64> {
        self.origin + self.basis() * local
    }
}

/// Wrist end effector: midpoint of the radial and ulnar wrist points.
pub fn wrist_end_effector(
    radial: Option<Vector3<f64>>,
    ulnar: Option<Vector3<f64>>,
) -> Option<Vector3<f64>> {
    Some((radial? + ulnar?) * 0.5)
}

/// Names of the trajectory keypoints used for the frame and the end effector.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandmarkMap {
    pub sternal_notch: String,
    pub t1: String,
    pub t8: String,
    pub wrist_radial: String,
    pub wrist_ulnar: String,
}

impl Default for LandmarkMap {
    /// Keypoint names used by the shipped skeleton.
    fn default() -> Self {
        LandmarkMap {
            sternal_notch: "clavicle".into(),
            t1: "backneck".into(),
            t8: "upper_back".into(),
            wrist_radial: "radial_wrist".into(),
            wrist_ulnar: "ulnar_wrist".into(),
        }
    }
}

impl LandmarkMap {
    /// Marker-set names (sternal notch, T1, T8, radial/ulnar styloids).
    pub fn markers() -> Self {
        LandmarkMap {
            sternal_notch: "STRN".into(),
            t1: "T1".into(),
            t8: "T8".into(),
            wrist_radial: "RWRA".into(),
            wrist_ulnar: "RWRB".into(),
        }
    }

    fn indices(&self, traj: &KeypointTrajectory) -> Result<[usize; 5]> {
        let find = |role: &str, name: &str| {
            traj.index_of(name).ok_or_else(|| {
                Error::data(
                    None,
                    format!("trajectory has no `{name}` keypoint (needed as {role})"),
                )
            })
        };
        Ok([
            find("sternal notch", &self.sternal_notch)?,
            find("T1", &self.t1)?,
            find("T8", &self.t8)?,
            find("radial wrist", &self.wrist_radial)?,
            find("ulnar wrist", &self.wrist_ulnar)?,
        ])
    }
}

/// Per-frame wrist position in the torso frame. A frame is `None` when any
/// torso landmark or wrist point is missing, or the landmarks are degenerate.
pub fn local_wrist_trajectory(
    traj: &KeypointTrajectory,
    map: &LandmarkMap,
) -> Result<Vec<Option<Vector3<f64>>>> {
    let [s, t1, t8, wr, wu] = map.indices(traj)?;
    Ok((0..traj.len())
        .map(|f| {
            let landmarks = FrameLandmarks {
                sternal_notch: traj.position(f, s)?,
                t1: traj.position(f, t1)?,
                t8: traj.position(f, t8)?,
            };
            let frame = TorsoFrame::build(&landmarks).ok()?;
            let wrist = wrist_end_effector(traj.position(f, wr), traj.position(f, wu))?;
            Some(frame.to_local(&wrist))
        })
        .collect())
}
