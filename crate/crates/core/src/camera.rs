//! Distortion-free pinhole camera.
//!
//! Camera coordinates follow the usual vision convention: x right, y down,
//! z along the optical axis. World coordinates put +Z up; the study rig
//! assumes the subject faces +Y with their right side toward +X.

use std::path::Path;

use nalgebra::{Matrix2x3, Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for Intrinsics {
    /// 1080p sensor with a moderately wide lens.
    fn default() -> Self {
        Intrinsics {
            fx: 1100.0,
            fy: 1100.0,
            cx: 960.0,
            cy: 540.0,
            width: 1920,
            height: 1080,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    /// World→camera rotation.
    pub rotation: Matrix3<f64>,
    /// World→camera translation, meters.
    pub translation: Vector3<f64>,
}

impl CameraModel {
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
    ) -> Result<Self> {
        if !(intrinsics.fx > 0.0 && intrinsics.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if ortho > 1e-10 || (rotation.determinant() - 1.0).abs() > 1e-10 {
            return Err(Error::Config(
                "camera rotation must be orthonormal with determinant +1".into(),
            ));
        }
        Ok(CameraModel {
            intrinsics,
            rotation,
            translation,
        })
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p_world + self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Optical axis direction in world coordinates.
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }

    /// Unit vector from the camera center through `p_world`.
    pub fn ray_direction(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        (p_world - self.center()).normalize()
    }

    pub fn project_camera(&self, pc: &Vector3<f64>) -> Result<Vector2<f64>> {
        if pc.z <= 0.0 {
            return Err(Error::BehindCamera { depth: pc.z });
        }
        let k = &self.intrinsics;
        Ok(Vector2::new(
            k.fx * pc.x / pc.z + k.cx,
            k.fy * pc.y / pc.z + k.cy,
        ))
    }

    /// Projects a world point to pixels.
    pub fn project(&self, p_world: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project_camera(&self.to_camera(p_world))
    }

    /// Pixel projection and its derivative with respect to the world point.
    pub fn project_with_jacobian(
        &self,
        p_world: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x3<f64>)> {
        let pc = self.to_camera(p_world);
        let uv = self.project_camera(&pc)?;
        let k = &self.intrinsics;
        let iz = 1.0 / pc.z;
        let d_cam = Matrix2x3::new(
            k.fx * iz,
            0.0,
            -k.fx * pc.x * iz * iz,
            0.0,
            k.fy * iz,
            -k.fy * pc.y * iz * iz,
        );
        Ok((uv, d_cam * self.rotation))
    }

    /// Camera at `center` whose optical axis passes through `target`.
    pub fn look_at(
        intrinsics: Intrinsics,
        center: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self> {
        let forward = (target - center)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateGeometry("camera center equals its target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::DegenerateGeometry("optical axis parallel to up".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[
            right.transpose(),
            down.transpose(),
            forward.transpose(),
        ]);
        let translation = -(rotation * center);
        CameraModel::new(intrinsics, rotation, translation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Frontal,
    Offset,
}

/// Azimuth of the offset view relative to the frontal view, toward the
/// subject's right.
pub const OFFSET_AZIMUTH_DEG: f64 = 45.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyPose {
    pub kind: ViewKind,
    pub subject_origin: [f64; 3],
    /// Distance from the subject origin to the camera center, meters.
    pub distance: f64,
    /// Camera elevation above the subject origin, degrees.
    pub elevation_deg: f64,
}

impl Default for StudyPose {
    fn default() -> Self {
        StudyPose {
            kind: ViewKind::Frontal,
            subject_origin: [0.0, 0.0, 1.35],
            distance: 3.0,
            elevation_deg: 20.0,
        }
    }
}

impl StudyPose {
    /// Unit direction from the subject origin to the camera center.
    pub fn direction(&self) -> Vector3<f64> {
        let anterior = Vector3::y();
        let up = Vector3::z();
        let azimuth = match self.kind {
            ViewKind::Frontal => 0.0,
            ViewKind::Offset => OFFSET_AZIMUTH_DEG,
        };
        // rotating anterior (+Y) toward the subject's right (+X) is a
        // negative rotation about +Z
        let horizontal = Rotation3::from_axis_angle(&Vector3::z_axis(), -azimuth.to_radians())
            * anterior;
        let el = self.elevation_deg.to_radians();
        horizontal * el.cos() + up * el.sin()
    }

    pub fn camera(&self, intrinsics: Intrinsics) -> Result<CameraModel> {
        if !(self.distance > 0.0) {
            return Err(Error::Config(format!(
                "camera distance must be positive, got {}",
                self.distance
            )));
        }
        let origin = Vector3::from(self.subject_origin);
        let center = origin + self.direction() * self.distance;
        CameraModel::look_at(intrinsics, center, origin, Vector3::z())
    }
}

/// Frontal or offset study camera aimed at `subject_origin`.
pub fn study_pose(
    kind: ViewKind,
    subject_origin: Vector3<f64>,
    distance: f64,
    elevation_deg: f64,
    intrinsics: Intrinsics,
) -> Result<CameraModel> {
    StudyPose {
        kind,
        subject_origin: subject_origin.into(),
        distance,
        elevation_deg,
    }
    .camera(intrinsics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitPose {
    /// Row-major world→camera rotation.
    pub rotation: [[f64; 3]; 3],
    /// World→camera translation, meters.
    pub translation: [f64; 3],
}

/// Camera config file. Exactly one of `pose` or `study_pose` must be given.
///
/// ```toml
/// name = "frontal"
/// [intrinsics]
/// fx = 1100.0   # pixels
/// fy = 1100.0
/// cx = 960.0
/// cy = 540.0
/// width = 1920
/// height = 1080
/// [study_pose]
/// kind = "frontal"             # or "offset"
/// subject_origin = [0.0, 0.0, 1.35]   # meters, world
/// distance = 3.0               # meters
/// elevation_deg = 20.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub name: String,
    #[serde(default)]
    pub intrinsics: Intrinsics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<ExplicitPose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study_pose: Option<StudyPose>,
}

impl CameraConfig {
    pub fn study(name: &str, pose: StudyPose) -> Self {
        CameraConfig {
            name: name.into(),
            intrinsics: Intrinsics::default(),
            pose: None,
            study_pose: Some(pose),
        }
    }

    pub fn build(&self) -> Result<CameraModel> {
        match (&self.pose, &self.study_pose) {
            (Some(p), None) => CameraModel::new(
                self.intrinsics,
                Matrix3::from_fn(|r, c| p.rotation[r][c]),
                Vector3::from(p.translation),
            ),
            (None, Some(s)) => s.camera(self.intrinsics),
            _ => Err(Error::Config(format!(
                "camera `{}` needs exactly one of `pose` or `study_pose`",
                self.name
            ))),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

/// A file holding several cameras as `[[cameras]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSet {
    pub cameras: Vec<CameraConfig>,
}

impl CameraSet {
    /// Frontal and 45° offset study cameras with default geometry.
    pub fn study_default() -> Self {
        CameraSet {
            cameras: vec![
                CameraConfig::study("frontal", StudyPose::default()),
                CameraConfig::study(
                    "offset",
                    StudyPose {
                        kind: ViewKind::Offset,
                        ..StudyPose::default()
                    },
                ),
            ],
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}
