use nalgebra::{Matrix2x3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Pose3D};

/// Pinhole intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Intrinsics> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite() && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidParameter("focal lengths must be positive and finite".into()));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Parses `fx = ..`, `fy = ..`, `cx = ..`, `cy = ..` lines.
    pub fn parse(text: &str) -> Result<Intrinsics> {
        let mut v = [None; 4];
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Input {
                path: "intrinsics".into(),
                line: i + 1,
                message,
            };
            let (k, val) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let slot = match k.trim() {
                "fx" => 0,
                "fy" => 1,
                "cx" => 2,
                "cy" => 3,
                other => return Err(err(format!("unknown key `{other}`"))),
            };
            let x: f64 = val.trim().parse().map_err(|e| err(format!("`{}`: {e}", val.trim())))?;
            v[slot] = Some(x);
        }
        match v {
            [Some(fx), Some(fy), Some(cx), Some(cy)] => Intrinsics::new(fx, fy, cx, cy),
            _ => Err(Error::InvalidParameter("intrinsics need fx, fy, cx and cy".into())),
        }
    }

    pub fn to_text(&self) -> String {
        format!("fx = {}\nfy = {}\ncx = {}\ncy = {}\n", self.fx, self.fy, self.cx, self.cy)
    }

    /// Image point of a camera-frame point with positive depth.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    /// Derivative of [`Intrinsics::project`] with respect to the camera-frame point.
    #[inline]
    pub fn jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
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

/// Perspective camera: fixed intrinsics, estimated rotation and translation
/// (mm). A point maps to `R p + t` in the camera frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CameraJson", try_from = "CameraJson")]
pub struct CameraModel {
    pub intrinsics: Intrinsics,
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    intrinsics: Intrinsics,
    rotation_axis_angle: [f64; 3],
    translation_mm: [f64; 3],
}

impl From<CameraModel> for CameraJson {
    fn from(c: CameraModel) -> Self {
        let a = c.axis_angle();
        CameraJson {
            intrinsics: c.intrinsics,
            rotation_axis_angle: [a.x, a.y, a.z],
            translation_mm: [c.translation.x, c.translation.y, c.translation.z],
        }
    }
}

impl TryFrom<CameraJson> for CameraModel {
    type Error = Error;

    fn try_from(j: CameraJson) -> Result<Self> {
        let a = j.rotation_axis_angle;
        let t = j.translation_mm;
        if a.iter().chain(&t).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("camera parameters must be finite".into()));
        }
        let i = j.intrinsics;
        Ok(CameraModel::from_axis_angle(
            Intrinsics::new(i.fx, i.fy, i.cx, i.cy)?,
            Vector3::new(a[0], a[1], a[2]),
            Vector3::new(t[0], t[1], t[2]),
        ))
    }
}

impl CameraModel {
    pub fn new(intrinsics: Intrinsics, rotation: Rotation3<f64>, translation: Vector3<f64>) -> CameraModel {
        CameraModel {
            intrinsics,
            rotation,
            translation,
        }
    }

    pub fn from_axis_angle(intrinsics: Intrinsics, axis_angle: Vector3<f64>, translation: Vector3<f64>) -> CameraModel {
        CameraModel::new(intrinsics, Rotation3::new(axis_angle), translation)
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        self.rotation.scaled_axis()
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// The pose expressed in the camera frame.
    pub fn transform_pose(&self, pose: &Pose3D) -> Pose3D {
        pose.map(|j| self.to_camera(j))
    }
}

/// Perspective projection of every joint.
pub fn project_pose(cam: &CameraModel, pose: &Pose3D) -> Result<Pose2D> {
    let mut out = Vec::with_capacity(pose.len());
    for (joint, j) in pose.joints.iter().enumerate() {
        let p = cam.to_camera(j);
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { joint, depth: p.z });
        }
        out.push(cam.intrinsics.project(&p));
    }
    Ok(Pose2D::new(out))
}
