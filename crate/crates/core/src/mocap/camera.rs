use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::skeleton::{Pose2D, Pose3D};

/// Azimuth step of the virtual camera grid, degrees.
pub const AZIMUTH_STEP_DEG: f64 = 15.0;
/// Number of azimuths: 0, 15, ..., 345.
pub const NUM_AZIMUTHS: usize = 24;
/// Number of elevations: 0, 15, ..., 75.
pub const NUM_ELEVATIONS: usize = 6;

/// An orthographic viewpoint orbiting the subject.
///
/// The camera frame is `x` right, `y` down, `z` along the viewing direction.
/// Azimuth rotates about the vertical axis, elevation raises the camera so it
/// looks down on the subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualCamera {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
}

impl VirtualCamera {
    pub fn new(azimuth_deg: f64, elevation_deg: f64) -> Self {
        VirtualCamera {
            azimuth_deg,
            elevation_deg,
        }
    }

    /// World-to-camera rotation `R_x(elevation) * R_y(azimuth)`.
    pub fn rotation(&self) -> Rotation3<f64> {
        let az = Rotation3::from_axis_angle(&Vector3::y_axis(), self.azimuth_deg.to_radians());
        let el = Rotation3::from_axis_angle(&Vector3::x_axis(), self.elevation_deg.to_radians());
        el * az
    }

    /// Viewing direction in world coordinates (from camera towards subject).
    pub fn direction(&self) -> Vector3<f64> {
        self.rotation().inverse() * Vector3::z()
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        *self.rotation().matrix()
    }
}

/// The 144 retrieval viewpoints: 24 azimuths x 6 elevations, azimuth-major.
pub fn virtual_cameras() -> Vec<VirtualCamera> {
    (0..NUM_AZIMUTHS)
        .flat_map(|a| {
            (0..NUM_ELEVATIONS).map(move |e| {
                VirtualCamera::new(a as f64 * AZIMUTH_STEP_DEG, e as f64 * AZIMUTH_STEP_DEG)
            })
        })
        .collect()
}

/// Rotates into the camera frame and drops depth.
pub fn project_orthographic(pose: &Pose3D, cam: &VirtualCamera) -> Pose2D {
    let r = cam.rotation();
    Pose2D::new(
        pose.joints
            .iter()
            .map(|j| {
                let p = r * j;
                Vector2::new(p.x, p.y)
            })
            .collect(),
    )
}
