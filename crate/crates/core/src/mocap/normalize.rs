use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{root_center, Pose2D, Pose3D, Skeleton};

/// A 3D pose with translation and heading removed: root at the origin and
/// the left-to-right hip direction pointing along `-x`, so that the body
/// faces the `-z` direction (towards a camera looking along `+z`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPose3D(Pose3D);

impl NormalizedPose3D {
    pub fn as_pose(&self) -> &Pose3D {
        &self.0
    }

    pub fn into_pose(self) -> Pose3D {
        self.0
    }

    /// Wraps a pose that is already known to be normalized, e.g. one
    /// read back from a serialized index.
    pub fn from_normalized(pose: Pose3D) -> Self {
        NormalizedPose3D(pose)
    }
}

/// Joint coordinates scaled so that `y` spans exactly `[-1, 1]` and the mean
/// `x` is zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedPose2D {
    pub joints: Vec<Vector2<f64>>,
}

/// Rotation about the vertical axis by `angle` radians.
#[cfg(test)]
pub(crate) fn vertical_rotation(angle: f64) -> nalgebra::Rotation3<f64> {
    nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), angle)
}

/// Removes translation (root to origin) and heading (rotation about the
/// vertical axis). The vertical direction itself is preserved.
pub fn normalize_pose3d(pose: &Pose3D, skeleton: &Skeleton) -> Result<NormalizedPose3D> {
    pose.check(skeleton)?;
    let (left, right) = skeleton.heading_pair();
    let lateral = pose.joints[right] - pose.joints[left];
    let (dx, dz) = (lateral.x, lateral.z);
    let horizontal = dx.hypot(dz);
    if !(horizontal > 1e-9) {
        return Err(Error::DegenerateHeading);
    }
    // rotation about y taking (dx, 0, dz) to (-|h|, 0, 0)
    let (c, s) = (-dx / horizontal, -dz / horizontal);
    let root = root_center(pose, skeleton);
    let joints = pose
        .joints
        .iter()
        .map(|j| {
            let p = j - root;
            Vector3::new(c * p.x + s * p.z, p.y, -s * p.x + c * p.z)
        })
        .collect();
    Ok(NormalizedPose3D(Pose3D::new(pose.skeleton.clone(), joints)))
}

/// Normalizes a point list: uniform scale `2 / (max y - min y)`, `y`
/// shifted onto `[-1, 1]`, `x` centered on its mean.
pub fn normalize_points(points: &[Vector2<f64>]) -> Result<Vec<Vector2<f64>>> {
    if points.is_empty() {
        return Err(Error::DegeneratePose);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut mean_x = 0.0;
    for p in points {
        lo = lo.min(p.y);
        hi = hi.max(p.y);
        mean_x += p.x;
    }
    mean_x /= points.len() as f64;
    let extent = hi - lo;
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::DegeneratePose);
    }
    let scale = 2.0 / extent;
    Ok(points
        .iter()
        .map(|p| {
            // pin the extremes so that they land on -1 / +1 exactly
            let y = if p.y == lo {
                -1.0
            } else if p.y == hi {
                1.0
            } else {
                (p.y - lo) * scale - 1.0
            };
            Vector2::new((p.x - mean_x) * scale, y)
        })
        .collect())
}

/// Normalizes a 2D pose over all of its joints.
pub fn normalize_pose2d(pose: &Pose2D) -> Result<NormalizedPose2D> {
    Ok(NormalizedPose2D {
        joints: normalize_points(&pose.joints)?,
    })
}

/// Normalized coordinates of a joint subset, flattened as `[x0, y0, x1, ...]`.
pub(crate) fn subset_feature(joints: &[Vector2<f64>], subset: &[usize]) -> Result<Vec<f64>> {
    let pts: Vec<Vector2<f64>> = subset.iter().map(|&i| joints[i]).collect();
    Ok(normalize_points(&pts)?
        .into_iter()
        .flat_map(|p| [p.x, p.y])
        .collect())
}
