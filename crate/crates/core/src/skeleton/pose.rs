use std::fmt;
use std::sync::Arc;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::Skeleton;
use crate::error::{Error, Result};

/// Identifier of a skeleton convention.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SkeletonId(Arc<str>);

impl SkeletonId {
    pub fn new(id: impl Into<String>) -> Self {
        SkeletonId(Arc::from(id.into()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SkeletonId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for SkeletonId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for SkeletonId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d).map(SkeletonId::new)
    }
}

/// 3D joint positions in millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose3D {
    pub skeleton: SkeletonId,
    pub joints: Vec<Vector3<f64>>,
}

impl Pose3D {
    pub fn new(skeleton: SkeletonId, joints: Vec<Vector3<f64>>) -> Self {
        Pose3D { skeleton, joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.joints.iter().all(|j| j.iter().all(|v| v.is_finite()))
    }

    /// Checks that the pose belongs to `skeleton`.
    pub fn check(&self, skeleton: &Skeleton) -> Result<()> {
        if &self.skeleton != skeleton.id() {
            return Err(Error::SkeletonMismatch {
                expected: skeleton.id().to_string(),
                found: self.skeleton.to_string(),
            });
        }
        if self.joints.len() != skeleton.num_joints() {
            return Err(Error::JointCount {
                expected: skeleton.num_joints(),
                found: self.joints.len(),
            });
        }
        Ok(())
    }

    /// Applies `f` to every joint.
    pub fn map(&self, f: impl Fn(&Vector3<f64>) -> Vector3<f64>) -> Pose3D {
        Pose3D {
            skeleton: self.skeleton.clone(),
            joints: self.joints.iter().map(f).collect(),
        }
    }

    /// Joints stacked as `[x0, y0, z0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.joints.iter().flat_map(|j| [j.x, j.y, j.z]).collect()
    }

    pub fn from_flat(skeleton: SkeletonId, flat: &[f64]) -> Pose3D {
        Pose3D {
            skeleton,
            joints: flat
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        }
    }

    /// Mean per-joint Euclidean distance, no alignment.
    pub fn mean_joint_distance(&self, other: &Pose3D) -> f64 {
        let n = self.joints.len().max(1) as f64;
        self.joints
            .iter()
            .zip(&other.joints)
            .map(|(a, b)| (a - b).norm())
            .sum::<f64>()
            / n
    }
}

/// 2D joint positions in pixels, with optional validity flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub joints: Vec<Vector2<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<Vec<bool>>,
}

impl Pose2D {
    pub fn new(joints: Vec<Vector2<f64>>) -> Self {
        Pose2D {
            joints,
            valid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn is_valid(&self, joint: usize) -> bool {
        self.valid.as_ref().map_or(true, |v| v[joint])
    }

    pub fn is_finite(&self) -> bool {
        self.joints
            .iter()
            .enumerate()
            .all(|(i, j)| !self.is_valid(i) || (j.x.is_finite() && j.y.is_finite()))
    }

    pub fn translated(&self, offset: Vector2<f64>) -> Pose2D {
        Pose2D {
            joints: self.joints.iter().map(|j| j + offset).collect(),
            valid: self.valid.clone(),
        }
    }
}

/// Root position: mean of the skeleton's center joints (the hip midpoint
/// for the default skeleton).
pub fn root_center(pose: &Pose3D, skeleton: &Skeleton) -> Vector3<f64> {
    let c = skeleton.center_joints();
    c.iter().map(|&i| pose.joints[i]).sum::<Vector3<f64>>() / c.len() as f64
}

/// Euclidean length of every skeleton edge, in edge order.
pub fn limb_lengths(pose: &Pose3D, skeleton: &Skeleton) -> Result<Vec<f64>> {
    pose.check(skeleton)?;
    Ok(skeleton
        .edges()
        .iter()
        .map(|&(c, p)| (pose.joints[c] - pose.joints[p]).norm())
        .collect())
}
