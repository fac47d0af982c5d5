use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Pose3D};

/// `p ↦ scale · R p + t`; `scale` is 1 unless scale alignment was asked for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> RigidTransform {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    pub fn apply_pose(&self, pose: &Pose3D) -> Pose3D {
        pose.map(|j| self.apply(j))
    }
}

fn check_pair(est: &Pose3D, gt: &Pose3D) -> Result<()> {
    if est.skeleton != gt.skeleton {
        return Err(Error::SkeletonMismatch {
            expected: gt.skeleton.to_string(),
            found: est.skeleton.to_string(),
        });
    }
    if est.len() != gt.len() {
        return Err(Error::JointCount {
            expected: gt.len(),
            found: est.len(),
        });
    }
    Ok(())
}

/// Least-squares rotation and translation taking `est` onto `gt`
/// (orthogonal Procrustes, reflections excluded).
pub fn rigid_align(est: &Pose3D, gt: &Pose3D) -> Result<RigidTransform> {
    align(est, gt, false)
}

/// As [`rigid_align`], optionally with a uniform scale.
pub fn align(est: &Pose3D, gt: &Pose3D, allow_scale: bool) -> Result<RigidTransform> {
    check_pair(est, gt)?;
    let n = est.len() as f64;
    let ce = est.joints.iter().sum::<Vector3<f64>>() / n;
    let cg = gt.joints.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut var_e = 0.0;
    for (e, g) in est.joints.iter().zip(&gt.joints) {
        let de = e - ce;
        h += de * (g - cg).transpose();
        var_e += de.norm_squared();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested U"), svd.v_t.expect("requested V"));
    let mut s = svd.singular_values;
    // sort descending to find the weakest direction
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if !(s[idx[1]] > 1e-12 * s[idx[0]].max(1e-300)) {
        return Err(Error::DegenerateAlignment);
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let mut dm = Matrix3::identity();
    if d < 0.0 {
        dm[(idx[2], idx[2])] = -1.0;
        s[idx[2]] = -s[idx[2]];
    }
    let rotation = v * dm * u.transpose();
    let scale = if allow_scale && var_e > 0.0 { s.sum() / var_e } else { 1.0 };
    let translation = cg - rotation * ce * scale;
    Ok(RigidTransform {
        rotation,
        translation,
        scale,
    })
}

/// Mean per-joint distance after optimal rigid alignment of `est` onto `gt`.
pub fn pose_error_3d(est: &Pose3D, gt: &Pose3D) -> Result<f64> {
    pose_error_3d_with(est, gt, false)
}

pub fn pose_error_3d_with(est: &Pose3D, gt: &Pose3D, allow_scale: bool) -> Result<f64> {
    let t = align(est, gt, allow_scale)?;
    Ok(est
        .joints
        .iter()
        .zip(&gt.joints)
        .map(|(e, g)| (t.apply(e) - g).norm())
        .sum::<f64>()
        / est.len() as f64)
}

/// Mean per-joint pixel distance, no alignment.
pub fn pose_error_2d(est: &Pose2D, gt: &Pose2D) -> Result<f64> {
    if est.len() != gt.len() || est.is_empty() {
        return Err(Error::JointCount {
            expected: gt.len(),
            found: est.len(),
        });
    }
    Ok(est.joints.iter().zip(&gt.joints).map(|(a, b)| (a - b).norm()).sum::<f64>() / est.len() as f64)
}
