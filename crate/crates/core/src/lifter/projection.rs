use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3};

use super::camera::{CameraModel, Intrinsics};
use super::optim::{minimize, Objective, OptimizerSettings, RootSum};
use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Pose3D};

/// Azimuths (degrees) tried when no warm start is available.
pub const RESTART_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];

#[derive(Debug, Clone)]
pub struct ProjectionOptions {
    pub restarts: usize,
    pub eps: f64,
    pub optimizer: OptimizerSettings,
    /// Previous estimate; when it converges to a finite energy the
    /// azimuth restarts are skipped.
    pub warm_start: Option<CameraModel>,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        ProjectionOptions {
            restarts: 4,
            eps: 1e-12,
            optimizer: OptimizerSettings::default(),
            warm_start: None,
        }
    }
}

struct CameraFit<'a> {
    intrinsics: Intrinsics,
    poses: &'a [Pose3D],
    joints: &'a [usize],
    target: &'a Pose2D,
    eps: f64,
}

type CamState = (Rotation3<f64>, Vector3<f64>);

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

impl Objective for CameraFit<'_> {
    type State = CamState;

    fn value(&self, (r, t): &CamState) -> f64 {
        let mut total = 0.0;
        for pose in self.poses {
            if pose.joints.iter().any(|j| !((r * j + t).z > 0.0)) {
                return f64::INFINITY;
            }
            let s: f64 = self
                .joints
                .iter()
                .map(|&i| (self.intrinsics.project(&(r * pose.joints[i] + t)) - self.target.joints[i]).norm_squared())
                .sum();
            total += (s + self.eps).powf(0.25);
        }
        total
    }

    fn linearize(&self, (r, t): &CamState) -> Option<RootSum> {
        let m = self.joints.len();
        let mut acc = RootSum::new(6);
        let mut res = DVector::zeros(2 * m);
        let mut jac = DMatrix::zeros(2 * m, 6);
        for pose in self.poses {
            if pose.joints.iter().any(|j| !((r * j + t).z > 0.0)) {
                return None;
            }
            for (a, &i) in self.joints.iter().enumerate() {
                let rx = r * pose.joints[i];
                let p = rx + t;
                let e = self.intrinsics.project(&p) - self.target.joints[i];
                res[2 * a] = e.x;
                res[2 * a + 1] = e.y;
                let jp = self.intrinsics.jacobian(&p);
                jac.fixed_view_mut::<2, 3>(2 * a, 0).copy_from(&(jp * -skew(&rx)));
                jac.fixed_view_mut::<2, 3>(2 * a, 3).copy_from(&jp);
            }
            acc.add(1.0, self.eps, &res, &jac);
        }
        Some(acc)
    }

    fn retract(&self, (r, t): &CamState, step: &DVector<f64>) -> CamState {
        let d = Rotation3::new(Vector3::new(step[0], step[1], step[2]));
        (d * r, t + Vector3::new(step[3], step[4], step[5]))
    }
}

/// Depth from similar triangles and a translation that lines up centroids.
fn initial_state(intr: &Intrinsics, rot: Rotation3<f64>, poses: &[Pose3D], joints: &[usize], x: &Pose2D) -> CamState {
    let n = joints.len() as f64;
    let mut mean = vec![Vector3::zeros(); joints.len()];
    for p in poses {
        for (m, &i) in mean.iter_mut().zip(joints) {
            *m += rot * p.joints[i];
        }
    }
    for m in mean.iter_mut() {
        *m /= poses.len() as f64;
    }
    let extent = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| (lo.min(y), hi.max(y)));
        hi - lo
    };
    let h3 = extent(&mut mean.iter().map(|m| m.y));
    let h2 = extent(&mut joints.iter().map(|&i| x.joints[i].y));
    let w3 = extent(&mut mean.iter().map(|m| m.x));
    let w2 = extent(&mut joints.iter().map(|&i| x.joints[i].x));
    let depth = if h3 > 1e-6 && h2 > 1e-6 {
        intr.fy * h3 / h2
    } else if w3 > 1e-6 && w2 > 1e-6 {
        intr.fx * w3 / w2
    } else {
        5000.0
    };
    let c3 = mean.iter().sum::<Vector3<f64>>() / n;
    let c2 = joints.iter().map(|&i| x.joints[i]).sum::<nalgebra::Vector2<f64>>() / n;
    let z = c3.z + depth;
    let tx = (c2.x - intr.cx) * z / intr.fx - c3.x;
    let ty = (c2.y - intr.cy) * z / intr.fy - c3.y;
    (rot, Vector3::new(tx, ty, depth))
}

/// Camera rotation and translation minimizing the summed projection error
/// of the retrieved poses over `joints`. Returns the camera and its energy.
pub fn estimate_projection(
    retrieved: &[Pose3D],
    x: &Pose2D,
    joints: &[usize],
    intrinsics: Intrinsics,
    options: &ProjectionOptions,
) -> Result<(CameraModel, f64)> {
    if retrieved.is_empty() {
        return Err(Error::EmptyPoseList);
    }
    if joints.is_empty() {
        return Err(Error::InvalidParameter("empty joint set".into()));
    }
    let fit = CameraFit {
        intrinsics,
        poses: retrieved,
        joints,
        target: x,
        eps: options.eps,
    };
    let run = |init: CamState| {
        let out = minimize(&fit, init, &options.optimizer);
        (out.state, out.value)
    };
    if let Some(w) = &options.warm_start {
        let (s, v) = run((w.rotation, w.translation));
        if v.is_finite() {
            return Ok((CameraModel::new(intrinsics, s.0, s.1), v));
        }
    }
    let mut best: Option<(CamState, f64)> = None;
    for az in RESTART_AZIMUTHS.iter().take(options.restarts.max(1)) {
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), az.to_radians());
        let (s, v) = run(initial_state(&intrinsics, rot, retrieved, joints, x));
        if v.is_finite() && best.as_ref().map_or(true, |(_, bv)| v < *bv) {
            best = Some((s, v));
        }
    }
    let ((r, t), v) = best.ok_or(Error::ProjectionFailed)?;
    Ok((CameraModel::new(intrinsics, r, t), v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifter::camera::project_pose;
    use crate::lifter::energy::tests::random_pose;
    use crate::skeleton::{JointSetLabel, Skeleton};
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rms(cam: &CameraModel, pose: &Pose3D, x: &Pose2D, joints: &[usize]) -> f64 {
        let p = project_pose(cam, pose).unwrap();
        (joints.iter().map(|&i| (p.joints[i] - x.joints[i]).norm_squared()).sum::<f64>() / joints.len() as f64).sqrt()
    }

    #[test]
    fn recovers_a_known_camera() {
        let sk = Skeleton::default_14();
        let intr = Intrinsics::new(1050.0, 1050.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for label in [JointSetLabel::All, JointSetLabel::Lt, JointSetLabel::Up] {
            let joints = sk.joint_set(label).unwrap();
            for _ in 0..5 {
                let pose = random_pose(&mut rng, &sk);
                let truth = CameraModel::from_axis_angle(
                    intr,
                    Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.5..0.5), rng.gen_range(-0.1..0.1)),
                    Vector3::new(rng.gen_range(-300.0..300.0), rng.gen_range(-200.0..200.0), rng.gen_range(4000.0..6000.0)),
                );
                let x = project_pose(&truth, &pose).unwrap();
                let (cam, _) = estimate_projection(&[pose.clone()], &x, joints, intr, &ProjectionOptions::default()).unwrap();
                let r1 = rms(&cam, &pose, &x, joints);
                assert!(r1 <= 1e-3, "{label} {r1}");

                // a uniform image shift is not a rigid motion under perspective,
                // so non-planar poses only come close
                let shifted = x.translated(Vector2::new(10.0, 0.0));
                let (cam2, _) =
                    estimate_projection(&[pose.clone()], &shifted, joints, intr, &ProjectionOptions::default()).unwrap();
                let r2 = rms(&cam2, &pose, &shifted, joints);
                assert!(r2 <= 0.25, "{label} {r2}");
                assert!(cam2.translation.x > cam.translation.x);
            }
        }
    }

    #[test]
    fn shift_is_exact_for_a_fronto_parallel_plane() {
        let sk = Skeleton::default_14();
        let intr = Intrinsics::new(1000.0, 1000.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let joints = sk.joint_set(JointSetLabel::All).unwrap();
        for _ in 0..5 {
            let flat = random_pose(&mut rng, &sk).map(|j| Vector3::new(j.x, j.y, 0.0));
            let truth = CameraModel::from_axis_angle(intr, Vector3::zeros(), Vector3::new(30.0, -20.0, 5000.0));
            let x = project_pose(&truth, &flat).unwrap();
            let shifted = x.translated(Vector2::new(10.0, 0.0));
            let (cam, _) = estimate_projection(&[flat.clone()], &x, joints, intr, &ProjectionOptions::default()).unwrap();
            let (cam2, _) =
                estimate_projection(&[flat.clone()], &shifted, joints, intr, &ProjectionOptions::default()).unwrap();
            assert!(rms(&cam, &flat, &x, joints) <= 1e-3);
            assert!(rms(&cam2, &flat, &shifted, joints) <= 1e-3);
            assert!((cam2.translation.x - cam.translation.x - 10.0 * 5000.0 / 1000.0).abs() < 1e-3);
        }
    }

    #[test]
    fn warm_start_is_used() {
        let sk = Skeleton::default_14();
        let intr = Intrinsics::new(1000.0, 1000.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pose = random_pose(&mut rng, &sk);
        let truth = CameraModel::from_axis_angle(intr, Vector3::new(0.0, 2.5, 0.0), Vector3::new(0.0, 0.0, 5000.0));
        let x = project_pose(&truth, &pose).unwrap();
        let joints = sk.joint_set(JointSetLabel::All).unwrap();
        let opts = ProjectionOptions {
            restarts: 1,
            warm_start: Some(truth.clone()),
            ..Default::default()
        };
        let (cam, e) = estimate_projection(&[pose.clone()], &x, joints, intr, &opts).unwrap();
        assert!(rms(&cam, &pose, &x, joints) <= 1e-3);
        assert!(e.is_finite());
    }
}
