use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::pose::{root_center, Pose3D, SkeletonId};
use super::Skeleton;
use crate::error::{Error, Result};

/// Ridge strength used when none is given.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Affine map for one joint: `target = matrix * source + offset`, both
/// root-centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMap {
    pub matrix: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

/// Per-joint linear regression between two skeleton conventions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetargetMap {
    pub source: SkeletonId,
    pub target: SkeletonId,
    pub regularization: f64,
    pub maps: Vec<JointMap>,
    /// Root-mean-square residual over the training pairs, mm.
    pub residual_rms: f64,
}

/// Fits one ridge-regularized affine map per joint on root-centered
/// coordinates. The offset is not penalized.
pub fn fit_retarget_map(
    pairs: &[(Pose3D, Pose3D)],
    source: &Skeleton,
    target: &Skeleton,
    regularization: f64,
) -> Result<RetargetMap> {
    const INPUT_DIM: usize = 3;
    if pairs.len() < INPUT_DIM + 1 {
        return Err(Error::InsufficientPairs {
            needed: INPUT_DIM + 1,
            got: pairs.len(),
        });
    }
    if source.num_joints() != target.num_joints() {
        return Err(Error::JointCount {
            expected: source.num_joints(),
            found: target.num_joints(),
        });
    }
    if !(regularization >= 0.0) {
        return Err(Error::InvalidParameter("regularization must be >= 0".into()));
    }
    let centered: Vec<(Pose3D, Pose3D)> = pairs
        .iter()
        .map(|(s, t)| {
            s.check(source)?;
            t.check(target)?;
            let rs = root_center(s, source);
            let rt = root_center(t, target);
            Ok((s.map(|j| j - rs), t.map(|j| j - rt)))
        })
        .collect::<Result<_>>()?;

    let mut maps = Vec::with_capacity(source.num_joints());
    let mut sq_residual = 0.0;
    for j in 0..source.num_joints() {
        // normal equations on [x; 1]
        let mut ata = Matrix4::<f64>::zeros();
        let mut aty = nalgebra::Matrix4x3::<f64>::zeros();
        for (s, t) in &centered {
            let x = Vector4::new(s.joints[j].x, s.joints[j].y, s.joints[j].z, 1.0);
            ata += x * x.transpose();
            aty += x * t.joints[j].transpose();
        }
        for d in 0..3 {
            ata[(d, d)] += regularization;
        }
        let chol = ata.cholesky().ok_or(Error::Singular("retarget map"))?;
        let w = chol.solve(&aty);
        // w is 4x3: rows 0..3 hold the transposed matrix, row 3 the offset
        let matrix = w.fixed_view::<3, 3>(0, 0).transpose();
        let offset = w.row(3).transpose();
        for (s, t) in &centered {
            sq_residual += (matrix * s.joints[j] + offset - t.joints[j]).norm_squared();
        }
        maps.push(JointMap { matrix, offset });
    }
    let residual_rms = (sq_residual / (centered.len() * source.num_joints()) as f64).sqrt();

    Ok(RetargetMap {
        source: source.id().clone(),
        target: target.id().clone(),
        regularization,
        maps,
        residual_rms,
    })
}

/// Applies a fitted map. The result keeps the source root position.
pub fn apply_retarget(map: &RetargetMap, pose: &Pose3D, source: &Skeleton) -> Result<Pose3D> {
    if pose.skeleton != map.source {
        return Err(Error::SkeletonMismatch {
            expected: map.source.to_string(),
            found: pose.skeleton.to_string(),
        });
    }
    pose.check(source)?;
    let root = root_center(pose, source);
    let joints = pose
        .joints
        .iter()
        .zip(&map.maps)
        .map(|(j, m)| m.matrix * (j - root) + m.offset + root)
        .collect();
    Ok(Pose3D::new(map.target.clone(), joints))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::skeleton::limb_lengths;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_poses(sk: &Skeleton, n: usize, seed: u64) -> Vec<Pose3D> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Pose3D::new(
                    sk.id().clone(),
                    (0..sk.num_joints())
                        .map(|_| {
                            Vector3::new(
                                rng.gen_range(-500.0..500.0),
                                rng.gen_range(-900.0..900.0),
                                rng.gen_range(-300.0..300.0),
                            )
                        })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn identity_pairs_give_identity_map() {
        let sk = Skeleton::default_14();
        let poses = random_poses(&sk, 20, 1);
        let pairs: Vec<_> = poses.iter().map(|p| (p.clone(), p.clone())).collect();
        let map = fit_retarget_map(&pairs, &sk, &sk, 0.0).unwrap();
        for m in &map.maps {
            assert!((m.matrix - Matrix3::identity()).abs().max() <= 1e-6);
            assert!(m.offset.abs().max() <= 1e-6);
        }
        let out = apply_retarget(&map, &poses[3], &sk).unwrap();
        assert!(out.mean_joint_distance(&poses[3]) <= 1e-6);
    }

    #[test]
    fn recovers_uniform_scale() {
        let sk = Skeleton::default_14();
        let target = sk.with_id("scaled");
        let poses = random_poses(&sk, 30, 2);
        let pairs: Vec<_> = poses
            .iter()
            .map(|p| {
                let root = root_center(p, &sk);
                let mut t = p.map(|j| root + (j - root) * 0.9);
                t.skeleton = target.id().clone();
                (p.clone(), t)
            })
            .collect();
        let map = fit_retarget_map(&pairs, &sk, &target, 0.0).unwrap();
        for m in &map.maps {
            assert!((m.matrix - Matrix3::identity() * 0.9).abs().max() <= 1e-6);
        }
        // limb lengths of a fresh pose scale by 0.9
        let fresh = &random_poses(&sk, 1, 9)[0];
        let out = apply_retarget(&map, fresh, &sk).unwrap();
        let a = limb_lengths(fresh, &sk).unwrap();
        let b = limb_lengths(&out, &target).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - 0.9 * x).abs() <= 1e-6 * x.max(1.0));
        }
        assert_eq!(out.skeleton, *target.id());
    }

    #[test]
    fn single_pair_is_insufficient() {
        let sk = Skeleton::default_14();
        let p = random_poses(&sk, 1, 3).remove(0);
        let err = fit_retarget_map(&[(p.clone(), p)], &sk, &sk, 0.0).unwrap_err();
        assert!(matches!(err, Error::InsufficientPairs { needed: 4, got: 1 }));
        assert!(err.to_string().contains("insufficient pairs"));
    }

    #[test]
    fn round_trip_within_fit_residual() {
        let sk = Skeleton::default_14();
        let target = sk.with_id("other");
        let poses = random_poses(&sk, 40, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let maps: Vec<(Matrix3<f64>, Vector3<f64>)> = (0..14)
            .map(|_| {
                let m = Matrix3::from_fn(|r, c| {
                    (if r == c { 1.0 } else { 0.0 }) + rng.gen_range(-0.2..0.2)
                });
                let o = Vector3::new(rng.gen_range(-20.0..20.0), 0.0, rng.gen_range(-5.0..5.0));
                (m, o)
            })
            .collect();
        let forward = RetargetMap {
            source: sk.id().clone(),
            target: target.id().clone(),
            regularization: 0.0,
            maps: maps
                .iter()
                .map(|(m, o)| JointMap {
                    matrix: *m,
                    offset: *o,
                })
                .collect(),
            residual_rms: 0.0,
        };
        let mapped: Vec<Pose3D> = poses
            .iter()
            .map(|p| apply_retarget(&forward, p, &sk).unwrap())
            .collect();
        let back_pairs: Vec<_> = mapped.iter().cloned().zip(poses.iter().cloned()).collect();
        let inverse = fit_retarget_map(&back_pairs, &target, &sk, 0.0).unwrap();
        // round trip over the training pairs reproduces exactly the fit residual
        let mut sq = 0.0;
        for (m, p) in mapped.iter().zip(&poses) {
            let back = apply_retarget(&inverse, m, &target).unwrap();
            let root_m = root_center(m, &target);
            let root_p = root_center(p, &sk);
            sq += back
                .joints
                .iter()
                .zip(&p.joints)
                .map(|(a, b)| ((a - root_m) - (b - root_p)).norm_squared())
                .sum::<f64>();
        }
        let rms = (sq / (poses.len() * 14) as f64).sqrt();
        assert!(rms <= inverse.residual_rms + 1e-9, "{rms} vs {}", inverse.residual_rms);
    }

    #[test]
    fn exact_linear_relation_is_reproduced() {
        let sk = Skeleton::default_14();
        let target = sk.with_id("t");
        let poses = random_poses(&sk, 25, 6);
        let m = Matrix3::new(1.1, 0.05, 0.0, -0.02, 0.95, 0.01, 0.0, 0.03, 1.02);
        let pairs: Vec<_> = poses
            .iter()
            .map(|p| {
                let root = root_center(p, &sk);
                let mut t = p.map(|j| root + m * (j - root));
                t.skeleton = target.id().clone();
                (p.clone(), t)
            })
            .collect();
        let map = fit_retarget_map(&pairs, &sk, &target, 0.0).unwrap();
        for (s, t) in &pairs {
            let out = apply_retarget(&map, s, &sk).unwrap();
            for (a, b) in out.joints.iter().zip(&t.joints) {
                assert!((a - b).norm() <= 1e-6 * b.norm().max(1.0));
            }
        }
    }

    #[test]
    fn wrong_source_is_rejected() {
        let sk = Skeleton::default_14();
        let poses = random_poses(&sk, 5, 7);
        let pairs: Vec<_> = poses.iter().map(|p| (p.clone(), p.clone())).collect();
        let map = fit_retarget_map(&pairs, &sk, &sk, DEFAULT_RIDGE).unwrap();
        let mut other = poses[0].clone();
        other.skeleton = SkeletonId::new("nope");
        assert!(matches!(
            apply_retarget(&map, &other, &sk),
            Err(Error::SkeletonMismatch { .. })
        ));
    }
}
