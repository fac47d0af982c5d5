use nalgebra::Vector3;

use super::pose::{root_center, Pose3D};
use super::Skeleton;

/// Default duplicate threshold, mean per-joint distance in mm.
pub const DEFAULT_DEDUP_MM: f64 = 1.5;

/// Greedy sequential filter: a pose is dropped iff its mean per-joint
/// distance (after root centering) to an already retained pose is below
/// `threshold_mm`. Survivors keep their input order.
pub fn deduplicate(poses: &[Pose3D], skeleton: &Skeleton, threshold_mm: f64) -> Vec<Pose3D> {
    deduplicate_indices(poses, skeleton, threshold_mm)
        .into_iter()
        .map(|i| poses[i].clone())
        .collect()
}

/// Input indices of the poses [`deduplicate`] keeps.
pub fn deduplicate_indices(poses: &[Pose3D], skeleton: &Skeleton, threshold_mm: f64) -> Vec<usize> {
    let mut kept: Vec<(usize, Vec<Vector3<f64>>)> = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        let root = root_center(pose, skeleton);
        let centered: Vec<Vector3<f64>> = pose.joints.iter().map(|j| j - root).collect();
        let duplicate = kept.iter().any(|(_, other)| {
            let d: f64 = centered
                .iter()
                .zip(other)
                .map(|(a, b)| (a - b).norm())
                .sum::<f64>()
                / centered.len() as f64;
            d < threshold_mm
        });
        if !duplicate {
            kept.push((i, centered));
        }
    }
    kept.into_iter().map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pose(sk: &Skeleton, offset: f64) -> Pose3D {
        Pose3D::new(
            sk.id().clone(),
            (0..14)
                .map(|i| Vector3::new(i as f64 * 10.0 + offset, -(i as f64) * 50.0, 0.0))
                .collect(),
        )
    }

    #[test]
    fn identical_poses_collapse() {
        let sk = Skeleton::default_14();
        let poses = vec![pose(&sk, 0.0); 10];
        assert_eq!(deduplicate(&poses, &sk, DEFAULT_DEDUP_MM).len(), 1);
    }

    #[test]
    fn translation_is_ignored() {
        let sk = Skeleton::default_14();
        let a = pose(&sk, 0.0);
        let b = a.map(|j| j + Vector3::new(500.0, 20.0, -30.0));
        assert_eq!(deduplicate(&[a, b], &sk, DEFAULT_DEDUP_MM).len(), 1);
    }

    #[test]
    fn distinct_poses_survive() {
        let sk = Skeleton::default_14();
        let a = pose(&sk, 0.0);
        let mut b = a.clone();
        // move every joint but keep the hips (the root) fixed: mean distance 10 mm
        let (l, r) = sk.heading_pair();
        for (i, j) in b.joints.iter_mut().enumerate() {
            if i != l && i != r {
                j.z += 10.0 * 14.0 / 12.0;
            }
        }
        let out = deduplicate(&[a.clone(), b.clone()], &sk, DEFAULT_DEDUP_MM);
        assert_eq!(out, vec![a, b]);
    }

    proptest! {
        #[test]
        fn idempotent(offsets in proptest::collection::vec(0.0f64..5.0, 1..30)) {
            let sk = Skeleton::default_14();
            let poses: Vec<Pose3D> = offsets
                .iter()
                .enumerate()
                .map(|(k, &o)| {
                    let mut p = pose(&sk, 0.0);
                    p.joints[k % 14].z += o * 14.0;
                    p
                })
                .collect();
            let once = deduplicate(&poses, &sk, DEFAULT_DEDUP_MM);
            let twice = deduplicate(&once, &sk, DEFAULT_DEDUP_MM);
            prop_assert_eq!(once, twice);
        }
    }
}
