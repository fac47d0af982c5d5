use std::sync::Arc;

use nalgebra::Vector2;

use super::gmm::fit_binaries;
use super::infer::{edge_offsets, infer_map, push_unique, PsmModel};
use super::unary::UnaryMap;
use crate::error::{Error, Result};
use crate::skeleton::{JointSetLabel, Pose2D, Skeleton};

pub const DEFAULT_REFINE_COMPONENTS: usize = 5;
pub const REFINE_PEAKS: usize = 20;

/// Projected full-body poses retrieved through one joint set.
#[derive(Debug, Clone)]
pub struct SetCandidates {
    pub label: JointSetLabel,
    pub poses: Vec<Pose2D>,
}

#[derive(Debug, Clone)]
pub struct SetPosterior {
    pub label: JointSetLabel,
    pub pose: Pose2D,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Refinement {
    pub pose: Pose2D,
    pub label: JointSetLabel,
    /// One entry per input set, in set order.
    pub per_set: Vec<SetPosterior>,
}

/// Re-estimates the 2D pose under a pictorial structure whose binaries
/// come from each set's projected poses, and keeps the set with the
/// highest posterior. Ties go to the earlier set in `all, up, lw, lt, rt`.
pub fn refine_pose(
    unaries: &UnaryMap,
    skeleton: &Arc<Skeleton>,
    projected: &[SetCandidates],
    c_refine: usize,
    alpha: f64,
    seed: u64,
) -> Result<Refinement> {
    if projected.is_empty() {
        return Err(Error::AllSetsFailed);
    }
    let mut sets: Vec<&SetCandidates> = projected.iter().collect();
    sets.sort_by_key(|s| s.label.as_u8());

    let peaks: Vec<Vec<Vector2<f64>>> = (0..unaries.num_joints())
        .map(|j| unaries.local_maxima(j, REFINE_PEAKS))
        .collect();

    let mut per_set = Vec::with_capacity(sets.len());
    for set in sets {
        if set.poses.is_empty() {
            return Err(Error::EmptyPoseList);
        }
        let offsets = edge_offsets(skeleton, &set.poses)?;
        let set_seed = seed.wrapping_add(u64::from(set.label.as_u8()));
        let model = PsmModel::new(skeleton.clone(), fit_binaries(&offsets, c_refine, alpha, set_seed)?)?;
        let candidates: Vec<Vec<Vector2<f64>>> = (0..skeleton.num_joints())
            .map(|j| {
                let mut c = Vec::new();
                push_unique(&mut c, set.poses.iter().map(|p| p.joints[j]));
                push_unique(&mut c, peaks[j].iter().copied());
                c
            })
            .collect();
        let (pose, score) = infer_map(&model, unaries, &candidates)?;
        per_set.push(SetPosterior {
            label: set.label,
            pose,
            score,
        });
    }

    let mut best = 0;
    for (i, s) in per_set.iter().enumerate() {
        if s.score > per_set[best].score {
            best = i;
        }
    }
    Ok(Refinement {
        pose: per_set[best].pose.clone(),
        label: per_set[best].label,
        per_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psm::unary::UnarySynthesis;

    fn standing() -> Pose2D {
        let pts = [
            (320.0, 100.0),
            (320.0, 140.0),
            (290.0, 145.0),
            (350.0, 145.0),
            (280.0, 200.0),
            (360.0, 200.0),
            (276.0, 252.0),
            (364.0, 252.0),
            (304.0, 252.0),
            (336.0, 252.0),
            (300.0, 328.0),
            (340.0, 328.0),
            (300.0, 400.0),
            (340.0, 400.0),
        ];
        Pose2D::new(pts.iter().map(|&(x, y)| Vector2::new(x, y)).collect())
    }

    #[test]
    fn consensus_keeps_the_pose_and_prefers_all() {
        let sk = Skeleton::default_14();
        let gt = standing();
        let unaries = UnaryMap::synthesize(&gt, &UnarySynthesis::default()).unwrap();
        let projected: Vec<SetCandidates> = JointSetLabel::ORDER
            .iter()
            .rev()
            .map(|&label| SetCandidates {
                label,
                poses: vec![gt.clone(); 8],
            })
            .collect();
        let r = refine_pose(&unaries, &sk, &projected, 5, 0.1, 1).unwrap();
        assert_eq!(r.pose.joints, gt.joints);
        assert_eq!(r.label, JointSetLabel::All);
        assert_eq!(r.per_set[0].label, JointSetLabel::All);
    }

    #[test]
    fn selected_set_has_the_highest_score() {
        let sk = Skeleton::default_14();
        let gt = standing();
        let unaries = UnaryMap::synthesize(&gt, &UnarySynthesis::default()).unwrap();
        let projected: Vec<SetCandidates> = JointSetLabel::ORDER
            .iter()
            .enumerate()
            .map(|(i, &label)| SetCandidates {
                label,
                poses: (0..6)
                    .map(|k| gt.translated(Vector2::new((i * 3 + k) as f64, (k as f64) * 1.5)))
                    .collect(),
            })
            .collect();
        let r = refine_pose(&unaries, &sk, &projected, 5, 0.1, 2).unwrap();
        let chosen = r.per_set.iter().find(|s| s.label == r.label).unwrap().score;
        assert!(r.per_set.iter().all(|s| s.score <= chosen));
    }
}
