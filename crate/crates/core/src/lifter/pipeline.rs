use nalgebra::Vector3;
use rayon::prelude::*;
use serde::Serialize;

use super::camera::{project_pose, CameraModel, Intrinsics};
use super::energy::{EnergyBreakdown, EnergyModel};
use super::params::{EnergyParams, SelectionMode};
use super::pca::fit_pca;
use super::projection::{estimate_projection, ProjectionOptions};
use super::solve::minimize_energy;
use super::weights::compute_weights;
use crate::error::{Error, Result};
use crate::mocap::MoCapIndex;
use crate::psm::{infer_map_default, refine_pose, PsmModel, SetCandidates, UnaryMap};
use crate::skeleton::{root_center, JointSetLabel, Pose2D, Pose3D, Skeleton};

/// Retrieval, camera and weights of one joint set in one iteration.
#[derive(Debug, Clone)]
pub struct SetState {
    pub label: JointSetLabel,
    /// Retrieved poses in the frame of the matching virtual camera.
    pub poses: Vec<Pose3D>,
    pub entries: Vec<u32>,
    pub camera: CameraModel,
    pub camera_energy: f64,
    pub projected: Vec<Pose2D>,
    pub weights: Vec<f64>,
    /// Neighbours that survived the top-`K_w` cut.
    pub kept: Vec<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetRecord {
    pub label: JointSetLabel,
    pub camera: Option<CameraModel>,
    pub camera_energy: Option<f64>,
    pub posterior: Option<f64>,
    pub selection_energy: Option<f64>,
    pub weights: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub input_pose_2d: Vec<[f64; 2]>,
    pub refined_pose_2d: Vec<[f64; 2]>,
    pub selected_set: JointSetLabel,
    pub sets: Vec<SetRecord>,
}

#[derive(Debug, Clone)]
pub struct LiftResult {
    /// Estimate in the camera frame, mm.
    pub pose_3d: Pose3D,
    /// Estimate in the root-centered retrieval frame.
    pub pose_3d_local: Pose3D,
    /// Weighted average of the kept neighbours of the selected set.
    pub average_pose_3d: Pose3D,
    pub pose_2d: Pose2D,
    pub selected_set: JointSetLabel,
    pub camera: CameraModel,
    pub energy: EnergyBreakdown,
    pub iterations: Vec<IterationRecord>,
}

fn points2(p: &Pose2D) -> Vec<[f64; 2]> {
    p.joints.iter().map(|j| [j.x, j.y]).collect()
}

fn points3(p: &Pose3D) -> Vec<[f64; 3]> {
    p.joints.iter().map(|j| [j.x, j.y, j.z]).collect()
}

impl LiftResult {
    pub fn to_json(&self, params: &EnergyParams) -> serde_json::Value {
        serde_json::json!({
            "skeleton": self.pose_3d.skeleton.as_str(),
            "pose_3d_mm": points3(&self.pose_3d),
            "pose_3d_local_mm": points3(&self.pose_3d_local),
            "average_pose_3d_mm": points3(&self.average_pose_3d),
            "pose_2d_px": points2(&self.pose_2d),
            "selected_set": self.selected_set,
            "camera": self.camera,
            "energy": self.energy,
            "iterations": self.iterations,
            "params": params,
        })
    }
}

fn run_set(
    index: &MoCapIndex,
    unaries: &UnaryMap,
    x: &Pose2D,
    label: JointSetLabel,
    intrinsics: Intrinsics,
    params: &EnergyParams,
    warm: Option<CameraModel>,
) -> Result<SetState> {
    let sk = index.skeleton();
    let hits = index.knn_query_pose2d(x, label, params.k)?.hits;
    let poses: Vec<Pose3D> = hits.iter().map(|h| index.aligned_pose(h)).collect();
    let opts = ProjectionOptions {
        restarts: params.restarts,
        eps: params.root_eps,
        optimizer: params.optimizer,
        warm_start: warm,
    };
    let (camera, camera_energy) = estimate_projection(&poses, x, sk.joint_set(label)?, intrinsics, &opts)?;
    let projected = poses
        .iter()
        .map(|p| project_pose(&camera, p))
        .collect::<Result<Vec<_>>>()?;
    let (weights, kept) = if params.weighted {
        let w = compute_weights(unaries, &projected, params.k_w);
        let mut order: Vec<usize> = (0..w.len()).collect();
        let raw = super::weights::raw_weights(unaries, &projected);
        order.sort_by(|&a, &b| raw[b].total_cmp(&raw[a]).then(a.cmp(&b)));
        let mut kept = vec![false; w.len()];
        for &i in order.iter().take(params.k_w) {
            kept[i] = true;
        }
        (w, kept)
    } else {
        (vec![1.0; poses.len()], vec![true; poses.len()])
    };
    Ok(SetState {
        label,
        entries: hits.iter().map(|h| h.entry).collect(),
        poses,
        camera,
        camera_energy,
        projected,
        weights,
        kept,
    })
}

/// Summed total energy of a set's retrieved poses (joint-set selection by
/// energy).
fn selection_energy(state: &SetState, x: &Pose2D, skeleton: &Skeleton, params: &EnergyParams) -> Result<f64> {
    let joints = skeleton.joint_set(state.label)?;
    let model = EnergyModel::new(&state.camera, joints, x, &state.poses, &state.weights, skeleton, params)?;
    Ok(state
        .poses
        .iter()
        .map(|p| model.value(&nalgebra::DVector::from_vec(p.to_flat())))
        .sum())
}

fn kept_projections(state: &SetState) -> SetCandidates {
    SetCandidates {
        label: state.label,
        poses: state
            .projected
            .iter()
            .zip(&state.kept)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.clone())
            .collect(),
    }
}

/// Weighted mean of the root-centered poses.
pub fn weighted_average(poses: &[Pose3D], weights: &[f64], skeleton: &Skeleton) -> Result<Pose3D> {
    let total: f64 = weights.iter().sum();
    if poses.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyPoseList);
    }
    let mut acc = vec![Vector3::zeros(); skeleton.num_joints()];
    for (p, w) in poses.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let root = root_center(p, skeleton);
        for (a, j) in acc.iter_mut().zip(&p.joints) {
            *a += (j - root) * (*w / total);
        }
    }
    Ok(Pose3D::new(skeleton.id().clone(), acc))
}

/// Full pipeline: initial pictorial-structure inference on the unaries,
/// then [`lift_from_pose2d`].
pub fn estimate_3d(
    unaries: &UnaryMap,
    index: &MoCapIndex,
    intrinsics: Intrinsics,
    params: &EnergyParams,
    initial_model: &PsmModel,
) -> Result<LiftResult> {
    let (x0, _) = infer_map_default(initial_model, unaries)?;
    lift_from_pose2d(unaries, index, intrinsics, params, x0)
}

/// Iterates retrieval, camera estimation, weighting and joint-set selection
/// from the 2D pose `x0`, then fits the final 3D pose once.
pub fn lift_from_pose2d(
    unaries: &UnaryMap,
    index: &MoCapIndex,
    intrinsics: Intrinsics,
    params: &EnergyParams,
    x0: Pose2D,
) -> Result<LiftResult> {
    params.validate()?;
    let sk = index.skeleton().clone();
    if x0.len() != sk.num_joints() || unaries.num_joints() != sk.num_joints() {
        return Err(Error::JointCount {
            expected: sk.num_joints(),
            found: if x0.len() != sk.num_joints() { x0.len() } else { unaries.num_joints() },
        });
    }
    let labels: Vec<JointSetLabel> = match params.mode {
        SelectionMode::AllOnly => vec![JointSetLabel::All],
        _ => JointSetLabel::ORDER.to_vec(),
    };
    let mut x = x0;
    let mut warm: Vec<Option<CameraModel>> = vec![None; labels.len()];
    let mut records = Vec::new();
    let mut selected: Option<(SetState, Pose2D)> = None;

    for iteration in 1..=params.iterations {
        let results: Vec<Result<SetState>> = labels
            .par_iter()
            .zip(warm.par_iter())
            .map(|(&label, w)| run_set(index, unaries, &x, label, intrinsics, params, w.clone()))
            .collect();
        let mut set_records: Vec<SetRecord> = Vec::new();
        let mut states: Vec<SetState> = Vec::new();
        for (slot, (label, r)) in labels.iter().zip(results).enumerate() {
            match r {
                Ok(s) => {
                    warm[slot] = Some(s.camera.clone());
                    set_records.push(SetRecord {
                        label: *label,
                        camera: Some(s.camera.clone()),
                        camera_energy: Some(s.camera_energy),
                        posterior: None,
                        selection_energy: None,
                        weights: s.weights.clone(),
                        error: None,
                    });
                    states.push(s);
                }
                Err(e) => {
                    log::warn!("iteration {iteration}: set {label} failed: {e}");
                    set_records.push(SetRecord {
                        label: *label,
                        camera: None,
                        camera_energy: None,
                        posterior: None,
                        selection_energy: None,
                        weights: Vec::new(),
                        error: Some(e.to_string()),
                    });
                }
            }
        }
        if states.is_empty() {
            return Err(Error::AllSetsFailed);
        }
        let refine_seed = params.seed.wrapping_add(1009 * iteration as u64);
        let record_of = |records: &mut Vec<SetRecord>, l: JointSetLabel| {
            records.iter().position(|r| r.label == l).expect("every label has a record")
        };
        let (label, refined) = match params.mode {
            SelectionMode::Posterior | SelectionMode::AllOnly => {
                let cands: Vec<SetCandidates> = states.iter().map(kept_projections).collect();
                let r = refine_pose(unaries, &sk, &cands, params.c_refine, params.alpha, refine_seed)?;
                for s in &r.per_set {
                    let i = record_of(&mut set_records, s.label);
                    set_records[i].posterior = Some(s.score);
                }
                (r.label, r.pose)
            }
            SelectionMode::Energy => {
                let mut best: Option<(JointSetLabel, f64)> = None;
                for s in &states {
                    let e = selection_energy(s, &x, &sk, params)?;
                    let i = record_of(&mut set_records, s.label);
                    set_records[i].selection_energy = Some(e);
                    if best.map_or(true, |(_, b)| e < b) {
                        best = Some((s.label, e));
                    }
                }
                let label = best.expect("at least one set").0;
                let state = states.iter().find(|s| s.label == label).expect("selected set exists");
                let r = refine_pose(
                    unaries,
                    &sk,
                    &[kept_projections(state)],
                    params.c_refine,
                    params.alpha,
                    refine_seed,
                )?;
                (label, r.pose)
            }
        };
        records.push(IterationRecord {
            iteration,
            input_pose_2d: points2(&x),
            refined_pose_2d: points2(&refined),
            selected_set: label,
            sets: set_records,
        });
        let state = states
            .into_iter()
            .find(|s| s.label == label)
            .expect("selected set exists");
        x = refined.clone();
        selected = Some((state, refined));
    }

    let (state, x_hat) = selected.expect("at least one iteration");
    let subspace = fit_pca(&state.poses, &state.weights, params.pca_dim, &sk)?;
    let (local, energy) = minimize_energy(
        &subspace,
        &state.camera,
        state.label,
        &x_hat,
        &state.poses,
        &state.weights,
        &sk,
        params,
    )?;
    let average = weighted_average(&state.poses, &state.weights, &sk)?;
    Ok(LiftResult {
        pose_3d: state.camera.transform_pose(&local),
        pose_3d_local: local,
        average_pose_3d: average,
        pose_2d: x_hat,
        selected_set: state.label,
        camera: state.camera,
        energy,
        iterations: records,
    })
}
