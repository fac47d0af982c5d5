//! Deterministic synthetic scenes: articulated poses, a perspective camera,
//! Gaussian unary maps and a perturbed pose database.

use std::sync::Arc;

use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lifter::{project_pose, CameraModel, Intrinsics};
use crate::psm::{UnaryMap, UnarySynthesis};
use crate::skeleton::{Pose2D, Pose3D, Skeleton};

/// Segment lengths in mm; the standing height is about 1.7 m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyDimensions {
    pub torso: f64,
    pub head: f64,
    pub shoulder_half: f64,
    pub hip_half: f64,
    pub upper_arm: f64,
    pub forearm: f64,
    pub thigh: f64,
    pub shin: f64,
}

impl Default for BodyDimensions {
    fn default() -> Self {
        BodyDimensions {
            torso: 520.0,
            head: 220.0,
            shoulder_half: 180.0,
            hip_half: 100.0,
            upper_arm: 290.0,
            forearm: 270.0,
            thigh: 470.0,
            shin: 460.0,
        }
    }
}

fn rot_x(deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), deg.to_radians())
}

fn rot_y(deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), deg.to_radians())
}

fn rot_z(deg: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), deg.to_radians())
}

/// Random anatomically plausible pose of the default 14-joint skeleton.
///
/// Body frame: `y` down, the subject faces `-z`, its left side is `+x`.
/// The hip midpoint is at the origin.
pub fn random_pose(rng: &mut ChaCha8Rng, dims: &BodyDimensions, skeleton: &Skeleton) -> Result<Pose3D> {
    let idx = |name: &str| {
        skeleton
            .joint_index(name)
            .ok_or_else(|| Error::InvalidSkeleton(format!("generator needs joint `{name}`")))
    };
    let down = Vector3::new(0.0, 1.0, 0.0);
    let mut joints = vec![Vector3::zeros(); skeleton.num_joints()];

    // forward lean bends towards -z, side lean about z
    let torso = rot_z(rng.gen_range(-10.0..10.0)) * rot_x(-rng.gen_range(-10.0..35.0)) * rot_y(rng.gen_range(-25.0..25.0));
    let neck = torso * (-down * dims.torso);
    let head_dir = rot_z(rng.gen_range(-15.0..15.0)) * rot_x(-rng.gen_range(-20.0..30.0)) * -down;
    joints[idx("neck")?] = neck;
    joints[idx("head")?] = neck + torso * head_dir * dims.head;

    for (side, sign) in [("l", 1.0), ("r", -1.0)] {
        let shoulder = neck + torso * Vector3::new(sign * dims.shoulder_half, 20.0, 0.0);
        // arm raise forward/back, then outward
        let flex = rng.gen_range(-40.0..150.0);
        let abd = rng.gen_range(0.0..100.0);
        let upper = rot_z(-sign * abd) * rot_x(-flex);
        let elbow_bend = rng.gen_range(0.0..140.0);
        let fore = upper * rot_x(-elbow_bend);
        let elbow = shoulder + torso * (upper * down) * dims.upper_arm;
        let wrist = elbow + torso * (fore * down) * dims.forearm;
        joints[idx(&format!("{side}_shoulder"))?] = shoulder;
        joints[idx(&format!("{side}_elbow"))?] = elbow;
        joints[idx(&format!("{side}_wrist"))?] = wrist;

        let hip = Vector3::new(sign * dims.hip_half, 0.0, 0.0);
        let hip_flex = rng.gen_range(-30.0..100.0);
        let hip_abd = rng.gen_range(-5.0..35.0);
        let thigh = rot_z(-sign * hip_abd) * rot_x(-hip_flex);
        let knee_bend = rng.gen_range(0.0..(hip_flex.max(0.0) + 30.0).min(130.0));
        let shin = thigh * rot_x(knee_bend);
        let knee = hip + (thigh * down) * dims.thigh;
        let ankle = knee + (shin * down) * dims.shin;
        joints[idx(&format!("{side}_hip"))?] = hip;
        joints[idx(&format!("{side}_knee"))?] = knee;
        joints[idx(&format!("{side}_ankle"))?] = ankle;
    }
    Ok(Pose3D::new(skeleton.id().clone(), joints))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatabaseSpec {
    pub include_ground_truth: bool,
    /// Seed poses in the bank; the ground truth is always one of them.
    pub seed_poses: usize,
    /// Perturbed copies stored per seed pose.
    pub copies: usize,
    /// Per-coordinate Gaussian noise of each copy, mm.
    pub perturbation_mm: f64,
}

impl Default for DatabaseSpec {
    fn default() -> Self {
        DatabaseSpec {
            include_ground_truth: true,
            seed_poses: 30,
            copies: 24,
            perturbation_mm: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Corruption {
    /// Displace the named joints' peaks by a fixed offset.
    Joints { joints: Vec<String>, offset_px: [f64; 2] },
    /// Pick one of the four limbs (elbow and wrist, or knee and ankle) and
    /// move its peaks by `offset_px` in a random direction.
    RandomLimb { offset_px: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraSpec {
    pub focal_px: [f64; 2],
    pub image_size: [usize; 2],
    pub distance_mm: [f64; 2],
    pub max_elevation_deg: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            focal_px: [1000.0, 1100.0],
            image_size: [640, 480],
            distance_mm: [4500.0, 5500.0],
            max_elevation_deg: 20.0,
        }
    }
}

/// False detections: extra unary peaks scattered around each true joint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClutterSpec {
    pub peaks_per_joint: usize,
    /// Peaks land between a quarter of this and this far from the joint.
    pub radius_px: f64,
    /// Amplitude range relative to the true peak.
    pub strength: [f64; 2],
}

impl Default for ClutterSpec {
    fn default() -> Self {
        ClutterSpec {
            peaks_per_joint: 0,
            radius_px: 40.0,
            strength: [0.5, 1.2],
        }
    }
}

/// Everything needed to regenerate one synthetic scene bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub sigma_px: f64,
    pub background: f64,
    /// Gaussian displacement of every unary peak, px.
    pub jitter_px: f64,
    pub corruption: Option<Corruption>,
    pub clutter: ClutterSpec,
    pub database: DatabaseSpec,
    pub camera: CameraSpec,
    /// Unary grid stride in px.
    pub stride_px: f64,
    /// Rendered 2D poses used to fit the initial pictorial structure.
    pub training_poses: usize,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            seed: 0,
            sigma_px: 2.0,
            background: 1e-3,
            jitter_px: 0.0,
            corruption: None,
            clutter: ClutterSpec::default(),
            database: DatabaseSpec::default(),
            camera: CameraSpec::default(),
            stride_px: 4.0,
            training_poses: 300,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub skeleton: Arc<Skeleton>,
    /// Ground truth in the camera frame.
    pub ground_truth: Pose3D,
    pub camera: CameraModel,
    pub intrinsics: Intrinsics,
    /// Noise-free rendering of the ground truth.
    pub ground_truth_2d: Pose2D,
    pub unaries: UnaryMap,
    pub corrupted_joints: Vec<usize>,
    pub database: Vec<Pose3D>,
    pub training_2d: Vec<Pose2D>,
}

/// Camera looking at a subject standing at the origin, with the given
/// yaw of the subject and elevation of the camera.
fn place_camera(rng: &mut ChaCha8Rng, spec: &CameraSpec) -> Result<(CameraModel, Intrinsics)> {
    let f = rng.gen_range(spec.focal_px[0]..=spec.focal_px[1]);
    let intr = Intrinsics::new(f, f, spec.image_size[0] as f64 / 2.0, spec.image_size[1] as f64 / 2.0)?;
    let yaw = rng.gen_range(0.0..360.0);
    let elevation = rng.gen_range(0.0..=spec.max_elevation_deg);
    let distance = rng.gen_range(spec.distance_mm[0]..=spec.distance_mm[1]);
    let rot = rot_x(elevation) * rot_y(yaw);
    let offset = Vector3::new(rng.gen_range(-150.0..150.0), rng.gen_range(-100.0..100.0), distance);
    Ok((CameraModel::new(intr, rot, offset), intr))
}

fn limb_joints(skeleton: &Skeleton, limb: usize) -> Result<Vec<usize>> {
    let names: [&str; 2] = match limb {
        0 => ["l_elbow", "l_wrist"],
        1 => ["r_elbow", "r_wrist"],
        2 => ["l_knee", "l_ankle"],
        _ => ["r_knee", "r_ankle"],
    };
    names
        .iter()
        .map(|n| {
            skeleton
                .joint_index(n)
                .ok_or_else(|| Error::InvalidSkeleton(format!("no joint `{n}`")))
        })
        .collect()
}

/// Renders a scene. Each component draws from its own stream of the
/// scenario seed, so changing one part of the spec leaves the others alone.
pub fn generate_scenario(spec: &Scenario, skeleton: &Arc<Skeleton>) -> Result<GeneratedScenario> {
    if !(spec.sigma_px >= 0.0 && spec.background >= 0.0 && spec.jitter_px >= 0.0 && spec.stride_px > 0.0) {
        return Err(Error::InvalidParameter("scenario noise levels must be >= 0".into()));
    }
    if spec.database.seed_poses == 0 || (spec.database.copies == 0 && !spec.database.include_ground_truth) {
        return Err(Error::InvalidParameter("database would be empty".into()));
    }
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(s);
        r
    };
    let dims = BodyDimensions::default();

    let mut pose_rng = stream(1);
    let (camera, intrinsics, gt_local, gt_2d) = loop {
        let gt_local = random_pose(&mut pose_rng, &dims, skeleton)?;
        let (camera, intrinsics) = place_camera(&mut pose_rng, &spec.camera)?;
        let Ok(gt_2d) = project_pose(&camera, &gt_local) else { continue };
        let (w, h) = (spec.camera.image_size[0] as f64, spec.camera.image_size[1] as f64);
        let margin = 8.0;
        if gt_2d
            .joints
            .iter()
            .all(|p| p.x >= margin && p.y >= margin && p.x <= w - margin && p.y <= h - margin)
        {
            break (camera, intrinsics, gt_local, gt_2d);
        }
    };

    let mut unary_rng = stream(2);
    let mut corrupted = Vec::new();
    let mut offset = Vector2::zeros();
    match &spec.corruption {
        None => {}
        Some(Corruption::Joints { joints, offset_px }) => {
            for n in joints {
                corrupted.push(
                    skeleton
                        .joint_index(n)
                        .ok_or_else(|| Error::InvalidParameter(format!("unknown joint `{n}`")))?,
                );
            }
            offset = Vector2::new(offset_px[0], offset_px[1]);
        }
        Some(Corruption::RandomLimb { offset_px }) => {
            corrupted = limb_joints(skeleton, unary_rng.gen_range(0..4))?;
            let a: f64 = unary_rng.gen_range(0.0..std::f64::consts::TAU);
            offset = Vector2::new(a.cos(), a.sin()) * *offset_px;
        }
    }
    let mut peaks = gt_2d.clone();
    if spec.jitter_px > 0.0 {
        let n = Normal::new(0.0, spec.jitter_px).expect("valid sigma");
        for p in peaks.joints.iter_mut() {
            *p += Vector2::new(n.sample(&mut unary_rng), n.sample(&mut unary_rng));
        }
    }
    let clutter = &spec.clutter;
    if !(clutter.radius_px >= 0.0 && clutter.strength[0] >= 0.0 && clutter.strength[0] <= clutter.strength[1]) {
        return Err(Error::InvalidParameter("clutter needs radius >= 0 and 0 <= strength[0] <= strength[1]".into()));
    }
    let mut clutter_rng = stream(5);
    let mut distractors = Vec::new();
    for (j, p) in gt_2d.joints.iter().enumerate() {
        for _ in 0..clutter.peaks_per_joint {
            let a: f64 = clutter_rng.gen_range(0.0..std::f64::consts::TAU);
            let r = clutter_rng.gen_range(0.25..=1.0) * clutter.radius_px;
            let amp = clutter_rng.gen_range(clutter.strength[0]..=clutter.strength[1]);
            distractors.push((j, p + Vector2::new(a.cos(), a.sin()) * r, amp));
        }
    }
    let synth = UnarySynthesis {
        distractors,
        width: (spec.camera.image_size[0] as f64 / spec.stride_px).ceil() as usize,
        height: (spec.camera.image_size[1] as f64 / spec.stride_px).ceil() as usize,
        stride: spec.stride_px,
        sigma_px: spec.sigma_px,
        background: spec.background,
        corrupted: corrupted.clone(),
        corruption_offset: offset,
    };
    let unaries = UnaryMap::synthesize(&peaks, &synth)?;

    let mut db_rng = stream(3);
    let noise = Normal::new(0.0, spec.database.perturbation_mm.max(0.0)).expect("valid sigma");
    let mut bank = vec![gt_local.clone()];
    while bank.len() < spec.database.seed_poses {
        bank.push(random_pose(&mut db_rng, &dims, skeleton)?);
    }
    let mut database = Vec::with_capacity(bank.len() * spec.database.copies + 1);
    if spec.database.include_ground_truth {
        database.push(gt_local.clone());
    }
    for seed_pose in &bank {
        for _ in 0..spec.database.copies {
            let copy = if spec.database.perturbation_mm > 0.0 {
                let mut c = seed_pose.clone();
                for j in c.joints.iter_mut() {
                    *j += Vector3::new(noise.sample(&mut db_rng), noise.sample(&mut db_rng), noise.sample(&mut db_rng));
                }
                c
            } else {
                seed_pose.clone()
            };
            database.push(copy);
        }
    }

    let mut train_rng = stream(4);
    let mut training_2d = Vec::with_capacity(spec.training_poses);
    while training_2d.len() < spec.training_poses {
        let p = random_pose(&mut train_rng, &dims, skeleton)?;
        let (cam, _) = place_camera(&mut train_rng, &spec.camera)?;
        if let Ok(x) = project_pose(&cam, &p) {
            training_2d.push(x);
        }
    }

    Ok(GeneratedScenario {
        skeleton: skeleton.clone(),
        ground_truth: camera.transform_pose(&gt_local),
        camera,
        intrinsics,
        ground_truth_2d: gt_2d,
        unaries,
        corrupted_joints: corrupted,
        database,
        training_2d,
    })
}
