//! The three energy terms and their derivatives with respect to the flat
//! joint vector `[x0, y0, z0, x1, ...]` of the pose.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::CameraModel;
use super::optim::RootSum;
use super::params::EnergyParams;
use crate::error::{Error, Result};
use crate::skeleton::{limb_lengths, JointSetLabel, Pose2D, Pose3D, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub projection: f64,
    pub retrieval: f64,
    pub anthropometric: f64,
    pub total: f64,
}

/// Projection error over the joints of one set.
pub fn energy_p(pose: &Pose3D, cam: &CameraModel, joints: &[usize], x: &Pose2D, eps: f64) -> Result<f64> {
    let mut s = 0.0;
    for &i in joints {
        let p = cam.to_camera(&pose.joints[i]);
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { joint: i, depth: p.z });
        }
        s += (cam.intrinsics.project(&p) - x.joints[i]).norm_squared();
    }
    Ok((s + eps).powf(0.25))
}

/// Weighted distance to the retrieved poses over all joints.
pub fn energy_r(pose: &Pose3D, retrieved: &[Pose3D], weights: &[f64], eps: f64) -> f64 {
    retrieved
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w != 0.0)
        .map(|(r, w)| {
            let s: f64 = r.joints.iter().zip(&pose.joints).map(|(a, b)| (a - b).norm_squared()).sum();
            w * (s + eps).powf(0.25)
        })
        .sum()
}

/// Weighted limb-length disagreement with the retrieved poses.
pub fn energy_a(pose: &Pose3D, retrieved: &[Pose3D], weights: &[f64], skeleton: &Skeleton, eps: f64) -> Result<f64> {
    let own = limb_lengths(pose, skeleton)?;
    let mut total = 0.0;
    for (r, w) in retrieved.iter().zip(weights) {
        if *w == 0.0 {
            continue;
        }
        let theirs = limb_lengths(r, skeleton)?;
        let s: f64 = own.iter().zip(&theirs).map(|(a, b)| (a - b) * (a - b)).sum();
        total += w * (s + eps).powf(0.25);
    }
    Ok(total)
}

/// Precomputed energy for a fixed camera, set, 2D pose and neighbours.
#[derive(Debug, Clone)]
pub(crate) struct EnergyModel<'a> {
    pub cam: &'a CameraModel,
    pub set_joints: &'a [usize],
    pub target: &'a Pose2D,
    pub edges: &'a [(usize, usize)],
    /// Retrieved poses with nonzero weight: flat joints, limb lengths, weight.
    pub neighbours: Vec<(DVector<f64>, Vec<f64>, f64)>,
    pub omega: [f64; 3],
    pub eps: f64,
    pub n: usize,
}

impl<'a> EnergyModel<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        cam: &'a CameraModel,
        set_joints: &'a [usize],
        target: &'a Pose2D,
        retrieved: &[Pose3D],
        weights: &[f64],
        skeleton: &'a Skeleton,
        params: &EnergyParams,
    ) -> Result<EnergyModel<'a>> {
        if retrieved.len() != weights.len() {
            return Err(Error::InvalidParameter("weights must align with retrieved poses".into()));
        }
        let mut neighbours = Vec::new();
        for (r, &w) in retrieved.iter().zip(weights) {
            if w != 0.0 {
                neighbours.push((DVector::from_vec(r.to_flat()), limb_lengths(r, skeleton)?, w));
            }
        }
        Ok(EnergyModel {
            cam,
            set_joints,
            target,
            edges: skeleton.edges(),
            neighbours,
            omega: [params.omega_p, params.omega_r, params.omega_a],
            eps: params.root_eps,
            n: skeleton.num_joints(),
        })
    }

    fn joint(x: &DVector<f64>, i: usize) -> Vector3<f64> {
        Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
    }

    fn lengths(&self, x: &DVector<f64>) -> Vec<f64> {
        self.edges
            .iter()
            .map(|&(c, p)| (Self::joint(x, c) - Self::joint(x, p)).norm())
            .collect()
    }

    pub fn breakdown(&self, x: &DVector<f64>) -> EnergyBreakdown {
        let mut proj = 0.0;
        let mut finite = true;
        for &i in self.set_joints {
            let p = self.cam.to_camera(&Self::joint(x, i));
            if !(p.z > 0.0) {
                finite = false;
                break;
            }
            proj += (self.cam.intrinsics.project(&p) - self.target.joints[i]).norm_squared();
        }
        let projection = if finite { (proj + self.eps).powf(0.25) } else { f64::INFINITY };
        let own = self.lengths(x);
        let mut retrieval = 0.0;
        let mut anthropometric = 0.0;
        for (flat, len, w) in &self.neighbours {
            retrieval += w * ((x - flat).norm_squared() + self.eps).powf(0.25);
            let s: f64 = own.iter().zip(len).map(|(a, b)| (a - b) * (a - b)).sum();
            anthropometric += w * (s + self.eps).powf(0.25);
        }
        let [wp, wr, wa] = self.omega;
        EnergyBreakdown {
            projection,
            retrieval,
            anthropometric,
            total: wp * projection + wr * retrieval + wa * anthropometric,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        self.breakdown(x).total
    }

    /// Value, gradient and reweighted Gauss-Newton matrix in joint space.
    pub fn root_sum(&self, x: &DVector<f64>) -> Option<RootSum> {
        let dim = 3 * self.n;
        let [wp, wr, wa] = self.omega;
        let mut total = RootSum::new(dim);

        let m = self.set_joints.len();
        let mut r = DVector::zeros(2 * m);
        let mut j = DMatrix::zeros(2 * m, dim);
        let rot = self.cam.rotation.matrix();
        for (a, &i) in self.set_joints.iter().enumerate() {
            let p = self.cam.to_camera(&Self::joint(x, i));
            if !(p.z > 0.0) {
                return None;
            }
            let e = self.cam.intrinsics.project(&p) - self.target.joints[i];
            r[2 * a] = e.x;
            r[2 * a + 1] = e.y;
            let jp = self.cam.intrinsics.jacobian(&p) * rot;
            j.fixed_view_mut::<2, 3>(2 * a, 3 * i).copy_from(&jp);
        }
        let mut part = RootSum::new(dim);
        part.add(1.0, self.eps, &r, &j);
        part.scale(wp);
        total.accumulate(&part);

        let mut ret = RootSum::new(dim);
        for (flat, _, w) in &self.neighbours {
            ret.add_identity(*w, self.eps, &(x - flat));
        }
        ret.scale(wr);
        total.accumulate(&ret);

        let own = self.lengths(x);
        let ne = self.edges.len();
        let mut jl = DMatrix::zeros(ne, dim);
        for (e, &(c, p)) in self.edges.iter().enumerate() {
            if own[e] > 0.0 {
                let u = (Self::joint(x, c) - Self::joint(x, p)) / own[e];
                for d in 0..3 {
                    jl[(e, 3 * c + d)] += u[d];
                    jl[(e, 3 * p + d)] -= u[d];
                }
            }
        }
        let mut anth = RootSum::new(dim);
        let own_v = DVector::from_vec(own);
        for (_, len, w) in &self.neighbours {
            let rl = &own_v - DVector::from_column_slice(len);
            anth.add(*w, self.eps, &rl, &jl);
        }
        anth.scale(wa);
        total.accumulate(&anth);
        Some(total)
    }
}

/// `ω_p E_p + ω_r E_r + ω_a E_a` and its gradient with respect to the
/// flat joint vector of `pose`.
#[allow(clippy::too_many_arguments)]
pub fn total_energy(
    pose: &Pose3D,
    cam: &CameraModel,
    set: JointSetLabel,
    x: &Pose2D,
    retrieved: &[Pose3D],
    weights: &[f64],
    skeleton: &Skeleton,
    params: &EnergyParams,
) -> Result<(f64, Vec<f64>)> {
    pose.check(skeleton)?;
    let joints = skeleton.joint_set(set)?;
    let model = EnergyModel::new(cam, joints, x, retrieved, weights, skeleton, params)?;
    let flat = DVector::from_vec(pose.to_flat());
    match model.root_sum(&flat) {
        Some(rs) => Ok((rs.value, rs.grad.iter().copied().collect())),
        None => {
            let (joint, depth) = joints
                .iter()
                .map(|&i| (i, cam.to_camera(&pose.joints[i]).z))
                .find(|(_, z)| !(*z > 0.0))
                .expect("a joint is behind the camera");
            Err(Error::BehindCamera { joint, depth })
        }
    }
}
