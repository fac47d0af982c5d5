use nalgebra::DVector;

use super::camera::CameraModel;
use super::energy::{EnergyBreakdown, EnergyModel};
use super::optim::{minimize, Objective, RootSum};
use super::params::EnergyParams;
use super::pca::PoseSubspace;
use crate::error::{Error, Result};
use crate::skeleton::{JointSetLabel, Pose2D, Pose3D, Skeleton};

struct SubspaceFit<'a> {
    energy: EnergyModel<'a>,
    subspace: &'a PoseSubspace,
}

impl SubspaceFit<'_> {
    fn joints(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.subspace.mean + &self.subspace.basis * z
    }
}

impl Objective for SubspaceFit<'_> {
    type State = DVector<f64>;

    fn value(&self, z: &DVector<f64>) -> f64 {
        self.energy.value(&self.joints(z))
    }

    fn linearize(&self, z: &DVector<f64>) -> Option<RootSum> {
        let full = self.energy.root_sum(&self.joints(z))?;
        let b = &self.subspace.basis;
        Some(RootSum {
            value: full.value,
            grad: b.tr_mul(&full.grad),
            hess: b.tr_mul(&(&full.hess * b)),
        })
    }

    fn retract(&self, z: &DVector<f64>, step: &DVector<f64>) -> DVector<f64> {
        z + step
    }
}

/// Minimizes the total energy over subspace coefficients, starting at the
/// subspace mean. Returns the pose (same frame as the retrieved poses) and
/// its energy terms.
#[allow(clippy::too_many_arguments)]
pub fn minimize_energy(
    subspace: &PoseSubspace,
    cam: &CameraModel,
    set: JointSetLabel,
    x: &Pose2D,
    retrieved: &[Pose3D],
    weights: &[f64],
    skeleton: &Skeleton,
    params: &EnergyParams,
) -> Result<(Pose3D, EnergyBreakdown)> {
    let joints = skeleton.joint_set(set)?;
    let energy = EnergyModel::new(cam, joints, x, retrieved, weights, skeleton, params)?;
    let fit = SubspaceFit { energy, subspace };
    let z0 = DVector::zeros(subspace.dim());
    if !fit.value(&z0).is_finite() {
        return Err(Error::NonFiniteEnergy);
    }
    let z = if subspace.dim() == 0 {
        z0
    } else {
        minimize(&fit, z0, &params.optimizer).state
    };
    let flat = fit.joints(&z);
    Ok((
        Pose3D::from_flat(subspace.skeleton.clone(), flat.as_slice()),
        fit.energy.breakdown(&flat),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifter::camera::{project_pose, Intrinsics};
    use crate::lifter::energy::tests::random_pose;
    use crate::lifter::pca::fit_pca;
    use crate::skeleton::root_center;
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn centered(p: &Pose3D, sk: &Skeleton) -> Pose3D {
        let r = root_center(p, sk);
        p.map(|j| j - r)
    }

    fn cam() -> CameraModel {
        CameraModel::new(
            Intrinsics::new(1000.0, 1000.0, 320.0, 240.0).unwrap(),
            Rotation3::identity(),
            Vector3::new(0.0, 0.0, 5000.0),
        )
    }

    #[test]
    fn single_neighbour_without_projection_term() {
        let sk = Skeleton::default_14();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let pose = centered(&random_pose(&mut rng, &sk), &sk);
        let params = EnergyParams {
            omega_p: 0.0,
            ..Default::default()
        };
        let s = fit_pca(&[pose.clone()], &[1.0], 18, &sk).unwrap();
        let x = project_pose(&cam(), &pose).unwrap();
        let (est, _) =
            minimize_energy(&s, &cam(), JointSetLabel::All, &x, &[pose.clone()], &[1.0], &sk, &params).unwrap();
        assert!(est.joints.iter().zip(&pose.joints).all(|(a, b)| (a - b).norm() <= 1e-6));
    }

    #[test]
    fn never_worse_than_the_mean() {
        let sk = Skeleton::default_14();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let poses: Vec<Pose3D> = (0..30).map(|_| centered(&random_pose(&mut rng, &sk), &sk)).collect();
            let w: Vec<f64> = (0..30).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s = fit_pca(&poses, &w, 18, &sk).unwrap();
            let x = project_pose(&cam(), &poses[0]).unwrap();
            let p = EnergyParams::default();
            let joints = sk.joint_set(JointSetLabel::Up).unwrap();
            let c = cam();
            let model = EnergyModel::new(&c, joints, &x, &poses, &w, &sk, &p).unwrap();
            let start = model.value(&s.mean);
            let (_, e) = minimize_energy(&s, &c, JointSetLabel::Up, &x, &poses, &w, &sk, &p).unwrap();
            assert!(e.total <= start);
            assert!(e.total < start * 0.999);
        }
    }
}
