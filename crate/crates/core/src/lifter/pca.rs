use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{root_center, Pose3D, Skeleton, SkeletonId};

/// Weighted linear subspace of root-centered poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSubspace {
    pub skeleton: SkeletonId,
    pub mean: DVector<f64>,
    /// Orthonormal columns, one per retained component.
    pub basis: DMatrix<f64>,
    /// Non-increasing component variances.
    pub variances: Vec<f64>,
}

impl PoseSubspace {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn reconstruct(&self, z: &DVector<f64>) -> Pose3D {
        let flat = &self.mean + &self.basis * z;
        Pose3D::from_flat(self.skeleton.clone(), flat.as_slice())
    }

    /// Coefficients of the orthogonal projection of a root-centered pose.
    pub fn coefficients(&self, pose: &Pose3D) -> DVector<f64> {
        self.basis.tr_mul(&(DVector::from_vec(pose.to_flat()) - &self.mean))
    }
}

/// Weighted mean and leading eigenvectors of the weighted covariance of the
/// root-centered poses. The dimension is capped by `pca_dim`, by one less
/// than the number of positively weighted poses and by the numerical rank.
pub fn fit_pca(poses: &[Pose3D], weights: &[f64], pca_dim: usize, skeleton: &Skeleton) -> Result<PoseSubspace> {
    if poses.len() != weights.len() {
        return Err(Error::InvalidParameter("weights must align with poses".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidParameter("weights must be finite and >= 0".into()));
    }
    let used: Vec<(DVector<f64>, f64)> = poses
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(p, w)| {
            let root = root_center(p, skeleton);
            (DVector::from_vec(p.map(|j| j - root).to_flat()), *w)
        })
        .collect();
    if used.is_empty() {
        return Err(Error::EmptyPoseList);
    }
    let dim = used[0].0.len();
    let wsum: f64 = used.iter().map(|(_, w)| w).sum();
    let mut mean = DVector::zeros(dim);
    for (x, w) in &used {
        mean.axpy(*w / wsum, x, 1.0);
    }
    let empty = |mean| PoseSubspace {
        skeleton: skeleton.id().clone(),
        mean,
        basis: DMatrix::zeros(dim, 0),
        variances: Vec::new(),
    };
    if used.len() < 2 {
        return Ok(empty(mean));
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (x, w) in &used {
        let d = x - &mean;
        cov.ger(*w / wsum, &d, &d, 1.0);
    }
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let top = eig.eigenvalues[order[0]];
    let magnitude: f64 = used.iter().map(|(x, w)| w * x.norm_squared()).sum::<f64>() / wsum;
    let tol = 1e-10 * top.max(0.0) + 1e-14 * (1.0 + magnitude);
    let rank = order.iter().take_while(|&&i| eig.eigenvalues[i] > tol).count();
    let k = pca_dim.min(used.len() - 1).min(rank);
    if k == 0 {
        return Ok(empty(mean));
    }
    let mut basis = DMatrix::zeros(dim, k);
    let mut variances = Vec::with_capacity(k);
    for (c, &i) in order[..k].iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // sign convention: largest-magnitude entry positive
        let imax = v.iamax();
        if v[imax] < 0.0 {
            v = -v;
        }
        basis.set_column(c, &v);
        variances.push(eig.eigenvalues[i]);
    }
    Ok(PoseSubspace {
        skeleton: skeleton.id().clone(),
        mean,
        basis,
        variances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifter::energy::tests::random_pose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthonormal_and_sorted() {
        let sk = Skeleton::default_14();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let poses: Vec<Pose3D> = (0..40).map(|_| random_pose(&mut rng, &sk)).collect();
        let w: Vec<f64> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s = fit_pca(&poses, &w, 18, &sk).unwrap();
        assert_eq!(s.dim(), 18);
        let g = s.basis.tr_mul(&s.basis);
        assert!((g - DMatrix::identity(18, 18)).abs().max() <= 1e-9);
        assert!(s.variances.windows(2).all(|v| v[0] >= v[1]));
    }

    #[test]
    fn identical_poses_collapse_to_the_mean() {
        let sk = Skeleton::default_14();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = random_pose(&mut rng, &sk);
        let root = root_center(&p, &sk);
        let s = fit_pca(&vec![p.clone(); 5], &[1.0; 5], 18, &sk).unwrap();
        assert_eq!(s.dim(), 0);
        let back = s.reconstruct(&DVector::zeros(0));
        assert!(back.joints.iter().zip(&p.joints).all(|(a, b)| (a - (b - root)).norm() < 1e-9));
    }

    #[test]
    fn too_few_positive_weights() {
        let sk = Skeleton::default_14();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poses: Vec<Pose3D> = (0..4).map(|_| random_pose(&mut rng, &sk)).collect();
        assert_eq!(fit_pca(&poses, &[0.0, 1.0, 0.0, 0.0], 18, &sk).unwrap().dim(), 0);
        assert_eq!(fit_pca(&poses, &[0.5, 1.0, 0.0, 1.0], 18, &sk).unwrap().dim(), 2);
        assert!(fit_pca(&poses, &[0.0; 4], 18, &sk).is_err());
    }

    #[test]
    fn residual_shrinks_with_dimension() {
        let sk = Skeleton::default_14();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let poses: Vec<Pose3D> = (0..30).map(|_| random_pose(&mut rng, &sk)).collect();
        let w = vec![1.0; 30];
        let mut last = f64::INFINITY;
        for d in 1..=20 {
            let s = fit_pca(&poses, &w, d, &sk).unwrap();
            let res: f64 = poses
                .iter()
                .map(|p| {
                    let root = root_center(p, &sk);
                    let c = p.map(|j| j - root);
                    let r = s.reconstruct(&s.coefficients(&c));
                    r.mean_joint_distance(&c)
                })
                .sum();
            assert!(res <= last + 1e-9);
            last = res;
        }
    }
}
