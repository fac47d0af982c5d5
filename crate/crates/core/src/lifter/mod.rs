//! Lifting a 2D pose to 3D: camera estimation, neighbour weighting,
//! joint-set selection and energy minimization in a pose subspace.

mod camera;
mod energy;
mod optim;
mod params;
mod pca;
mod pipeline;
mod projection;
mod solve;
mod weights;

pub use camera::{project_pose, CameraModel, Intrinsics};
pub use energy::{energy_a, energy_p, energy_r, total_energy, EnergyBreakdown};
pub use optim::OptimizerSettings;
pub use params::{EnergyParams, SelectionMode};
pub use pca::{fit_pca, PoseSubspace};
pub use pipeline::{
    estimate_3d, lift_from_pose2d, weighted_average, IterationRecord, LiftResult, SetRecord, SetState,
};
pub use projection::{estimate_projection, ProjectionOptions, RESTART_AZIMUTHS};
pub use solve::minimize_energy;
pub use weights::{compute_weights, normalize_top, raw_weights};
