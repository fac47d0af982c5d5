//! Synthetic evaluation: scene generation, error metrics and parameter sweeps.

mod align;
mod experiment;
mod synth;

pub use align::{align, pose_error_2d, pose_error_3d, pose_error_3d_with, rigid_align, RigidTransform};
pub use experiment::{
    aggregate_rows, parse_sweeps, read_rows_csv, run_experiment, score, sig6, write_rows_csv, Cell, CellAggregate,
    Report, ReportRow, ScenarioSuite, Stat,
};
pub use synth::{
    generate_scenario, random_pose, BodyDimensions, CameraSpec, ClutterSpec, Corruption, DatabaseSpec, GeneratedScenario, Scenario,
};
