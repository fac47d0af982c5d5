use thiserror::Error;

use crate::skeleton::JointSetLabel;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("skeleton mismatch: expected `{expected}`, got `{found}`")]
    SkeletonMismatch { expected: String, found: String },

    #[error("joint count mismatch: expected {expected}, got {found}")]
    JointCount { expected: usize, found: usize },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("skeleton file line {line}: {message}")]
    SkeletonParse { line: usize, message: String },

    #[error("insufficient pairs: need at least {needed}, got {got}")]
    InsufficientPairs { needed: usize, got: usize },

    #[error("singular system while fitting {0}")]
    Singular(&'static str),

    #[error("degenerate heading: hip directions coincide in the ground plane")]
    DegenerateHeading,

    #[error("degenerate pose: zero vertical extent")]
    DegeneratePose,

    #[error("degenerate alignment: joints are collinear")]
    DegenerateAlignment,

    #[error("empty pose list")]
    EmptyPoseList,

    #[error("joint set `{0}` is not present")]
    MissingJointSet(JointSetLabel),

    #[error("dead joint {0}: no candidate with positive score")]
    DeadJoint(usize),

    #[error("joint {joint} is behind the camera (depth {depth})")]
    BehindCamera { joint: usize, depth: f64 },

    #[error("projection estimation failed: every restart diverged")]
    ProjectionFailed,

    #[error("non-finite energy at initialization")]
    NonFiniteEnergy,

    #[error("all joint sets failed during estimation")]
    AllSetsFailed,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u16,
        expected: u16,
    },

    #[error("{path}:{line}: {message}")]
    Input {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
