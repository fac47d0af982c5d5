//! Pictorial structure model over 2D joint locations.

mod gmm;
mod infer;
mod refine;
mod unary;

pub use gmm::{fit_binaries, fit_binary, kmeans, GaussianComponent, GmmBinary, COVARIANCE_EPS, DEFAULT_ALPHA, SCORE_FLOOR};
pub use infer::{default_candidates, infer_map, infer_map_default, CandidateSpec, PsmModel};
pub use refine::{refine_pose, Refinement, SetCandidates, SetPosterior, DEFAULT_REFINE_COMPONENTS, REFINE_PEAKS};
pub use unary::{Provenance, UnaryMap, UnarySynthesis, UNARY_VERSION};
