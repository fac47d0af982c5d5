//! Normalized motion-capture database and nearest-neighbour retrieval.

mod camera;
mod index;
pub mod io;
pub mod kdtree;
mod normalize;

pub use camera::{
    project_orthographic, virtual_cameras, VirtualCamera, AZIMUTH_STEP_DEG, NUM_AZIMUTHS,
    NUM_ELEVATIONS,
};
pub use index::{build_index, build_index_with_ids, KnnResult, MoCapIndex, RetrievedPose, INDEX_VERSION};
pub use normalize::{
    normalize_points, normalize_pose2d, normalize_pose3d, NormalizedPose2D, NormalizedPose3D,
};
