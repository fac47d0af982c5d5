use std::io::{Read, Write};
use std::sync::Arc;

use nalgebra::Vector3;
use rayon::prelude::*;

use super::camera::{project_orthographic, VirtualCamera};
use super::kdtree::KdTree;
use super::normalize::{normalize_pose3d, subset_feature, NormalizedPose2D, NormalizedPose3D};
use crate::error::{Error, Result};
use crate::skeleton::{JointSetLabel, Pose2D, Pose3D, Skeleton};

const MAGIC: &[u8; 4] = b"DSMI";
pub const INDEX_VERSION: u16 = 1;

/// One joint-set tree.
#[derive(Debug, Clone)]
struct SetTree {
    label: JointSetLabel,
    joints: Vec<usize>,
    tree: KdTree,
}

/// Retrieval index over normalized mocap poses seen from virtual cameras.
///
/// Entry `e` links back to pose `e / cameras` seen from camera `e % cameras`.
#[derive(Debug, Clone)]
pub struct MoCapIndex {
    skeleton: Arc<Skeleton>,
    cameras: Vec<VirtualCamera>,
    pose_ids: Vec<String>,
    poses: Vec<NormalizedPose3D>,
    sets: Vec<SetTree>,
}

/// One retrieval hit.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedPose {
    pub entry: u32,
    pub pose_index: usize,
    pub camera_index: usize,
    /// Euclidean feature distance divided by the joint-set size.
    pub distance: f64,
    /// 1-based rank.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub hits: Vec<RetrievedPose>,
    /// Set when fewer than the requested number of entries exist.
    pub truncated: bool,
}

/// Builds the index with ids `"0"`, `"1"`, ...
pub fn build_index(
    poses: &[Pose3D],
    cameras: &[VirtualCamera],
    skeleton: Arc<Skeleton>,
) -> Result<MoCapIndex> {
    let ids = (0..poses.len()).map(|i| i.to_string()).collect();
    build_index_with_ids(poses, ids, cameras, skeleton)
}

/// Builds the index: every pose is normalized, projected through every
/// camera, and each joint set's normalized 2D coordinates are inserted into
/// that set's tree.
pub fn build_index_with_ids(
    poses: &[Pose3D],
    pose_ids: Vec<String>,
    cameras: &[VirtualCamera],
    skeleton: Arc<Skeleton>,
) -> Result<MoCapIndex> {
    if poses.is_empty() {
        return Err(Error::EmptyPoseList);
    }
    if cameras.is_empty() {
        return Err(Error::InvalidParameter("no virtual cameras".into()));
    }
    if pose_ids.len() != poses.len() {
        return Err(Error::InvalidParameter("pose id count mismatch".into()));
    }
    let entries = poses.len() as u64 * cameras.len() as u64;
    if entries > u64::from(u32::MAX) {
        return Err(Error::InvalidParameter("index too large".into()));
    }
    let normalized: Vec<NormalizedPose3D> = poses
        .iter()
        .map(|p| normalize_pose3d(p, &skeleton))
        .collect::<Result<_>>()?;

    let labels: Vec<(JointSetLabel, Vec<usize>)> = JointSetLabel::ORDER
        .iter()
        .map(|&l| Ok((l, skeleton.joint_set(l)?.to_vec())))
        .collect::<Result<_>>()?;

    // per pose: per set feature rows for every camera
    let per_pose: Vec<Vec<Vec<f32>>> = normalized
        .par_iter()
        .map(|pose| {
            let mut rows: Vec<Vec<f32>> = labels
                .iter()
                .map(|(_, j)| Vec::with_capacity(2 * j.len() * cameras.len()))
                .collect();
            for cam in cameras {
                let proj = project_orthographic(pose.as_pose(), cam);
                for ((_, joints), row) in labels.iter().zip(rows.iter_mut()) {
                    let f = subset_feature(&proj.joints, joints)?;
                    row.extend(f.iter().map(|&v| v as f32));
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let ids: Vec<u32> = (0..entries as u32).collect();
    let sets = labels
        .into_iter()
        .enumerate()
        .map(|(s, (label, joints))| {
            let features: Vec<f32> = per_pose.iter().flat_map(|rows| rows[s].iter().copied()).collect();
            let tree = KdTree::build(2 * joints.len(), &features, &ids);
            SetTree {
                label,
                joints,
                tree,
            }
        })
        .collect();

    Ok(MoCapIndex {
        skeleton,
        cameras: cameras.to_vec(),
        pose_ids,
        poses: normalized,
        sets,
    })
}

impl MoCapIndex {
    pub fn skeleton(&self) -> &Arc<Skeleton> {
        &self.skeleton
    }

    pub fn cameras(&self) -> &[VirtualCamera] {
        &self.cameras
    }

    pub fn poses(&self) -> &[NormalizedPose3D] {
        &self.poses
    }

    pub fn pose_ids(&self) -> &[String] {
        &self.pose_ids
    }

    /// Entries per joint-set tree.
    pub fn len(&self) -> usize {
        self.poses.len() * self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn tree_len(&self, label: JointSetLabel) -> Result<usize> {
        Ok(self.set(label)?.tree.len())
    }

    fn set(&self, label: JointSetLabel) -> Result<&SetTree> {
        self.sets
            .iter()
            .find(|s| s.label == label)
            .ok_or(Error::MissingJointSet(label))
    }

    /// `(pose index, camera index)` of an entry.
    pub fn back_link(&self, entry: u32) -> (usize, usize) {
        let c = self.cameras.len();
        (entry as usize / c, entry as usize % c)
    }

    /// Stored features of a set as `(entry, feature)` pairs, in tree order.
    pub fn entries(&self, label: JointSetLabel) -> Result<impl Iterator<Item = (u32, &[f32])>> {
        Ok(self.set(label)?.tree.entries())
    }

    /// The retrieved pose rotated into the frame of the virtual camera that
    /// produced the match, so its orthographic projection lines up with the
    /// query. The root stays at the origin.
    pub fn aligned_pose(&self, hit: &RetrievedPose) -> Pose3D {
        let rot = self.cameras[hit.camera_index].rotation();
        self.poses[hit.pose_index].as_pose().map(|j| rot * j)
    }

    /// The feature vector compared against stored entries of `label`:
    /// the set's joints renormalized and rounded to storage precision.
    pub fn query_feature(&self, query: &NormalizedPose2D, label: JointSetLabel) -> Result<Vec<f64>> {
        storage_feature(&query.joints, &self.set(label)?.joints)
    }

    /// K nearest entries of joint set `label`. Only that set's joints are
    /// read from the query; they are renormalized among themselves.
    pub fn knn_query(&self, query: &NormalizedPose2D, label: JointSetLabel, k: usize) -> Result<KnnResult> {
        self.knn_points(&query.joints, label, k)
    }

    /// Same as [`MoCapIndex::knn_query`] on an unnormalized 2D pose.
    pub fn knn_query_pose2d(&self, query: &Pose2D, label: JointSetLabel, k: usize) -> Result<KnnResult> {
        self.knn_points(&query.joints, label, k)
    }

    fn knn_points(&self, joints: &[nalgebra::Vector2<f64>], label: JointSetLabel, k: usize) -> Result<KnnResult> {
        if k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if joints.len() != self.skeleton.num_joints() {
            return Err(Error::JointCount {
                expected: self.skeleton.num_joints(),
                found: joints.len(),
            });
        }
        let set = self.set(label)?;
        let feature = storage_feature(joints, &set.joints)?;
        let truncated = k > set.tree.len();
        let n = set.joints.len() as f64;
        let hits = set
            .tree
            .knn(&feature, k)
            .into_iter()
            .enumerate()
            .map(|(r, nb)| {
                let (pose_index, camera_index) = self.back_link(nb.id);
                RetrievedPose {
                    entry: nb.id,
                    pose_index,
                    camera_index,
                    distance: nb.sq_dist.sqrt() / n,
                    rank: r + 1,
                }
            })
            .collect();
        Ok(KnnResult { hits, truncated })
    }

    /// Serializes to the `DSMI` binary layout (little-endian):
    ///
    /// ```text
    /// "DSMI" u16 version
    /// u32 len, skeleton text (utf-8)
    /// u32 cameras, per camera: f32 azimuth, f32 elevation
    /// u32 poses, per pose: u32 len, id (utf-8), joints * 3 f64
    /// u32 sets, per set: u8 label, u32 dim, u32 entries,
    ///     per entry: u32 pose index, u32 camera index, dim * f32
    /// ```
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&INDEX_VERSION.to_le_bytes())?;
        write_bytes(&mut w, self.skeleton.to_text().as_bytes())?;
        write_u32(&mut w, self.cameras.len())?;
        for c in &self.cameras {
            w.write_all(&(c.azimuth_deg as f32).to_le_bytes())?;
            w.write_all(&(c.elevation_deg as f32).to_le_bytes())?;
        }
        write_u32(&mut w, self.poses.len())?;
        for (id, pose) in self.pose_ids.iter().zip(&self.poses) {
            write_bytes(&mut w, id.as_bytes())?;
            for j in &pose.as_pose().joints {
                for v in j.iter() {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        write_u32(&mut w, self.sets.len())?;
        for set in &self.sets {
            w.write_all(&[set.label.as_u8()])?;
            write_u32(&mut w, set.tree.dim())?;
            write_u32(&mut w, set.tree.len())?;
            // entry order, so that the file does not depend on tree layout
            let mut rows: Vec<(u32, &[f32])> = set.tree.entries().collect();
            rows.sort_unstable_by_key(|r| r.0);
            for (id, f) in rows {
                let (p, c) = self.back_link(id);
                write_u32(&mut w, p)?;
                write_u32(&mut w, c)?;
                for v in f {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<MoCapIndex> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not an index file (bad magic)".into()));
        }
        let version = read_u16(&mut r)?;
        if version != INDEX_VERSION {
            return Err(Error::Version {
                what: "index",
                found: version,
                expected: INDEX_VERSION,
            });
        }
        let text = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| Error::Format("skeleton text is not utf-8".into()))?;
        let skeleton = Arc::new(Skeleton::parse(&text)?);
        let n_cams = read_u32(&mut r)? as usize;
        let mut cameras = Vec::with_capacity(n_cams.min(1 << 16));
        for _ in 0..n_cams {
            let az = read_f32(&mut r)?;
            let el = read_f32(&mut r)?;
            cameras.push(VirtualCamera::new(f64::from(az), f64::from(el)));
        }
        let n_poses = read_u32(&mut r)? as usize;
        let nj = skeleton.num_joints();
        let mut pose_ids = Vec::with_capacity(n_poses.min(1 << 20));
        let mut poses = Vec::with_capacity(n_poses.min(1 << 20));
        for _ in 0..n_poses {
            let id = String::from_utf8(read_bytes(&mut r)?)
                .map_err(|_| Error::Format("pose id is not utf-8".into()))?;
            let mut joints = Vec::with_capacity(nj);
            for _ in 0..nj {
                joints.push(Vector3::new(read_f64(&mut r)?, read_f64(&mut r)?, read_f64(&mut r)?));
            }
            pose_ids.push(id);
            poses.push(NormalizedPose3D::from_normalized(Pose3D::new(
                skeleton.id().clone(),
                joints,
            )));
        }
        let n_sets = read_u32(&mut r)? as usize;
        let mut sets = Vec::with_capacity(n_sets);
        for _ in 0..n_sets {
            let mut b = [0u8; 1];
            r.read_exact(&mut b)?;
            let label = JointSetLabel::from_u8(b[0])
                .ok_or_else(|| Error::Format(format!("unknown joint set tag {}", b[0])))?;
            let joints = skeleton.joint_set(label)?.to_vec();
            let dim = read_u32(&mut r)? as usize;
            if dim != 2 * joints.len() {
                return Err(Error::Format(format!("set {label}: dimension {dim} does not match skeleton")));
            }
            let n = read_u32(&mut r)? as usize;
            if n != n_poses * n_cams {
                return Err(Error::Format(format!("set {label}: {n} entries, expected {}", n_poses * n_cams)));
            }
            let mut features = Vec::with_capacity(n * dim);
            let mut ids = Vec::with_capacity(n);
            for _ in 0..n {
                let p = read_u32(&mut r)? as usize;
                let c = read_u32(&mut r)? as usize;
                if p >= n_poses || c >= n_cams {
                    return Err(Error::Format("back-link out of range".into()));
                }
                ids.push((p * n_cams + c) as u32);
                for _ in 0..dim {
                    features.push(read_f32(&mut r)?);
                }
            }
            sets.push(SetTree {
                label,
                joints,
                tree: KdTree::build(dim, &features, &ids),
            });
        }
        Ok(MoCapIndex {
            skeleton,
            cameras,
            pose_ids,
            poses,
            sets,
        })
    }
}

fn storage_feature(joints: &[nalgebra::Vector2<f64>], subset: &[usize]) -> Result<Vec<f64>> {
    Ok(subset_feature(joints, subset)?
        .into_iter()
        .map(|v| f64::from(v as f32))
        .collect())
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format("value exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> Result<()> {
    write_u32(w, b.len())?;
    w.write_all(b)?;
    Ok(())
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32<R: Read>(r: &mut R) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>> {
    let n = read_u32(r)? as usize;
    if n > 1 << 24 {
        return Err(Error::Format("string too long".into()));
    }
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    Ok(b)
}
