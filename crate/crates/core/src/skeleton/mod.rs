//! Skeleton topology, joint sets and pose containers.
//!
//! All 3D coordinates use a y-down convention shared with image space: the
//! vertical (gravity) axis is `+y`, so a standing person has the head at a
//! smaller `y` than the ankles.

mod dedup;
mod pose;
mod retarget;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dedup::{deduplicate, deduplicate_indices, DEFAULT_DEDUP_MM};
pub use pose::{limb_lengths, root_center, Pose2D, Pose3D, SkeletonId};
pub use retarget::{apply_retarget, fit_retarget_map, JointMap, RetargetMap, DEFAULT_RIDGE};

const DEFAULT_SKELETON: &str = include_str!("../../data/skeleton14.txt");

/// Number of joints in the body model.
pub const NUM_JOINTS: usize = 14;

/// Label of a retrieval joint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointSetLabel {
    All,
    Up,
    Lw,
    Lt,
    Rt,
}

impl JointSetLabel {
    /// Every label, in tie-break order.
    pub const ORDER: [JointSetLabel; 5] = [
        JointSetLabel::All,
        JointSetLabel::Up,
        JointSetLabel::Lw,
        JointSetLabel::Lt,
        JointSetLabel::Rt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            JointSetLabel::All => "all",
            JointSetLabel::Up => "up",
            JointSetLabel::Lw => "lw",
            JointSetLabel::Lt => "lt",
            JointSetLabel::Rt => "rt",
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ORDER.get(v as usize).copied()
    }
}

impl fmt::Display for JointSetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JointSetLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ORDER
            .iter()
            .copied()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown joint set `{s}`")))
    }
}

/// Kinematic tree over named joints plus the retrieval joint sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    id: SkeletonId,
    joint_names: Vec<String>,
    /// `(child, parent)` pairs.
    edges: Vec<(usize, usize)>,
    tree_root: usize,
    center: Vec<usize>,
    heading: (usize, usize),
    joint_sets: BTreeMap<JointSetLabel, Vec<usize>>,
}

/// Problems found by [`validate_skeleton`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    JointCount(usize),
    NotATree,
    MissingJointSet(JointSetLabel),
    EmptyJointSet(JointSetLabel),
    IncompleteAllSet,
    BadIndex(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::JointCount(n) => write!(f, "expected {NUM_JOINTS} joints, found {n}"),
            Violation::NotATree => f.write_str("not a tree"),
            Violation::MissingJointSet(l) => write!(f, "missing joint set `{l}`"),
            Violation::EmptyJointSet(l) => write!(f, "joint set `{l}` is empty"),
            Violation::IncompleteAllSet => f.write_str("joint set `all` does not cover every joint"),
            Violation::BadIndex(i) => write!(f, "joint index {i} out of range"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let msgs: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&msgs.join("; "))
    }
}

/// Checks joint count, tree connectivity and joint-set coverage.
pub fn validate_skeleton(skeleton: &Skeleton) -> ValidationReport {
    let mut violations = Vec::new();
    let n = skeleton.joint_names.len();
    if n != NUM_JOINTS {
        violations.push(Violation::JointCount(n));
    }

    let mut bad = false;
    for &(c, p) in &skeleton.edges {
        for i in [c, p] {
            if i >= n {
                violations.push(Violation::BadIndex(i));
                bad = true;
            }
        }
    }
    if !bad && !is_spanning_tree(n, &skeleton.edges) {
        violations.push(Violation::NotATree);
    }

    for label in JointSetLabel::ORDER {
        match skeleton.joint_sets.get(&label) {
            None => violations.push(Violation::MissingJointSet(label)),
            Some(set) if set.is_empty() => violations.push(Violation::EmptyJointSet(label)),
            Some(set) => {
                if let Some(&i) = set.iter().find(|&&i| i >= n) {
                    violations.push(Violation::BadIndex(i));
                }
                if label == JointSetLabel::All && set.len() != n {
                    violations.push(Violation::IncompleteAllSet);
                }
            }
        }
    }
    ValidationReport { violations }
}

// n - 1 edges and no cycle <=> spanning tree
fn is_spanning_tree(n: usize, edges: &[(usize, usize)]) -> bool {
    if n == 0 || edges.len() != n - 1 {
        return false;
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for &(a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra == rb {
            return false;
        }
        parent[ra] = rb;
    }
    true
}

impl Skeleton {
    /// The shipped 14-joint skeleton.
    pub fn default_14() -> Arc<Skeleton> {
        static DEFAULT: std::sync::OnceLock<Arc<Skeleton>> = std::sync::OnceLock::new();
        DEFAULT
            .get_or_init(|| {
                Arc::new(Skeleton::parse(DEFAULT_SKELETON).expect("shipped skeleton file is valid"))
            })
            .clone()
    }

    /// Text of the shipped default skeleton file.
    pub fn default_text() -> &'static str {
        DEFAULT_SKELETON
    }

    /// Builds a skeleton from parts. No invariant checking beyond index
    /// bounds; use [`validate_skeleton`] for that.
    pub fn from_parts(
        id: impl Into<String>,
        joint_names: Vec<String>,
        edges: Vec<(usize, usize)>,
        tree_root: usize,
        center: Vec<usize>,
        heading: (usize, usize),
        joint_sets: BTreeMap<JointSetLabel, Vec<usize>>,
    ) -> Result<Skeleton> {
        let n = joint_names.len();
        let in_range = |i: usize| i < n;
        if !in_range(tree_root)
            || !center.iter().copied().all(in_range)
            || !in_range(heading.0)
            || !in_range(heading.1)
            || center.is_empty()
        {
            return Err(Error::InvalidSkeleton("joint index out of range".into()));
        }
        Ok(Skeleton {
            id: SkeletonId::new(id),
            joint_names,
            edges,
            tree_root,
            center,
            heading,
            joint_sets,
        })
    }

    /// Parses the key-value skeleton format.
    ///
    /// Keys: `name`, `joints`, `tree_root`, `center`, `heading`, repeated
    /// `edge = child parent`, and `set.<label> = joint ...`. `#` starts a
    /// comment.
    pub fn parse(text: &str) -> Result<Skeleton> {
        let mut name = None;
        let mut joints: Option<Vec<String>> = None;
        let mut root_name = None;
        let mut center_names = None;
        let mut heading_names = None;
        let mut edge_names = Vec::new();
        let mut set_names = Vec::new();

        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |message: String| Error::SkeletonParse { line, message };
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            let words: Vec<String> = value.split_whitespace().map(str::to_owned).collect();
            match key {
                "name" => name = Some(value.trim().to_owned()),
                "joints" => joints = Some(words),
                "tree_root" => root_name = Some((line, words)),
                "center" => center_names = Some((line, words)),
                "heading" => heading_names = Some((line, words)),
                "edge" => edge_names.push((line, words)),
                k if k.starts_with("set.") => {
                    let label: JointSetLabel = k[4..]
                        .parse()
                        .map_err(|_| err(format!("unknown joint set `{}`", &k[4..])))?;
                    set_names.push((line, label, words));
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }

        let joints = joints.ok_or(Error::SkeletonParse {
            line: 0,
            message: "missing `joints`".into(),
        })?;
        let lookup = |line: usize, n: &str| {
            joints
                .iter()
                .position(|j| j == n)
                .ok_or_else(|| Error::SkeletonParse {
                    line,
                    message: format!("unknown joint `{n}`"),
                })
        };
        let one = |entry: Option<(usize, Vec<String>)>, key: &str| -> Result<(usize, Vec<usize>)> {
            let (line, words) = entry.ok_or(Error::SkeletonParse {
                line: 0,
                message: format!("missing `{key}`"),
            })?;
            let idx = words
                .iter()
                .map(|w| lookup(line, w))
                .collect::<Result<Vec<_>>>()?;
            Ok((line, idx))
        };

        let (line, root) = one(root_name, "tree_root")?;
        if root.len() != 1 {
            return Err(Error::SkeletonParse {
                line,
                message: "`tree_root` takes one joint".into(),
            });
        }
        let (_, center) = one(center_names, "center")?;
        let (line, heading) = one(heading_names, "heading")?;
        if heading.len() != 2 {
            return Err(Error::SkeletonParse {
                line,
                message: "`heading` takes two joints (left right)".into(),
            });
        }

        let mut edges = Vec::with_capacity(edge_names.len());
        for (line, words) in edge_names {
            if words.len() != 2 {
                return Err(Error::SkeletonParse {
                    line,
                    message: "`edge` takes `child parent`".into(),
                });
            }
            edges.push((lookup(line, &words[0])?, lookup(line, &words[1])?));
        }

        let mut joint_sets = BTreeMap::new();
        for (line, label, words) in set_names {
            let mut idx = words
                .iter()
                .map(|w| lookup(line, w))
                .collect::<Result<Vec<_>>>()?;
            idx.sort_unstable();
            idx.dedup();
            joint_sets.insert(label, idx);
        }

        Skeleton::from_parts(
            name.unwrap_or_else(|| "unnamed".into()),
            joints,
            edges,
            root[0],
            center,
            (heading[0], heading[1]),
            joint_sets,
        )
    }

    /// Renders the skeleton in the key-value format accepted by [`Skeleton::parse`].
    pub fn to_text(&self) -> String {
        let names = |idx: &[usize]| {
            idx.iter()
                .map(|&i| self.joint_names[i].as_str())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        out.push_str(&format!("name = {}\n", self.id));
        out.push_str(&format!("joints = {}\n", self.joint_names.join(" ")));
        out.push_str(&format!("tree_root = {}\n", self.joint_names[self.tree_root]));
        out.push_str(&format!("center = {}\n", names(&self.center)));
        out.push_str(&format!(
            "heading = {}\n",
            names(&[self.heading.0, self.heading.1])
        ));
        for &(c, p) in &self.edges {
            out.push_str(&format!("edge = {}\n", names(&[c, p])));
        }
        for (label, set) in &self.joint_sets {
            out.push_str(&format!("set.{label} = {}\n", names(set)));
        }
        out
    }

    pub fn id(&self) -> &SkeletonId {
        &self.id
    }

    pub fn num_joints(&self) -> usize {
        self.joint_names.len()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joint_names.iter().position(|j| j == name)
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn tree_root(&self) -> usize {
        self.tree_root
    }

    pub fn center_joints(&self) -> &[usize] {
        &self.center
    }

    /// `(left, right)` joints whose difference defines the body heading.
    pub fn heading_pair(&self) -> (usize, usize) {
        self.heading
    }

    pub fn joint_set(&self, label: JointSetLabel) -> Result<&[usize]> {
        self.joint_sets
            .get(&label)
            .map(Vec::as_slice)
            .ok_or(Error::MissingJointSet(label))
    }

    pub fn joint_sets(&self) -> &BTreeMap<JointSetLabel, Vec<usize>> {
        &self.joint_sets
    }

    /// Returns a copy with a different edge list.
    pub fn with_edges(&self, edges: Vec<(usize, usize)>) -> Skeleton {
        Skeleton {
            edges,
            ..self.clone()
        }
    }

    /// Returns a copy with a different id.
    pub fn with_id(&self, id: impl Into<String>) -> Skeleton {
        Skeleton {
            id: SkeletonId::new(id),
            ..self.clone()
        }
    }

    /// Returns a copy without the given joint set.
    pub fn without_joint_set(&self, label: JointSetLabel) -> Skeleton {
        let mut s = self.clone();
        s.joint_sets.remove(&label);
        s
    }

    /// Children lists indexed by parent.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.num_joints()];
        for &(c, p) in &self.edges {
            children[p].push(c);
        }
        children
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeleton_is_valid() {
        let sk = Skeleton::default_14();
        let report = validate_skeleton(&sk);
        assert!(report.is_ok(), "{report}");
        assert_eq!(sk.num_joints(), 14);
        assert_eq!(sk.edges().len(), 13);
        assert_eq!(sk.joint_set(JointSetLabel::All).unwrap().len(), 14);
    }

    #[test]
    fn cycle_is_not_a_tree() {
        let sk = Skeleton::default_14();
        let mut edges = sk.edges().to_vec();
        // replace the last edge by one closing a loop in the torso
        edges.pop();
        let (lhip, rhip) = sk.heading_pair();
        edges.push((lhip, rhip));
        let report = validate_skeleton(&sk.with_edges(edges));
        assert!(report.violations.contains(&Violation::NotATree));
        assert_eq!(Violation::NotATree.to_string(), "not a tree");
    }

    #[test]
    fn missing_all_set_is_reported() {
        let sk = Skeleton::default_14().without_joint_set(JointSetLabel::All);
        let report = validate_skeleton(&sk);
        assert_eq!(
            report.violations,
            vec![Violation::MissingJointSet(JointSetLabel::All)]
        );
        assert!(report.to_string().contains("missing joint set"));
    }

    #[test]
    fn every_single_edge_deletion_disconnects() {
        let sk = Skeleton::default_14();
        for k in 0..sk.edges().len() {
            let mut edges = sk.edges().to_vec();
            edges.remove(k);
            let report = validate_skeleton(&sk.with_edges(edges));
            assert!(report.violations.contains(&Violation::NotATree), "edge {k}");
        }
    }

    #[test]
    fn text_round_trip() {
        let sk = Skeleton::default_14();
        let again = Skeleton::parse(&sk.to_text()).unwrap();
        assert_eq!(*sk, again);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "joints = a b\ntree_root = a\ncenter = a\nheading = a b\nedge = b c\n";
        let err = Skeleton::parse(text).unwrap_err();
        match err {
            Error::SkeletonParse { line, .. } => assert_eq!(line, 5),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn set_memberships() {
        let sk = Skeleton::default_14();
        let names = |l| {
            sk.joint_set(l)
                .unwrap()
                .iter()
                .map(|&i| sk.joint_names()[i].clone())
                .collect::<Vec<_>>()
        };
        assert!(!names(JointSetLabel::Rt).iter().any(|n| n.starts_with("l_")));
        assert!(!names(JointSetLabel::Lt).iter().any(|n| n.starts_with("r_")));
        assert!(!names(JointSetLabel::Up).iter().any(|n| n.contains("knee")));
        assert!(!names(JointSetLabel::Lw).iter().any(|n| n.contains("wrist")));
    }
}
