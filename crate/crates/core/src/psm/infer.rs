use std::sync::Arc;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::gmm::{fit_binaries, GmmBinary, SCORE_FLOOR};
use super::unary::UnaryMap;
use crate::error::{Error, Result};
use crate::skeleton::{Pose2D, Skeleton};

/// How candidate locations are drawn from a unary grid when the caller
/// does not supply them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub quantile: f64,
    pub max_cells: usize,
    pub peaks: usize,
}

impl Default for CandidateSpec {
    fn default() -> Self {
        CandidateSpec {
            quantile: 0.98,
            max_cells: 64,
            peaks: 20,
        }
    }
}

/// Tree-structured pictorial structure: one mixture per skeleton edge,
/// over the offset `x_child - x_parent`.
#[derive(Debug, Clone)]
pub struct PsmModel {
    pub skeleton: Arc<Skeleton>,
    pub binaries: Vec<GmmBinary>,
    pub candidates: CandidateSpec,
}

impl PsmModel {
    pub fn new(skeleton: Arc<Skeleton>, binaries: Vec<GmmBinary>) -> Result<PsmModel> {
        if binaries.len() != skeleton.edges().len() {
            return Err(Error::InvalidParameter(format!(
                "{} binaries for {} edges",
                binaries.len(),
                skeleton.edges().len()
            )));
        }
        Ok(PsmModel {
            skeleton,
            binaries,
            candidates: CandidateSpec::default(),
        })
    }

    /// Fits the edge mixtures to annotated 2D poses.
    pub fn fit(skeleton: Arc<Skeleton>, poses: &[Pose2D], c: usize, alpha: f64, seed: u64) -> Result<PsmModel> {
        if poses.is_empty() {
            return Err(Error::EmptyPoseList);
        }
        let offsets = edge_offsets(&skeleton, poses)?;
        let binaries = fit_binaries(&offsets, c, alpha, seed)?;
        PsmModel::new(skeleton, binaries)
    }
}

pub(crate) fn edge_offsets(skeleton: &Skeleton, poses: &[Pose2D]) -> Result<Vec<Vec<Vector2<f64>>>> {
    let n = skeleton.num_joints();
    if let Some(p) = poses.iter().find(|p| p.len() != n) {
        return Err(Error::JointCount {
            expected: n,
            found: p.len(),
        });
    }
    Ok(skeleton
        .edges()
        .iter()
        .map(|&(c, p)| poses.iter().map(|x| x.joints[c] - x.joints[p]).collect())
        .collect())
}

/// Quantile cells plus local peaks of every joint grid, duplicates removed.
pub fn default_candidates(unaries: &UnaryMap, spec: &CandidateSpec) -> Vec<Vec<Vector2<f64>>> {
    (0..unaries.num_joints())
        .map(|j| {
            let mut c = unaries.cells_above_quantile(j, spec.quantile, spec.max_cells);
            push_unique(&mut c, unaries.local_maxima(j, spec.peaks));
            c
        })
        .collect()
}

pub(crate) fn push_unique(list: &mut Vec<Vector2<f64>>, extra: impl IntoIterator<Item = Vector2<f64>>) {
    for p in extra {
        if !list.contains(&p) {
            list.push(p);
        }
    }
}

#[inline]
fn log_score(v: f64) -> f64 {
    v.max(SCORE_FLOOR).ln()
}

/// Log-domain potentials over explicit candidate lists.
pub(crate) struct Problem {
    parent: Vec<Option<usize>>,
    /// Joints ordered so that parents precede children.
    order: Vec<usize>,
    unary: Vec<Vec<f64>>,
    /// Per child joint: table indexed `a_child * m_parent + a_parent`.
    pairwise: Vec<Vec<f64>>,
}

impl Problem {
    fn build(model: &PsmModel, unaries: &UnaryMap, candidates: &[Vec<Vector2<f64>>]) -> Result<Problem> {
        let sk = &model.skeleton;
        let n = sk.num_joints();
        if unaries.num_joints() != n || candidates.len() != n {
            return Err(Error::JointCount {
                expected: n,
                found: if unaries.num_joints() != n {
                    unaries.num_joints()
                } else {
                    candidates.len()
                },
            });
        }
        let mut unary = Vec::with_capacity(n);
        for (j, cands) in candidates.iter().enumerate() {
            let vals: Vec<f64> = cands.iter().map(|&c| unaries.sample(j, c)).collect();
            if !vals.iter().any(|v| *v > 0.0) {
                return Err(Error::DeadJoint(j));
            }
            unary.push(vals.into_iter().map(log_score).collect());
        }
        let mut parent = vec![None; n];
        let mut pairwise = vec![Vec::new(); n];
        for (e, &(c, p)) in sk.edges().iter().enumerate() {
            parent[c] = Some(p);
            let b = &model.binaries[e];
            let mut table = Vec::with_capacity(candidates[c].len() * candidates[p].len());
            for &xc in &candidates[c] {
                for &xp in &candidates[p] {
                    table.push(b.log_eval_offset(xc - xp));
                }
            }
            pairwise[c] = table;
        }
        let children = sk.children();
        let mut order = vec![sk.tree_root()];
        let mut head = 0;
        while head < order.len() {
            let j = order[head];
            head += 1;
            order.extend(children[j].iter().copied());
        }
        if order.len() != n {
            return Err(Error::InvalidSkeleton(format!(
                "edges do not form a tree rooted at joint {}",
                sk.tree_root()
            )));
        }
        Ok(Problem {
            parent,
            order,
            unary,
            pairwise,
        })
    }

    fn m(&self, j: usize) -> usize {
        self.unary[j].len()
    }

    /// Score of a full assignment, summed joint by joint in index order.
    pub(crate) fn score(&self, assign: &[usize]) -> f64 {
        let mut s = 0.0;
        for j in 0..assign.len() {
            s += self.unary[j][assign[j]];
            if let Some(p) = self.parent[j] {
                s += self.pairwise[j][assign[j] * self.m(p) + assign[p]];
            }
        }
        s
    }

    /// Max-product with optional per-joint clamps. Returns the optimal
    /// value, the decoded assignment and whether any argmax on the decoded
    /// path was tied.
    fn solve(&self, clamp: &[Option<usize>]) -> (f64, Vec<usize>, bool) {
        let n = self.unary.len();
        let allowed = |j: usize, a: usize| clamp[j].map_or(true, |c| c == a);
        let mut belief: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                (0..self.m(j))
                    .map(|a| if allowed(j, a) { self.unary[j][a] } else { f64::NEG_INFINITY })
                    .collect()
            })
            .collect();
        // best child candidate per parent candidate, plus tie flag
        let mut back: Vec<Vec<(usize, bool)>> = vec![Vec::new(); n];
        for &c in self.order.iter().rev() {
            let Some(p) = self.parent[c] else { continue };
            let mp = self.m(p);
            let mut msg = vec![f64::NEG_INFINITY; mp];
            let mut arg = vec![(0usize, false); mp];
            for b in 0..mp {
                let mut best = f64::NEG_INFINITY;
                let mut best_a = 0;
                let mut tie = false;
                for a in 0..self.m(c) {
                    let v = belief[c][a] + self.pairwise[c][a * mp + b];
                    if v > best {
                        best = v;
                        best_a = a;
                        tie = false;
                    } else if v == best && v > f64::NEG_INFINITY {
                        tie = true;
                    }
                }
                msg[b] = best;
                arg[b] = (best_a, tie);
            }
            for (bel, m) in belief[p].iter_mut().zip(&msg) {
                *bel += m;
            }
            back[c] = arg;
        }
        let root = self.order[0];
        let mut best = f64::NEG_INFINITY;
        let mut best_a = 0;
        let mut tie = false;
        for (a, v) in belief[root].iter().enumerate() {
            if *v > best {
                best = *v;
                best_a = a;
                tie = false;
            } else if *v == best && best > f64::NEG_INFINITY {
                tie = true;
            }
        }
        let mut assign = vec![0usize; n];
        assign[root] = best_a;
        for &c in &self.order[1..] {
            let p = self.parent[c].expect("non-root joint has a parent");
            let (a, t) = back[c][assign[p]];
            assign[c] = a;
            tie |= t;
        }
        (best, assign, tie)
    }

    /// Exact MAP; among tied optima the lexicographically smallest
    /// candidate-index tuple is returned.
    pub(crate) fn map(&self) -> Vec<usize> {
        let n = self.unary.len();
        let (best, assign, tie) = self.solve(&vec![None; n]);
        if !tie {
            return assign;
        }
        let mut clamp = vec![None; n];
        for j in 0..n {
            for a in 0..self.m(j) {
                clamp[j] = Some(a);
                let (v, _, _) = self.solve(&clamp);
                if v == best {
                    break;
                }
            }
        }
        clamp.into_iter().map(|c| c.expect("every joint clamped")).collect()
    }
}

/// Exact MAP pose over the given candidate lists, with its unnormalized
/// log-posterior.
pub fn infer_map(model: &PsmModel, unaries: &UnaryMap, candidates: &[Vec<Vector2<f64>>]) -> Result<(Pose2D, f64)> {
    if let Some(j) = candidates.iter().position(|c| c.is_empty()) {
        return Err(Error::DeadJoint(j));
    }
    let problem = Problem::build(model, unaries, candidates)?;
    let assign = problem.map();
    let score = problem.score(&assign);
    let joints = assign.iter().enumerate().map(|(j, &a)| candidates[j][a]).collect();
    Ok((Pose2D::new(joints), score))
}

/// [`infer_map`] over the model's default candidates.
pub fn infer_map_default(model: &PsmModel, unaries: &UnaryMap) -> Result<(Pose2D, f64)> {
    let candidates = default_candidates(unaries, &model.candidates);
    infer_map(model, unaries, &candidates)
}
