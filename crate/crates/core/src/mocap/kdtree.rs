//! Exact k-nearest-neighbour search over fixed-dimension `f32` features.
//!
//! Distances are squared Euclidean, accumulated in `f64` in dimension order.
//! Results are ordered by `(distance, id)`, so ties resolve to the lower id.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Median-split kd-tree.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    /// Features reordered into leaf order.
    points: Vec<f32>,
    ids: Vec<u32>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub sq_dist: f64,
    pub id: u32,
}

impl Eq for Neighbour {}

impl Ord for Neighbour {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sq_dist
            .total_cmp(&other.sq_dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Neighbour {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[inline]
pub fn sq_dist(query: &[f64], point: &[f32]) -> f64 {
    let mut acc = 0.0;
    for (q, p) in query.iter().zip(point) {
        let d = q - f64::from(*p);
        acc += d * d;
    }
    acc
}

impl KdTree {
    /// Builds a tree over `features` (row-major, `dim` values per entry) with
    /// the given ids.
    pub fn build(dim: usize, features: &[f32], ids: &[u32]) -> KdTree {
        assert!(dim > 0, "feature dimension must be positive");
        assert_eq!(features.len(), dim * ids.len(), "feature buffer size");
        let mut order: Vec<usize> = (0..ids.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_node(dim, features, ids, &mut order, 0, &mut nodes);
        }
        let mut points = Vec::with_capacity(features.len());
        for &i in &order {
            points.extend_from_slice(&features[i * dim..(i + 1) * dim]);
        }
        let ids = order.iter().map(|&i| ids[i]).collect();
        KdTree {
            dim,
            points,
            ids,
            nodes,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `(id, feature)` pairs in storage order.
    pub fn entries(&self) -> impl Iterator<Item = (u32, &[f32])> {
        self.ids
            .iter()
            .copied()
            .zip(self.points.chunks_exact(self.dim))
    }

    /// The `k` nearest entries to `query`, ascending by `(sq_dist, id)`.
    pub fn knn(&self, query: &[f64], k: usize) -> Vec<Neighbour> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        heap.into_sorted_vec()
    }

    fn search(&self, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<Neighbour>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start..end {
                    let point = &self.points[i * self.dim..(i + 1) * self.dim];
                    let cand = Neighbour {
                        sq_dist: sq_dist(query, point),
                        id: self.ids[i],
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand < *heap.peek().expect("heap is full") {
                        heap.pop();
                        heap.push(cand);
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, heap);
                let bound = diff * diff;
                // equal bounds may still hide a lower-id tie
                if heap.len() < k || bound <= heap.peek().expect("heap is full").sq_dist {
                    self.search(far, query, k, heap);
                }
            }
        }
    }
}

fn build_node(
    dim: usize,
    features: &[f32],
    ids: &[u32],
    order: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let me = nodes.len();
    if order.len() <= LEAF_SIZE {
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return me;
    }

    // split on the widest dimension
    let mut lo = vec![f32::INFINITY; dim];
    let mut hi = vec![f32::NEG_INFINITY; dim];
    for &i in order.iter() {
        for ((v, l), h) in features[i * dim..(i + 1) * dim].iter().zip(&mut lo).zip(&mut hi) {
            *l = l.min(*v);
            *h = h.max(*v);
        }
    }
    let mut best = (0usize, -1.0f32);
    for d in 0..dim {
        if hi[d] - lo[d] > best.1 {
            best = (d, hi[d] - lo[d]);
        }
    }
    let split_dim = best.0;
    if best.1 <= 0.0 {
        // all remaining points coincide
        nodes.push(Node::Leaf {
            start: offset,
            end: offset + order.len(),
        });
        return me;
    }

    let mid = order.len() / 2;
    let mut keys: Vec<(f32, u32, usize)> = order
        .iter()
        .map(|&i| (features[i * dim + split_dim], ids[i], i))
        .collect();
    keys.select_nth_unstable_by(mid, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for (o, k) in order.iter_mut().zip(&keys) {
        *o = k.2;
    }
    let value = f64::from(keys[mid].0);

    nodes.push(Node::Leaf { start: 0, end: 0 });
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(dim, features, ids, lo, offset, nodes);
    let right = build_node(dim, features, ids, hi, offset + mid, nodes);
    nodes[me] = Node::Split {
        dim: split_dim,
        value,
        left,
        right,
    };
    me
}
