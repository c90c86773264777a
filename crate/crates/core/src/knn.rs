//! Exact Euclidean k-nearest-neighbor index over normalized points.
//!
//! A k-d tree with bucketed leaves. Results are ordered by `(distance, row id)`
//! and points closer than [`COINCIDENT_DISTANCE`] to the query are skipped,
//! since the force law is singular there.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neighbors closer than this are treated as coincident with the query.
pub const COINCIDENT_DISTANCE: f64 = 1e-12;
const COINCIDENT_SQ: f64 = COINCIDENT_DISTANCE * COINCIDENT_DISTANCE;
const LEAF_SIZE: usize = 12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub distances: Vec<f64>,
    /// Unit vectors from the query point toward each neighbor.
    pub unit_vectors: Vec<Vec<f64>>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Immutable k-d tree. Rebuild it when the dataset version changes.
#[derive(Clone, Debug)]
pub struct KdTree {
    dim: usize,
    /// Row-major copy of the points.
    coords: Vec<f64>,
    /// Row ids in leaf order.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    dist_sq: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist_sq
            .total_cmp(&other.dist_sq)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: &[Vec<f64>]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyIndex)?;
        let dim = first.len();
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        let mut tree = KdTree {
            dim,
            coords,
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        let mut order = std::mem::take(&mut tree.order);
        tree.build_node(&mut order, 0);
        tree.order = order;
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.coords[id * self.dim..(id + 1) * self.dim]
    }

    fn build_node(&mut self, ids: &mut [usize], offset: usize) -> usize {
        let node_id = self.nodes.len();
        if ids.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: offset,
                end: offset + ids.len(),
            });
            return node_id;
        }
        // split on the axis of widest spread
        let mut best_axis = 0;
        let mut best_spread = -1.0;
        for axis in 0..self.dim {
            let (lo, hi) = ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |acc, &i| {
                let v = self.coords[i * self.dim + axis];
                (acc.0.min(v), acc.1.max(v))
            });
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        if best_spread <= 0.0 {
            self.nodes.push(Node::Leaf {
                start: offset,
                end: offset + ids.len(),
            });
            return node_id;
        }
        let mid = ids.len() / 2;
        let dim = self.dim;
        let coords = &self.coords;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            coords[a * dim + best_axis].total_cmp(&coords[b * dim + best_axis])
        });
        let value = self.coords[ids[mid] * dim + best_axis];
        self.nodes.push(Node::Split {
            axis: best_axis,
            value,
            left: 0,
            right: 0,
        });
        let (left_ids, right_ids) = ids.split_at_mut(mid);
        let left = self.build_node(left_ids, offset);
        let right = self.build_node(right_ids, offset + mid);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[node_id]
        {
            *l = left;
            *r = right;
        }
        node_id
    }

    fn dist_sq(&self, id: usize, q: &[f64]) -> f64 {
        self.point(id)
            .iter()
            .zip(q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// Exact `k` nearest neighbors of `q`, excluding coincident points.
    ///
    /// Returns all non-coincident points when fewer than `k` exist.
    pub fn query(&self, q: &[f64], k: usize) -> NeighborSet {
        debug_assert_eq!(q.len(), self.dim);
        if k == 0 {
            return NeighborSet::default();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        self.search(0, q, k, true, &mut heap);
        let mut found = heap.into_sorted_vec();
        found.truncate(k);
        let mut out = NeighborSet {
            indices: Vec::with_capacity(found.len()),
            distances: Vec::with_capacity(found.len()),
            unit_vectors: Vec::with_capacity(found.len()),
        };
        for c in found {
            let dist = c.dist_sq.sqrt();
            let unit = self
                .point(c.id)
                .iter()
                .zip(q)
                .map(|(p, x)| (p - x) / dist)
                .collect();
            out.indices.push(c.id);
            out.distances.push(dist);
            out.unit_vectors.push(unit);
        }
        out
    }

    /// Distance to the closest indexed point, coincident points included.
    pub fn nearest_distance(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        let mut heap = BinaryHeap::with_capacity(2);
        self.search(0, q, 1, false, &mut heap);
        heap.peek().map_or(f64::INFINITY, |c| c.dist_sq.sqrt())
    }

    fn search(&self, node: usize, q: &[f64], k: usize, skip_coincident: bool, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let dist_sq = self.dist_sq(id, q);
                    if skip_coincident && dist_sq < COINCIDENT_SQ {
                        continue;
                    }
                    let cand = Candidate { dist_sq, id };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if let Some(worst) = heap.peek() {
                        if cand < *worst {
                            heap.pop();
                            heap.push(cand);
                        }
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, k, skip_coincident, heap);
                let bound = diff * diff;
                // ties at equal distance can still improve the (distance, id) order
                let visit_far = heap.len() < k || heap.peek().is_some_and(|w| bound <= w.dist_sq);
                if visit_far {
                    self.search(far, q, k, skip_coincident, heap);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(KdTree::build(&[]), Err(Error::EmptyIndex)));
    }

    #[test]
    fn single_point() {
        let t = KdTree::build(&[vec![0.3, 0.3]]).unwrap();
        let n = t.query(&[0.9, 0.1], 1);
        assert_eq!(n.indices, vec![0]);
    }

    #[test]
    fn grid_corner() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let t = KdTree::build(&pts).unwrap();
        assert_eq!(t.query(&[0.1, 0.1], 1).indices, vec![0]);
    }

    #[test]
    fn symmetric_pair() {
        let t = KdTree::build(&[vec![0.4, 0.5], vec![0.6, 0.5]]).unwrap();
        let n = t.query(&[0.5, 0.5], 2);
        assert_eq!(n.indices, vec![0, 1]);
        assert!((n.distances[0] - 0.1).abs() < 1e-12);
        assert!((n.distances[1] - 0.1).abs() < 1e-12);
        let dot: f64 = n.unit_vectors[0]
            .iter()
            .zip(&n.unit_vectors[1])
            .map(|(a, b)| a * b)
            .sum();
        assert!((dot + 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_larger_than_n_returns_all() {
        let pts: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 / 7.0]).collect();
        let t = KdTree::build(&pts).unwrap();
        assert_eq!(t.query(&[0.95], 12).len(), 7);
    }

    #[test]
    fn coincident_point_is_skipped() {
        let pts: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 0.1, 0.0]).collect();
        let t = KdTree::build(&pts).unwrap();
        let n = t.query(&[0.2, 0.0], 3);
        assert!(!n.indices.contains(&2));
        assert_eq!(n.len(), 3);
        // equal distances 0.1 broken by ascending id
        assert_eq!(&n.indices[..2], &[1, 3]);
    }

    #[test]
    fn duplicate_points_do_not_break_build() {
        let pts = vec![vec![0.5, 0.5]; 40];
        let t = KdTree::build(&pts).unwrap();
        let n = t.query(&[0.0, 0.0], 3);
        assert_eq!(n.indices, vec![0, 1, 2]);
    }
}
