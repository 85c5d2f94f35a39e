use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{dist2, lex_cmp, Point3, PointCloud};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Static median-split axis-aligned tree over a cloud's points.
#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    nodes: Vec<KdNode>,
}

#[derive(Clone, Debug)]
enum KdNode {
    Leaf(Vec<usize>),
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Neighbor candidate ordered by distance, then coordinates, then index.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    d2: f64,
    point: Point3,
    index: usize,
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2
            .total_cmp(&other.d2)
            .then_with(|| lex_cmp(&self.point, &other.point))
            .then(self.index.cmp(&other.index))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl KdTree {
    pub fn build(cloud: &PointCloud) -> Self {
        let mut tree = KdTree {
            points: cloud.points().to_vec(),
            nodes: Vec::new(),
        };
        let mut idx: Vec<usize> = (0..cloud.len()).collect();
        tree.build_node(&mut idx);
        tree
    }

    fn build_node(&mut self, idx: &mut [usize]) -> usize {
        let slot = self.nodes.len();
        if idx.len() <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf(idx.to_vec()));
            return slot;
        }
        let axis = (0..3)
            .max_by(|&a, &b| {
                let spread = |ax: usize| {
                    let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                        let v = self.points[i][ax];
                        (lo.min(v), hi.max(v))
                    });
                    hi - lo
                };
                spread(a).total_cmp(&spread(b))
            })
            .unwrap();
        let points = &self.points;
        idx.sort_by(|&a, &b| points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b)));
        let mid = idx.len() / 2;
        let value = self.points[idx[mid]][axis];
        // placeholder, patched once children exist
        self.nodes.push(KdNode::Leaf(Vec::new()));
        let (lo, hi) = idx.split_at_mut(mid);
        let left = self.build_node(lo);
        let right = self.build_node(hi);
        self.nodes[slot] = KdNode::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The `k` nearest points to `query`, nearest first.
    pub fn nearest(&self, query: Point3, k: usize) -> Result<Vec<usize>> {
        let n = self.points.len();
        if k == 0 || k > n {
            return Err(Error::Argument(format!(
                "cannot return {k} neighbors from {n} points"
            )));
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &mut heap);
        let mut out = heap.into_vec();
        out.sort();
        Ok(out.into_iter().map(|c| c.index).collect())
    }

    fn search(&self, node: usize, q: Point3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match &self.nodes[node] {
            KdNode::Leaf(items) => {
                for &i in items {
                    let c = Candidate {
                        d2: dist2(q, self.points[i]),
                        point: self.points[i],
                        index: i,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            KdNode::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, q, k, heap);
                // Equal bounds still have to be explored: a tied point on the
                // far side may win on coordinates or index.
                if heap.len() < k || diff * diff <= heap.peek().unwrap().d2 {
                    self.search(far, q, k, heap);
                }
            }
        }
    }
}

/// Indices of the `k` points nearest to `query`, ascending by distance.
pub fn knn_search(cloud: &PointCloud, query: Point3, k: usize) -> Result<Vec<usize>> {
    KdTree::build(cloud).nearest(query, k)
}

/// Full-sort reference for [`knn_search`] using the same tie rule.
pub fn brute_force_knn(cloud: &PointCloud, query: Point3, k: usize) -> Result<Vec<usize>> {
    let n = cloud.len();
    if k == 0 || k > n {
        return Err(Error::Argument(format!(
            "cannot return {k} neighbors from {n} points"
        )));
    }
    let mut all: Vec<Candidate> = cloud
        .points()
        .iter()
        .enumerate()
        .map(|(index, &point)| Candidate {
            d2: dist2(query, point),
            point,
            index,
        })
        .collect();
    all.sort();
    Ok(all.into_iter().take(k).map(|c| c.index).collect())
}
