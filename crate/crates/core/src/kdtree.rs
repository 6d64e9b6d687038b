//! Exact k-d tree over labelled points.
//!
//! Median split on the widest dimension, leaves of at most [`LEAF_SIZE`]
//! points. Neighbors are ordered by `(squared distance, insertion id)`, so
//! results are identical to an exhaustive scan with the same key.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::mem::size_of;

pub const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Insertion index of the point.
    pub id: usize,
    pub label: usize,
    pub dist_sq: f64,
}

impl Neighbor {
    pub fn distance(&self) -> f64 {
        self.dist_sq.sqrt()
    }

    fn key_cmp(&self, other: &Self) -> Ordering {
        self.dist_sq.total_cmp(&other.dist_sq).then(self.id.cmp(&other.id))
    }
}

// Max-heap on (dist_sq, id): the root is the current worst candidate.
struct Candidate(Neighbor);

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Node {
    Leaf {
        start: u32,
        end: u32,
    },
    Split {
        dim: u32,
        value: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KdTree {
    dim: usize,
    /// Points in tree order, `dim` values per point.
    points: Vec<f64>,
    ids: Vec<u32>,
    labels: Vec<u32>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// `points` holds `ids.len()` rows of `dim` values in insertion order;
    /// `ids` gives each row's insertion index.
    pub fn build(dim: usize, points: &[f64], ids: &[usize], labels: &[usize]) -> Self {
        assert!(dim > 0, "dimension must be positive");
        assert_eq!(points.len(), ids.len() * dim, "point buffer does not match id count");
        assert_eq!(ids.len(), labels.len(), "one label per point");
        let mut order: Vec<usize> = (0..ids.len()).collect();
        let mut nodes = Vec::new();
        if !order.is_empty() {
            build_node(dim, points, ids, &mut order, 0, &mut nodes);
        }
        let mut tree = KdTree {
            dim,
            points: Vec::with_capacity(points.len()),
            ids: Vec::with_capacity(ids.len()),
            labels: Vec::with_capacity(ids.len()),
            nodes,
        };
        for &row in &order {
            tree.points.extend_from_slice(&points[row * dim..(row + 1) * dim]);
            tree.ids.push(ids[row] as u32);
            tree.labels.push(labels[row] as u32);
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bytes held by the point, id, label and node arrays.
    pub fn memory_bytes(&self) -> usize {
        self.points.len() * size_of::<f64>()
            + self.ids.len() * size_of::<u32>()
            + self.labels.len() * size_of::<u32>()
            + self.nodes.len() * size_of::<Node>()
    }

    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<Neighbor> {
        self.nearest_filtered(query, k, |_| true)
    }

    /// The `k` nearest points whose label passes `keep`, ascending.
    pub fn nearest_filtered(&self, query: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<Neighbor> {
        assert_eq!(query.len(), self.dim, "query dimension");
        if k == 0 || self.nodes.is_empty() {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(0, query, k, &keep, &mut heap);
        let mut out: Vec<Neighbor> = heap.into_iter().map(|c| c.0).collect();
        out.sort_by(Neighbor::key_cmp);
        out
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        keep: &impl Fn(usize) -> bool,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for i in start as usize..end as usize {
                    let label = self.labels[i] as usize;
                    if !keep(label) {
                        continue;
                    }
                    let cand = Neighbor {
                        id: self.ids[i] as usize,
                        label,
                        dist_sq: squared_distance(query, &self.points[i * self.dim..(i + 1) * self.dim]),
                    };
                    if heap.len() < k {
                        heap.push(Candidate(cand));
                    } else if cand.key_cmp(&heap.peek().expect("non-empty").0) == Ordering::Less {
                        heap.pop();
                        heap.push(Candidate(cand));
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = query[dim as usize] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near as usize, query, k, keep, heap);
                // Every point on the far side is at least |diff| away along `dim`.
                let bound = diff * diff;
                if heap.len() < k || bound <= heap.peek().expect("non-empty").0.dist_sq {
                    self.search(far as usize, query, k, keep, heap);
                }
            }
        }
    }
}

fn build_node(
    dim: usize,
    points: &[f64],
    ids: &[usize],
    order: &mut [usize],
    offset: usize,
    nodes: &mut Vec<Node>,
) -> u32 {
    let at = nodes.len();
    nodes.push(Node::Leaf {
        start: offset as u32,
        end: (offset + order.len()) as u32,
    });
    if order.len() <= LEAF_SIZE {
        return at as u32;
    }
    let coord = |row: usize, d: usize| points[row * dim + d];
    let split_dim = (0..dim)
        .map(|d| {
            let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(coord(r, d)), hi.max(coord(r, d)))
            });
            (d, hi - lo)
        })
        .fold(
            (0, f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
        .0;
    let mid = order.len() / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        coord(a, split_dim)
            .total_cmp(&coord(b, split_dim))
            .then(ids[a].cmp(&ids[b]))
    });
    // Left holds coordinates <= value, right holds coordinates >= value.
    let value = coord(order[mid], split_dim);
    let (lo, hi) = order.split_at_mut(mid);
    let left = build_node(dim, points, ids, lo, offset, nodes);
    let right = build_node(dim, points, ids, hi, offset + mid, nodes);
    nodes[at] = Node::Split {
        dim: split_dim as u32,
        value,
        left,
        right,
    };
    at as u32
}
