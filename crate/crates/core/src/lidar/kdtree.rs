//! Static 3-D kd-tree with exact nearest / k-nearest queries.
//!
//! Results are ordered by `(squared distance, index)`, so equidistant
//! neighbors resolve to the lowest index, the same as a brute-force scan.

use std::collections::BinaryHeap;

use super::cloud::Point3;

const LEAF_SIZE: usize = 8;

/// Squared Euclidean distance. Shared with the brute-force paths so results
/// compare bit-for-bit.
#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub dist2: f64,
}

impl Neighbor {
    #[inline]
    fn before(&self, other: &Neighbor) -> bool {
        self.dist2 < other.dist2 || (self.dist2 == other.dist2 && self.index < other.index)
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.dist2
            .total_cmp(&other.dist2)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Clone, Debug)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Clone, Debug)]
pub struct KdTree {
    points: Vec<Point3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: Vec<Point3>) -> Self {
        let mut tree = KdTree {
            order: (0..points.len()).collect(),
            points,
            nodes: Vec::new(),
        };
        if !tree.points.is_empty() {
            tree.build(0, tree.points.len());
        }
        tree
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = Point3::repeat(f64::INFINITY);
        let mut hi = Point3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        let mid = start + (end - start) / 2;
        let pts = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            pts[a][axis].total_cmp(&pts[b][axis]).then(a.cmp(&b))
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Split {
            axis,
            value,
            left: 0,
            right: 0,
        });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        if let Node::Split {
            left: l, right: r, ..
        } = &mut self.nodes[id]
        {
            *l = left;
            *r = right;
        }
        id
    }

    /// Exact nearest neighbor.
    pub fn nearest(&self, q: &Point3) -> Option<Neighbor> {
        if self.points.is_empty() {
            return None;
        }
        let mut best = Neighbor {
            index: usize::MAX,
            dist2: f64::INFINITY,
        };
        self.nearest_in(0, q, &mut best);
        Some(best)
    }

    fn nearest_in(&self, node: usize, q: &Point3, best: &mut Neighbor) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(q, &self.points[i]),
                    };
                    if cand.before(best) {
                        *best = cand;
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
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_in(near, q, best);
                if diff * diff <= best.dist2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest points sorted by `(distance, index)`.
    pub fn k_nearest(&self, q: &Point3, k: usize) -> Vec<Neighbor> {
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if k > 0 && !self.points.is_empty() {
            self.knn_in(0, q, k, &mut heap);
        }
        heap.into_sorted_vec()
    }

    fn knn_in(&self, node: usize, q: &Point3, k: usize, heap: &mut BinaryHeap<Neighbor>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let cand = Neighbor {
                        index: i,
                        dist2: dist2(q, &self.points[i]),
                    };
                    if heap.len() < k {
                        heap.push(cand);
                    } else if cand.before(heap.peek().expect("heap is full")) {
                        heap.pop();
                        heap.push(cand);
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
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_in(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().map_or(f64::INFINITY, |n| n.dist2)
                };
                if diff * diff <= bound {
                    self.knn_in(far, q, k, heap);
                }
            }
        }
    }
}

/// O(n) reference nearest neighbor with the same tie-breaking.
pub fn brute_force_nearest(points: &[Point3], q: &Point3) -> Option<Neighbor> {
    points
        .iter()
        .enumerate()
        .map(|(index, p)| Neighbor {
            index,
            dist2: dist2(q, p),
        })
        .min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Point3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    #[test]
    fn nearest_matches_brute_force() {
        let pts = random_points(700, 1);
        let tree = KdTree::new(pts.clone());
        for q in random_points(300, 2) {
            assert_eq!(tree.nearest(&q), brute_force_nearest(&pts, &q));
        }
    }

    #[test]
    fn knn_matches_sorted_brute_force() {
        let pts = random_points(400, 3);
        let tree = KdTree::new(pts.clone());
        for q in random_points(50, 4) {
            let mut all: Vec<Neighbor> = pts
                .iter()
                .enumerate()
                .map(|(index, p)| Neighbor {
                    index,
                    dist2: dist2(&q, p),
                })
                .collect();
            all.sort();
            assert_eq!(tree.k_nearest(&q, 11), all[..11].to_vec());
        }
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let mut pts = vec![Point3::new(1.0, 0.0, 0.0); 20];
        pts.push(Point3::new(-1.0, 0.0, 0.0));
        pts.insert(0, Point3::new(-1.0, 0.0, 0.0));
        let tree = KdTree::new(pts);
        let n = tree.nearest(&Point3::zeros()).unwrap();
        assert_eq!(n.index, 0);
        let k: Vec<usize> = tree.k_nearest(&Point3::zeros(), 3).iter().map(|n| n.index).collect();
        assert_eq!(k, vec![0, 1, 2]);
    }

    #[test]
    fn empty_tree() {
        let tree = KdTree::new(Vec::new());
        assert!(tree.nearest(&Point3::zeros()).is_none());
        assert!(tree.k_nearest(&Point3::zeros(), 3).is_empty());
    }
}
