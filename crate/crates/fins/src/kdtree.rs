//! Balanced k-d tree for exact nearest-neighbor queries.
//!
//! Median splits, leaf size 16. Ties on distance resolve to the lowest
//! point index, which makes every query reproducible and identical to an
//! exhaustive scan.

use crate::math::Vec3;

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
enum Node {
    Split {
        axis: u8,
        value: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        start: u32,
        len: u32,
    },
}

#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<Vec3>,
    order: Vec<u32>,
    nodes: Vec<Node>,
    root: u32,
}

impl SpatialIndex {
    pub fn build(points: &[Vec3]) -> SpatialIndex {
        assert!(!points.is_empty(), "SpatialIndex over an empty set");
        let mut index = SpatialIndex {
            points: points.to_vec(),
            order: (0..points.len() as u32).collect(),
            nodes: Vec::new(),
            root: 0,
        };
        index.root = index.build_node(0, points.len());
        index
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    fn build_node(&mut self, start: usize, len: usize) -> u32 {
        if len <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                start: start as u32,
                len: len as u32,
            });
            return (self.nodes.len() - 1) as u32;
        }
        // widest axis; ties go to the lower axis id
        let slice = &self.order[start..start + len];
        let mut lo = self.points[slice[0] as usize];
        let mut hi = lo;
        for &i in slice {
            lo = lo.min(self.points[i as usize]);
            hi = hi.max(self.points[i as usize]);
        }
        let extent = hi - lo;
        let mut axis = 0usize;
        if extent.y > extent.get(axis) {
            axis = 1;
        }
        if extent.z > extent.get(axis) {
            axis = 2;
        }
        let mid = len / 2;
        let points = &self.points;
        self.order[start..start + len].select_nth_unstable_by(mid, |&a, &b| {
            let ka = points[a as usize].get(axis);
            let kb = points[b as usize].get(axis);
            ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
        });
        let value = self.points[self.order[start + mid] as usize].get(axis);
        let left = self.build_node(start, mid);
        let right = self.build_node(start + mid, len - mid);
        self.nodes.push(Node::Split {
            axis: axis as u8,
            value,
            left,
            right,
        });
        (self.nodes.len() - 1) as u32
    }

    /// Globally nearest stored point: `(index, distance)`. Equidistant
    /// candidates resolve to the lowest index.
    pub fn nearest(&self, q: Vec3) -> (usize, f64) {
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        (best.0 as usize, best.1.sqrt())
    }

    /// Squared distance from `q` to its nearest stored point.
    pub fn nearest_distance_squared(&self, q: Vec3) -> f64 {
        let mut best = (u32::MAX, f64::INFINITY);
        self.search(self.root, q, &mut best);
        best.1
    }

    fn search(&self, node: u32, q: Vec3, best: &mut (u32, f64)) {
        match self.nodes[node as usize] {
            Node::Leaf { start, len } => {
                for &i in &self.order[start as usize..(start + len) as usize] {
                    let d2 = self.points[i as usize].distance_squared(q);
                    if d2 < best.1 || (d2 == best.1 && i < best.0) {
                        *best = (i, d2);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let delta = q.get(axis as usize) - value;
                let (near, far) = if delta < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // the far side may still hold an equidistant lower index
                if delta * delta <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Exhaustive-scan reference with the same tie rule. Kept public so
/// callers and tests can cross-check queries on small inputs.
pub fn nearest_brute_force(points: &[Vec3], q: Vec3) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}
