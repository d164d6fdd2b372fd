//! Exact nearest-neighbor search over a static 3D point set.
//!
//! Distances are computed with [`point_distance`], the same routine the
//! brute-force search uses, so both searches return bit-identical minima.

use crate::geometry::Vec3;

/// Euclidean distance with a fixed evaluation order.
#[inline]
pub fn point_distance(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Linear scan; returns `(index, distance)` of the first closest point.
pub fn brute_nearest(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = point_distance(p, q);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best
}

const LEAF_SIZE: usize = 8;

#[derive(Debug)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

#[derive(Debug)]
pub struct KdTree {
    points: Vec<Vec3>,
    /// Permutation of point indices; leaves own contiguous ranges.
    order: Vec<usize>,
    root: Option<Node>,
}

impl KdTree {
    pub fn build(points: &[Vec3]) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let root = if points.is_empty() {
            None
        } else {
            Some(build_node(points, &mut order, 0, points.len()))
        };
        KdTree {
            points: points.to_vec(),
            order,
            root,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Exact nearest neighbor. Ties resolve to the lowest original index,
    /// matching [`brute_nearest`].
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        let root = self.root.as_ref()?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, q, &mut best);
        Some(best)
    }

    fn search(&self, node: &Node, q: &Vec3, best: &mut (usize, f64)) {
        match node {
            Node::Leaf { start, end } => {
                for &i in &self.order[*start..*end] {
                    let d = point_distance(&self.points[i], q);
                    if d < best.1 || (d == best.1 && i < best.0) {
                        *best = (i, d);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[*axis] - value;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                // `<=` keeps equal-distance candidates reachable for the tie-break.
                if diff.abs() <= best.1 {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build_node(points: &[Vec3], order: &mut [usize], start: usize, end: usize) -> Node {
    if end - start <= LEAF_SIZE {
        return Node::Leaf { start, end };
    }
    let slice = &mut order[start..end];
    let mut lo = Vec3::repeat(f64::INFINITY);
    let mut hi = Vec3::repeat(f64::NEG_INFINITY);
    for &i in slice.iter() {
        lo = lo.inf(&points[i]);
        hi = hi.sup(&points[i]);
    }
    let extent = hi - lo;
    let axis = extent.imax();
    if extent[axis] == 0.0 {
        return Node::Leaf { start, end };
    }
    let mid = slice.len() / 2;
    slice.select_nth_unstable_by(mid, |&a, &b| points[a][axis].total_cmp(&points[b][axis]));
    let value = points[slice[mid]][axis];
    // Left holds coordinates <= value, right holds >= value; the query test
    // above visits the far side whenever the plane is within the best radius.
    Node::Split {
        axis,
        value,
        left: Box::new(build_node(points, order, start, start + mid)),
        right: Box::new(build_node(points, order, start + mid, end)),
    }
}
