//! Static 3-d tree for nearest-sample queries on point clouds.

use crate::Vec3;

#[derive(Debug, Clone)]
struct Node {
    /// Index into `KdTree::points`.
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Balanced k-d tree over a fixed set of points. Built once, read-only after.
#[derive(Debug, Clone)]
pub(crate) struct KdTree {
    points: Vec<Vec3>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub(crate) fn build(points: Vec<Vec3>) -> Self {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&points, &mut order[..], 0, &mut nodes);
        KdTree {
            points,
            nodes,
            root,
        }
    }

    fn build_rec(
        points: &[Vec3],
        idx: &mut [usize],
        depth: usize,
        nodes: &mut Vec<Node>,
    ) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % 3;
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis]).then(a.cmp(&b))
        });
        let point = idx[mid];
        let slot = nodes.len();
        nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (lo, rest) = idx.split_at_mut(mid);
        let left = Self::build_rec(points, lo, depth + 1, nodes);
        let right = Self::build_rec(points, &mut rest[1..], depth + 1, nodes);
        nodes[slot].left = left;
        nodes[slot].right = right;
        Some(slot)
    }

    pub(crate) fn points(&self) -> &[Vec3] {
        &self.points
    }

    /// Index and squared distance of the nearest point. Ties resolve to the
    /// lowest point index.
    pub(crate) fn nearest(&self, x: &Vec3) -> Option<(usize, f64)> {
        let root = self.root?;
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(root, x, &mut best);
        Some(best)
    }

    fn search(&self, node: usize, x: &Vec3, best: &mut (usize, f64)) {
        let n = &self.nodes[node];
        let p = &self.points[n.point];
        let d2 = (p - x).norm_squared();
        if d2 < best.1 || (d2 == best.1 && n.point < best.0) {
            *best = (n.point, d2);
        }
        let delta = x[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(c) = near {
            self.search(c, x, best);
        }
        // `<=` keeps equidistant candidates on the far side reachable for the tie rule.
        if delta * delta <= best.1 {
            if let Some(c) = far {
                self.search(c, x, best);
            }
        }
    }
}
