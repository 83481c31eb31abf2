//! Static 3-d tree for exact nearest-neighbour queries.

/// Nearest neighbours with ties resolved to the lowest point index.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    /// Point indices arranged as an implicit balanced tree over `nodes[lo..hi]`.
    nodes: Vec<u32>,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

impl KdTree {
    pub fn new(points: &[[f64; 3]]) -> Self {
        let mut nodes: Vec<u32> = (0..points.len() as u32).collect();
        build(points, &mut nodes, 0);
        Self { points: points.to_vec(), nodes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Index and squared distance of the nearest point, `None` when empty.
    pub fn nearest(&self, q: &[f64; 3]) -> Option<(usize, f64)> {
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(q, 0, self.nodes.len(), 0, &mut best);
        (best.0 != usize::MAX).then_some(best)
    }

    fn search(&self, q: &[f64; 3], lo: usize, hi: usize, axis: usize, best: &mut (usize, f64)) {
        if lo >= hi {
            return;
        }
        let mid = (lo + hi) / 2;
        let i = self.nodes[mid] as usize;
        let p = &self.points[i];
        let d = dist2(p, q);
        if d < best.1 || (d == best.1 && i < best.0) {
            *best = (i, d);
        }
        let diff = q[axis] - p[axis];
        let next = (axis + 1) % 3;
        let (near, far) = if diff < 0.0 { ((lo, mid), (mid + 1, hi)) } else { ((mid + 1, hi), (lo, mid)) };
        self.search(q, near.0, near.1, next, best);
        // Equal distance on the far side may still hold a lower index.
        if diff * diff <= best.1 {
            self.search(q, far.0, far.1, next, best);
        }
    }
}

fn build(points: &[[f64; 3]], nodes: &mut [u32], axis: usize) {
    if nodes.len() <= 1 {
        return;
    }
    let mid = nodes.len() / 2;
    nodes.select_nth_unstable_by(mid, |&a, &b| {
        points[a as usize][axis].total_cmp(&points[b as usize][axis]).then(a.cmp(&b))
    });
    let (left, right) = nodes.split_at_mut(mid);
    build(points, left, (axis + 1) % 3);
    build(points, &mut right[1..], (axis + 1) % 3);
}

/// Exhaustive nearest neighbour with the same tie rule.
pub fn brute_nearest(points: &[[f64; 3]], q: &[f64; 3]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in points.iter().enumerate() {
        let d = dist2(p, q);
        if best.is_none_or(|b| d < b.1) {
            best = Some((i, d));
        }
    }
    best
}
