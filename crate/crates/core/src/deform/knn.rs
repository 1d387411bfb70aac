//! Exact k-nearest-neighbour search over anchor positions with a kd-tree.
//!
//! Distances are squared Euclidean in `f64` over the `f32` coordinates;
//! candidates are ordered by `(distance, index)`, so duplicated positions
//! resolve to the lower anchor index.

use crate::error::{Error, Result};

const LEAF: usize = 8;

/// `k` neighbours per anchor, self excluded, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborIndex {
    pub k: usize,
    /// `n * k` anchor indices, anchor-major.
    pub neighbors: Vec<u32>,
}

impl NeighborIndex {
    pub fn of(&self, anchor: usize) -> &[u32] {
        &self.neighbors[anchor * self.k..(anchor + 1) * self.k]
    }

    pub fn len(&self) -> usize {
        self.neighbors.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

#[inline]
pub(crate) fn dist2(a: &[f32; 3], b: &[f32; 3]) -> f64 {
    let dx = a[0] as f64 - b[0] as f64;
    let dy = a[1] as f64 - b[1] as f64;
    let dz = a[2] as f64 - b[2] as f64;
    dx * dx + dy * dy + dz * dz
}

struct KdTree<'a> {
    pts: &'a [[f32; 3]],
    idx: Vec<u32>,
    /// Split axis of the node whose median sits at this position of `idx`.
    axis: Vec<u8>,
}

impl<'a> KdTree<'a> {
    fn new(pts: &'a [[f32; 3]]) -> Self {
        let mut t = Self {
            pts,
            idx: (0..pts.len() as u32).collect(),
            axis: vec![0; pts.len()],
        };
        t.build(0, pts.len());
        t
    }

    fn build(&mut self, lo: usize, hi: usize) {
        if hi - lo <= LEAF {
            return;
        }
        let mut min = [f32::INFINITY; 3];
        let mut max = [f32::NEG_INFINITY; 3];
        for &i in &self.idx[lo..hi] {
            for a in 0..3 {
                min[a] = min[a].min(self.pts[i as usize][a]);
                max[a] = max[a].max(self.pts[i as usize][a]);
            }
        }
        let ax = (0..3)
            .max_by(|&a, &b| (max[a] - min[a]).total_cmp(&(max[b] - min[b])).then(b.cmp(&a)))
            .unwrap_or(0);
        let mid = (lo + hi) / 2;
        let pts = self.pts;
        self.idx[lo..hi].select_nth_unstable_by(mid - lo, |&p, &q| {
            pts[p as usize][ax].total_cmp(&pts[q as usize][ax]).then(p.cmp(&q))
        });
        self.axis[mid] = ax as u8;
        self.build(lo, mid);
        self.build(mid + 1, hi);
    }

    fn query(&self, i: usize, best: &mut Best) {
        self.search(0, self.pts.len(), i, best);
    }

    fn search(&self, lo: usize, hi: usize, i: usize, best: &mut Best) {
        let q = &self.pts[i];
        if hi - lo <= LEAF {
            for &j in &self.idx[lo..hi] {
                if j as usize != i {
                    best.offer(dist2(q, &self.pts[j as usize]), j);
                }
            }
            return;
        }
        let mid = (lo + hi) / 2;
        let p = self.idx[mid];
        if p as usize != i {
            best.offer(dist2(q, &self.pts[p as usize]), p);
        }
        let ax = self.axis[mid] as usize;
        let diff = q[ax] as f64 - self.pts[p as usize][ax] as f64;
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, i, best);
        if diff * diff <= best.bound() {
            self.search(far.0, far.1, i, best);
        }
    }
}

/// Bounded sorted list of the best `(distance, index)` pairs.
struct Best {
    k: usize,
    items: Vec<(f64, u32)>,
}

impl Best {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].0
        }
    }

    #[inline]
    fn offer(&mut self, d: f64, j: u32) {
        let cand = (d, j);
        let less = |a: &(f64, u32), b: &(f64, u32)| a.0 < b.0 || (a.0 == b.0 && a.1 < b.1);
        if self.items.len() == self.k && !less(&cand, &self.items[self.k - 1]) {
            return;
        }
        let at = self.items.partition_point(|x| less(x, &cand));
        self.items.insert(at, cand);
        self.items.truncate(self.k);
    }
}

/// Neighbours for every anchor; needs at least two anchors. `k` is capped at
/// `n - 1`.
pub fn build_knn(positions: &[[f32; 3]], k: usize) -> Result<NeighborIndex> {
    if positions.len() < 2 {
        return Err(Error::TooFewAnchors {
            needed: 2,
            got: positions.len(),
        });
    }
    Ok(knn_or_empty(positions, k))
}

/// As [`build_knn`], but a single anchor simply gets no neighbours.
pub(crate) fn knn_or_empty(positions: &[[f32; 3]], k: usize) -> NeighborIndex {
    let n = positions.len();
    let k = k.min(n.saturating_sub(1));
    if k == 0 {
        return NeighborIndex {
            k: 0,
            neighbors: Vec::new(),
        };
    }
    let tree = KdTree::new(positions);
    let mut neighbors = Vec::with_capacity(n * k);
    let mut best = Best::new(k);
    for i in 0..n {
        best.items.clear();
        tree.query(i, &mut best);
        neighbors.extend(best.items.iter().map(|(_, j)| *j));
    }
    NeighborIndex { k, neighbors }
}
