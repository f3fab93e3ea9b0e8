//! Fixed-radius neighbor search on a uniform bucket grid.

use std::collections::HashMap;

use diffcore::Segments;

use crate::geometry::Point;

#[inline]
fn dist2(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// The edge predicate shared by the bucket search and any brute-force check.
#[inline]
pub fn within(a: Point, b: Point, r: f64) -> bool {
    dist2(a, b) < r * r
}

/// Bucketed point set with cell size equal to the query radius.
pub struct SpatialHash {
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    points: Vec<Point>,
}

impl SpatialHash {
    pub fn new(points: &[Point], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "bucket size must be positive");
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, &p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets, points: points.to_vec() }
    }

    fn key(p: Point, cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Indices of stored points strictly closer than `r` to `q`, ascending.
    /// `r` must not exceed the cell size.
    pub fn within(&self, q: Point, r: f64, out: &mut Vec<usize>) {
        debug_assert!(r <= self.cell);
        out.clear();
        let (ci, cj) = Self::key(q, self.cell);
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(b) = self.buckets.get(&(ci + di, cj + dj)) {
                    out.extend(b.iter().copied().filter(|&i| within(self.points[i], q, r)));
                }
            }
        }
        out.sort_unstable();
    }

    /// Index of the closest stored point (lowest index on ties).
    pub fn nearest(&self, q: Point) -> Option<usize> {
        if self.points.is_empty() {
            return None;
        }
        // widen the ring until a hit is found, then one more ring to be safe
        let (ci, cj) = Self::key(q, self.cell);
        let mut best: Option<(f64, usize)> = None;
        let mut ring = 0i64;
        let max_ring = self.buckets.keys().map(|&(i, j)| (i - ci).abs().max((j - cj).abs())).max().unwrap_or(0);
        while ring <= max_ring {
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    if di.abs() != ring && dj.abs() != ring {
                        continue;
                    }
                    let Some(b) = self.buckets.get(&(ci + di, cj + dj)) else {
                        continue;
                    };
                    for &i in b {
                        let d = dist2(self.points[i], q);
                        if best.is_none_or(|(bd, bi)| d < bd || (d == bd && i < bi)) {
                            best = Some((d, i));
                        }
                    }
                }
            }
            // anything in ring k+1 is at least k * cell away
            if let Some((bd, _)) = best {
                let reach = ring as f64 * self.cell;
                if reach * reach > bd {
                    break;
                }
            }
            ring += 1;
        }
        best.map(|(_, i)| i)
    }

    /// The `k` closest stored points as `(squared distance, index)`,
    /// nearest first, ties broken by index.
    pub fn nearest_k(&self, q: Point, k: usize, out: &mut Vec<(f64, usize)>) {
        out.clear();
        if k == 0 || self.points.is_empty() {
            return;
        }
        let (ci, cj) = Self::key(q, self.cell);
        let max_ring = self.buckets.keys().map(|&(i, j)| (i - ci).abs().max((j - cj).abs())).max().unwrap_or(0);
        let mut ring = 0i64;
        while ring <= max_ring {
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    if di.abs() != ring && dj.abs() != ring {
                        continue;
                    }
                    if let Some(b) = self.buckets.get(&(ci + di, cj + dj)) {
                        out.extend(b.iter().map(|&i| (dist2(self.points[i], q), i)));
                    }
                }
            }
            if out.len() >= k {
                out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                out.truncate(k);
                let reach = ring as f64 * self.cell;
                if reach * reach > out[k - 1].0 {
                    return;
                }
            }
            ring += 1;
        }
        out.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.truncate(k);
    }
}

/// Edges `src_i -> dst_j` with `|src_i - dst_j| < r`, grouped by destination
/// and ascending in source index within each group.
pub fn radius_graph(src: &[Point], dst: &[Point], r: f64) -> Segments {
    let hash = SpatialHash::new(src, r);
    let mut offsets = Vec::with_capacity(dst.len() + 1);
    offsets.push(0);
    let mut sources = Vec::new();
    let mut hits = Vec::new();
    for &q in dst {
        hash.within(q, r, &mut hits);
        sources.extend_from_slice(&hits);
        offsets.push(sources.len());
    }
    Segments { offsets, sources }
}

/// Like [`radius_graph`], but a destination with an empty ball is linked to
/// its single nearest source instead.
pub fn radius_graph_or_nearest(src: &[Point], dst: &[Point], r: f64) -> Segments {
    let hash = SpatialHash::new(src, r);
    let mut offsets = Vec::with_capacity(dst.len() + 1);
    offsets.push(0);
    let mut sources = Vec::new();
    let mut hits = Vec::new();
    for &q in dst {
        hash.within(q, r, &mut hits);
        if hits.is_empty() {
            sources.extend(hash.nearest(q));
        } else {
            sources.extend_from_slice(&hits);
        }
        offsets.push(sources.len());
    }
    Segments { offsets, sources }
}
