//! Uniform-grid bucket index over planar line segments.

use std::collections::HashMap;

use crate::geo::{point_segment_distance, LocalPoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexedSegment {
    pub a: LocalPoint,
    pub b: LocalPoint,
    /// Caller-defined id of the geometry this piece belongs to.
    pub owner: usize,
}

/// Nearest hit returned by [`SegmentIndex::nearest`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub owner: usize,
    /// Position of the piece in insertion order.
    pub piece: usize,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct SegmentIndex {
    cell_m: f64,
    pieces: Vec<IndexedSegment>,
    buckets: HashMap<(i64, i64), Vec<usize>>,
    min: LocalPoint,
    max: LocalPoint,
}

impl SegmentIndex {
    pub fn new(cell_m: f64, pieces: Vec<IndexedSegment>) -> Self {
        assert!(cell_m > 0.0, "cell size must be positive");
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        let mut min = LocalPoint::new(f64::INFINITY, f64::INFINITY);
        let mut max = LocalPoint::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (i, s) in pieces.iter().enumerate() {
            let lo = LocalPoint::new(s.a.x.min(s.b.x), s.a.y.min(s.b.y));
            let hi = LocalPoint::new(s.a.x.max(s.b.x), s.a.y.max(s.b.y));
            min = LocalPoint::new(min.x.min(lo.x), min.y.min(lo.y));
            max = LocalPoint::new(max.x.max(hi.x), max.y.max(hi.y));
            let (cx0, cy0) = cell_of(lo, cell_m);
            let (cx1, cy1) = cell_of(hi, cell_m);
            for cx in cx0..=cx1 {
                for cy in cy0..=cy1 {
                    buckets.entry((cx, cy)).or_default().push(i);
                }
            }
        }
        SegmentIndex {
            cell_m,
            pieces,
            buckets,
            min,
            max,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[IndexedSegment] {
        &self.pieces
    }

    /// Indices of every piece whose bounding box may lie within `radius` of `p`,
    /// sorted and deduplicated.
    pub fn candidates(&self, p: LocalPoint, radius: f64) -> Vec<usize> {
        let (cx0, cy0) = cell_of(LocalPoint::new(p.x - radius, p.y - radius), self.cell_m);
        let (cx1, cy1) = cell_of(LocalPoint::new(p.x + radius, p.y + radius), self.cell_m);
        let mut out = Vec::new();
        if (cx1 - cx0 + 1).saturating_mul(cy1 - cy0 + 1) as usize > self.buckets.len() {
            // Query box larger than the populated grid; scan buckets instead.
            for (&(cx, cy), ids) in &self.buckets {
                if (cx0..=cx1).contains(&cx) && (cy0..=cy1).contains(&cy) {
                    out.extend_from_slice(ids);
                }
            }
        } else {
            for cx in cx0..=cx1 {
                for cy in cy0..=cy1 {
                    if let Some(ids) = self.buckets.get(&(cx, cy)) {
                        out.extend_from_slice(ids);
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Closest piece within `max_dist` of `p`. Ties go to the smaller owner, then
    /// the earlier piece.
    pub fn nearest_within(&self, p: LocalPoint, max_dist: f64) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for i in self.candidates(p, max_dist) {
            let s = &self.pieces[i];
            let d = point_segment_distance(p, s.a, s.b);
            if d > max_dist {
                continue;
            }
            let hit = Hit {
                owner: s.owner,
                piece: i,
                distance: d,
            };
            best = match best {
                Some(b) if (b.distance, b.owner, b.piece) <= (d, s.owner, i) => Some(b),
                _ => Some(hit),
            };
        }
        best
    }

    /// Closest piece with no distance bound; `None` only for an empty index.
    pub fn nearest(&self, p: LocalPoint) -> Option<Hit> {
        if self.is_empty() {
            return None;
        }
        let dx = (self.min.x - p.x).max(p.x - self.max.x).max(0.0);
        let dy = (self.min.y - p.y).max(p.y - self.max.y).max(0.0);
        let reach = dx.hypot(dy) + (self.max.x - self.min.x).hypot(self.max.y - self.min.y);
        let mut radius = self.cell_m.max(dx.hypot(dy));
        loop {
            if let Some(hit) = self.nearest_within(p, radius) {
                return Some(hit);
            }
            if radius > reach {
                // Everything lies within `reach`; unreachable unless distances are NaN.
                return None;
            }
            radius *= 2.0;
        }
    }
}

fn cell_of(p: LocalPoint, cell_m: f64) -> (i64, i64) {
    ((p.x / cell_m).floor() as i64, (p.y / cell_m).floor() as i64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(pieces: &[IndexedSegment], p: LocalPoint) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for s in pieces {
            let d = point_segment_distance(p, s.a, s.b);
            if d < best.1 || (d == best.1 && s.owner < best.0) {
                best = (s.owner, d);
            }
        }
        best
    }

    #[test]
    fn empty_index_has_no_nearest() {
        let idx = SegmentIndex::new(10.0, vec![]);
        assert!(idx.nearest(LocalPoint::default()).is_none());
        assert!(idx.nearest_within(LocalPoint::default(), 100.0).is_none());
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pieces: Vec<IndexedSegment> = (0..200)
            .map(|i| {
                let a = LocalPoint::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0));
                let b = a.add(LocalPoint::new(rng.random_range(-40.0..40.0), rng.random_range(-40.0..40.0)));
                IndexedSegment { a, b, owner: i }
            })
            .collect();
        let idx = SegmentIndex::new(25.0, pieces.clone());
        for _ in 0..500 {
            let p = LocalPoint::new(rng.random_range(-900.0..900.0), rng.random_range(-900.0..900.0));
            let hit = idx.nearest(p).unwrap();
            let (owner, d) = brute(&pieces, p);
            assert_eq!(hit.owner, owner);
            assert_eq!(hit.distance, d);
            match idx.nearest_within(p, 30.0) {
                Some(h) => assert_eq!((h.owner, h.distance), (owner, d)),
                None => assert!(d > 30.0),
            }
        }
    }
}
