//! Exact nearest-neighbour indexes.
//!
//! Both return exactly what an exhaustive scan returns, including the
//! lowest-index tie break, so they can stand in for the brute-force min-pool
//! without changing any loss or metric value.

use crate::geometry::Point2;

pub struct GridIndex<'a> {
    points: &'a [Point2],
    origin: Point2,
    cell: f64,
    cols: usize,
    rows: usize,
    // CSR layout: items[starts[c]..starts[c + 1]] are the points of cell c,
    // in ascending index order.
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl<'a> GridIndex<'a> {
    pub fn new(points: &'a [Point2]) -> Self {
        assert!(points.len() < u32::MAX as usize);
        let (mut lo, mut hi) = (
            Point2::new(f64::INFINITY, f64::INFINITY),
            Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in points {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if points.is_empty() {
            lo = Point2::default();
            hi = Point2::default();
        }
        let extent = (hi.x - lo.x).max(hi.y - lo.y);
        let area = ((hi.x - lo.x).max(extent * 1e-3)) * ((hi.y - lo.y).max(extent * 1e-3));
        // About two points per occupied cell on uniform data.
        let mut cell = (2.0 * area / points.len().max(1) as f64).sqrt();
        if !(cell > 0.0 && cell.is_finite()) {
            cell = 1.0;
        }
        let dim = |span: f64| ((span / cell).floor() as usize + 1).min(4096);
        // Points past a capped dimension are clamped into the last cell; the
        // ring bound in `nearest` stays a valid lower bound either way.
        let (cols, rows) = (dim(hi.x - lo.x), dim(hi.y - lo.y));

        let mut index = GridIndex {
            points,
            origin: lo,
            cell,
            cols,
            rows,
            starts: vec![0; cols * rows + 1],
            items: vec![0; points.len()],
        };
        let cell_ids: Vec<usize> = points
            .iter()
            .map(|&p| {
                let (c, r) = index.cell_of(p);
                r * cols + c
            })
            .collect();
        for &c in &cell_ids {
            index.starts[c + 1] += 1;
        }
        for c in 0..cols * rows {
            index.starts[c + 1] += index.starts[c];
        }
        let mut fill = index.starts.clone();
        for (i, &c) in cell_ids.iter().enumerate() {
            index.items[fill[c] as usize] = i as u32;
            fill[c] += 1;
        }
        index
    }

    fn cell_coord(&self, v: f64, origin: f64, n: usize) -> usize {
        let c = ((v - origin) / self.cell).floor();
        if c.is_nan() || c < 0.0 {
            0
        } else {
            (c as usize).min(n - 1)
        }
    }

    fn cell_of(&self, p: Point2) -> (usize, usize) {
        (
            self.cell_coord(p.x, self.origin.x, self.cols),
            self.cell_coord(p.y, self.origin.y, self.rows),
        )
    }

    fn scan_cell(&self, c: usize, r: usize, q: Point2, best: &mut Option<(f64, u32)>) {
        let id = r * self.cols + c;
        for &i in &self.items[self.starts[id] as usize..self.starts[id + 1] as usize] {
            let d2 = q.distance_squared(self.points[i as usize]);
            let better = match *best {
                None => true,
                Some((b, bi)) => d2 < b || (d2 == b && i < bi),
            };
            if better {
                *best = Some((d2, i));
            }
        }
    }

    /// Distance to and index of the nearest indexed point.
    pub fn nearest(&self, q: Point2) -> Option<(f64, usize)> {
        if self.points.is_empty() {
            return None;
        }
        let (cx, cy) = self.cell_of(q);
        let (cx, cy) = (cx as isize, cy as isize);
        let max_ring = self.cols.max(self.rows) as isize;
        let mut best: Option<(f64, u32)> = None;
        for ring in 0..=max_ring {
            if ring >= 1 {
                if let Some((b, _)) = best {
                    // Every cell on this ring is at least ring - 1 whole cells away.
                    let bound = (ring - 1) as f64 * self.cell;
                    if bound * bound > b {
                        break;
                    }
                }
            }
            let in_cols = |c: isize| c >= 0 && (c as usize) < self.cols;
            let in_rows = |r: isize| r >= 0 && (r as usize) < self.rows;
            if ring == 0 {
                self.scan_cell(cx as usize, cy as usize, q, &mut best);
                continue;
            }
            for c in (cx - ring)..=(cx + ring) {
                if !in_cols(c) {
                    continue;
                }
                for r in [cy - ring, cy + ring] {
                    if in_rows(r) {
                        self.scan_cell(c as usize, r as usize, q, &mut best);
                    }
                }
            }
            for r in (cy - ring + 1)..=(cy + ring - 1) {
                if !in_rows(r) {
                    continue;
                }
                for c in [cx - ring, cx + ring] {
                    if in_cols(c) {
                        self.scan_cell(c as usize, r as usize, q, &mut best);
                    }
                }
            }
        }
        best.map(|(d2, i)| (d2.sqrt(), i as usize))
    }
}

/// Nearest neighbour among the points of densified polylines, found per
/// segment: the samples on a segment are evenly spaced, so the closest one
/// is within one sample of the query's projection. Costs O(segments) per
/// query regardless of how many points the polylines hold.
pub struct SegmentIndex<'a> {
    points: &'a [Point2],
    segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: Point2,
    d: Point2,
    inv_len2: f64,
    pieces: usize,
    base: usize,
}

impl<'a> SegmentIndex<'a> {
    /// `runs` gives, for each densified polyline stored contiguously in
    /// `points`, its offset and the interior sample count of every segment.
    pub fn new(points: &'a [Point2], runs: &[(usize, &[usize])]) -> Self {
        let mut segments = Vec::new();
        for &(offset, interior) in runs {
            let mut base = offset;
            for &n in interior {
                let pieces = n + 1;
                let (a, b) = (points[base], points[base + pieces]);
                let d = b - a;
                segments.push(Segment {
                    a,
                    d,
                    inv_len2: 1.0 / d.dot(d),
                    pieces,
                    base,
                });
                base += pieces;
            }
        }
        SegmentIndex { points, segments }
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn nearest(&self, q: Point2) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for s in &self.segments {
            let t = (q - s.a).dot(s.d) * s.inv_len2 * s.pieces as f64;
            let k0 = if t.is_nan() { 0 } else { t.round().clamp(0.0, s.pieces as f64) as usize };
            for k in k0.saturating_sub(1)..=(k0 + 1).min(s.pieces) {
                let i = s.base + k;
                let d2 = q.distance_squared(self.points[i]);
                if best.is_none_or(|(b, bi)| d2 < b || (d2 == b && i < bi)) {
                    best = Some((d2, i));
                }
            }
        }
        best.map(|(d2, i)| (d2.sqrt(), i))
    }
}
