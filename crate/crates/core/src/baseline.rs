//! Dense-detection baseline: a simulated per-pixel lane detector followed by
//! threshold, skeletonize, connected components and vectorization.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, LaneGraph, Point2, Polyline};
use crate::scenegen::{BevRaster, OcclusionBand, RasterGeometry};

/// Per-pixel lane probabilities. Shares the raster type (and file formats)
/// of the intensity rasters.
pub type ProbabilityMap = BevRaster;

/// The thresholds swept by default.
pub const PRESET_TAUS: [f64; 4] = [0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSim {
    /// Ribbon width around each lane, pixels.
    pub width_px: f64,
    pub blur_sigma: f64,
    /// Standard deviation of the additive Gaussian noise.
    pub noise_sigma: f64,
    /// Rows where the detector fires nowhere.
    pub suppressed: Vec<OcclusionBand>,
    pub seed: u64,
}

impl Default for DetectorSim {
    fn default() -> Self {
        DetectorSim {
            width_px: 20.0,
            blur_sigma: 2.0,
            noise_sigma: 0.05,
            suppressed: Vec::new(),
            seed: 0,
        }
    }
}

/// Pixels whose centers lie within `width_px / 2` of a lane.
fn ribbon_map(gt: &LaneGraph, g: RasterGeometry, width_px: f64) -> Vec<f32> {
    let mut out = vec![0.0f32; g.height * g.width];
    let half = width_px / 2.0;
    for lane in gt.lanes() {
        for seg in lane.vertices().windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = ((a.x.min(b.x) - half).floor().max(0.0)) as usize;
            let x1 = ((a.x.max(b.x) + half).ceil().max(0.0) as usize).min(g.width);
            let y0 = ((a.y.min(b.y) - half).floor().max(0.0)) as usize;
            let y1 = ((a.y.max(b.y) + half).ceil().max(0.0) as usize).min(g.height);
            for row in y0..y1 {
                for col in x0..x1 {
                    let c = Point2::new(col as f64 + 0.5, row as f64 + 0.5);
                    if point_segment_distance(c, a, b) < half {
                        out[row * g.width + col] = 1.0;
                    }
                }
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with zero padding.
fn blur(data: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let pass = |src: &[f32], horizontal: bool| -> Vec<f32> {
        let mut dst = vec![0.0f32; src.len()];
        for row in 0..h as i64 {
            for col in 0..w as i64 {
                let mut acc = 0.0f64;
                for (i, kv) in k.iter().enumerate() {
                    let o = i as i64 - r;
                    let (rr, cc) = if horizontal { (row, col + o) } else { (row + o, col) };
                    if rr >= 0 && cc >= 0 && rr < h as i64 && cc < w as i64 {
                        acc += kv * src[rr as usize * w + cc as usize] as f64;
                    }
                }
                dst[row as usize * w + col as usize] = acc as f32;
            }
        }
        dst
    };
    pass(&pass(data, true), false)
}

/// Simulates the output of a network trained to mark a `width_px` ribbon
/// around each lane: ribbons, blurred, blanked in suppressed rows, plus
/// Gaussian noise clipped to `[0, 1]`.
pub fn dense_detection_map(gt: &LaneGraph, g: RasterGeometry, sim: &DetectorSim) -> Result<ProbabilityMap> {
    g.validate()?;
    if !(sim.width_px >= 1.0) {
        return Err(Error::param("width_px", "must be at least 1"));
    }
    if !(sim.blur_sigma >= 0.0) || !(sim.noise_sigma >= 0.0) {
        return Err(Error::param("detector", "blur and noise must be nonnegative"));
    }
    let mut data = ribbon_map(gt, g, sim.width_px);
    if sim.blur_sigma > 0.0 {
        data = blur(&data, g.height, g.width, sim.blur_sigma);
    }
    for band in &sim.suppressed {
        for row in 0..g.height {
            if band.contains_row(row as f64 + 0.5) {
                data[row * g.width..(row + 1) * g.width].fill(0.0);
            }
        }
    }
    if sim.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
        let normal = Normal::new(0.0, sim.noise_sigma).expect("finite sigma");
        for v in &mut data {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    BevRaster::from_data(g, data)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height * width).map(|i| f(i / width, i % width)).collect();
        BinaryMask { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Zero outside the mask.
    pub fn get_padded(&self, row: i64, col: i64) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.bits[row as usize * self.width + col as usize]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.bits[row * self.width + col] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// Set pixels as `(row, col)`, row-major.
    pub fn ones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| (i / self.width, i % self.width))
    }
}

/// Pixels with probability `>= tau`.
pub fn threshold_mask(m: &ProbabilityMap, tau: f64) -> Result<BinaryMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", "must lie in (0, 1)"));
    }
    Ok(BinaryMask {
        height: m.height(),
        width: m.width(),
        bits: m.data().iter().map(|&v| v as f64 >= tau).collect(),
    })
}

// Neighbours P2..P9 clockwise from north.
const RING: [(i64, i64); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

/// Zhang–Suen thinning to a one-pixel-wide skeleton.
pub fn skeletonize(m: &BinaryMask) -> BinaryMask {
    let mut out = m.clone();
    let mut candidates: Vec<(usize, usize)> = out.ones().collect();
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let doomed: Vec<(usize, usize)> = candidates
                .iter()
                .copied()
                .filter(|&(r, c)| out.get(r, c) && deletable(&out, r, c, pass))
                .collect();
            for &(r, c) in &doomed {
                out.set(r, c, false);
            }
            changed |= !doomed.is_empty();
        }
        if !changed {
            return out;
        }
        candidates.retain(|&(r, c)| out.get(r, c));
    }
}

fn deletable(m: &BinaryMask, r: usize, c: usize, pass: usize) -> bool {
    let p: [bool; 8] = RING.map(|(dr, dc)| m.get_padded(r as i64 + dr, c as i64 + dc));
    let b = p.iter().filter(|v| **v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = p;
    if pass == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Connected-component labels: 0 is background, components are numbered
/// `1..=count` in raster-scan order of their first pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labels {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Labels {
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Two-pass 8-connected labeling with union-find.
pub fn connected_components(m: &BinaryMask) -> Labels {
    let (h, w) = (m.height, m.width);
    let mut provisional = vec![0u32; h * w];
    let mut parent: Vec<u32> = vec![0];
    for r in 0..h {
        for c in 0..w {
            if !m.get(r, c) {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            let mut label = 0u32;
            for (dr, dc) in [(0i64, -1i64), (-1, -1), (-1, 0), (-1, 1)] {
                let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                if !m.get_padded(rr, cc) {
                    continue;
                }
                let n = provisional[rr as usize * w + cc as usize];
                if label == 0 {
                    label = n;
                } else {
                    let (a, b) = (find(&mut parent, label), find(&mut parent, n));
                    if a != b {
                        parent[a.max(b) as usize] = a.min(b);
                    }
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[r * w + c] = label;
        }
    }
    let mut dense = vec![0u32; parent.len()];
    let mut count = 0u32;
    let mut labels = provisional;
    for v in labels.iter_mut().filter(|v| **v != 0) {
        let root = find(&mut parent, *v) as usize;
        if dense[root] == 0 {
            count += 1;
            dense[root] = count;
        }
        *v = dense[root];
    }
    Labels {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorizeParams {
    /// Components with fewer pixels are dropped.
    pub min_size: usize,
    /// Douglas–Peucker tolerance, pixels.
    pub dp_tolerance: f64,
}

impl Default for VectorizeParams {
    fn default() -> Self {
        VectorizeParams {
            min_size: 30,
            dp_tolerance: 1.5,
        }
    }
}

/// Douglas–Peucker simplification; keeps both endpoints.
pub fn douglas_peucker(points: &[Point2], tolerance: f64) -> Vec<Point2> {
    if points.len() < 3 {
        return points.to_vec();
    }
    let mut keep = vec![false; points.len()];
    keep[0] = true;
    keep[points.len() - 1] = true;
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((lo, hi)) = stack.pop() {
        let (mut worst, mut at) = (0.0, lo);
        for i in lo + 1..hi {
            let d = point_segment_distance(points[i], points[lo], points[hi]);
            if d > worst {
                worst = d;
                at = i;
            }
        }
        if worst > tolerance {
            keep[at] = true;
            stack.push((lo, at));
            stack.push((at, hi));
        }
    }
    points
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(p, _)| *p)
        .collect()
}

// Step costs in thousandths of a pixel.
const ORTHOGONAL: u64 = 1000;
const DIAGONAL: u64 = 1414;

/// Shortest-path distances and predecessors from `source` over the
/// 8-neighbour graph of `pixels`.
fn dijkstra(adj: &[Vec<(usize, u64)>], source: usize) -> (Vec<u64>, Vec<usize>) {
    let mut dist = vec![u64::MAX; adj.len()];
    let mut prev = vec![usize::MAX; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0;
    heap.push(Reverse((0u64, source)));
    while let Some(Reverse((d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                prev[v] = u;
                heap.push(Reverse((nd, v)));
            }
        }
    }
    (dist, prev)
}

fn farthest(dist: &[u64]) -> usize {
    // Lowest index on ties.
    let mut best = 0;
    for (i, &d) in dist.iter().enumerate() {
        if d != u64::MAX && d > dist[best] {
            best = i;
        }
    }
    best
}

/// The longest endpoint-to-endpoint pixel path of one component, starting
/// at its bottom end.
fn longest_path(pixels: &[(usize, usize)]) -> Vec<(usize, usize)> {
    // `pixels` is in row-major order, so binary search finds neighbours.
    let lookup = |r: i64, c: i64| -> Option<usize> {
        if r < 0 || c < 0 {
            return None;
        }
        pixels.binary_search(&(r as usize, c as usize)).ok()
    };
    let adj: Vec<Vec<(usize, u64)>> = pixels
        .iter()
        .map(|&(r, c)| {
            RING.iter()
                .filter_map(|&(dr, dc)| {
                    let cost = if dr != 0 && dc != 0 { DIAGONAL } else { ORTHOGONAL };
                    lookup(r as i64 + dr, c as i64 + dc).map(|j| (j, cost))
                })
                .collect()
        })
        .collect();
    // Bottommost pixel, leftmost on ties.
    let bottom = (0..pixels.len())
        .max_by(|&a, &b| pixels[a].0.cmp(&pixels[b].0).then(pixels[b].1.cmp(&pixels[a].1)))
        .expect("nonempty component");
    let a = farthest(&dijkstra(&adj, bottom).0);
    let (dist, prev) = dijkstra(&adj, a);
    let b = farthest(&dist);
    let mut path = vec![b];
    while *path.last().unwrap() != a {
        path.push(prev[*path.last().unwrap()]);
    }
    // `path` runs b → a; start from whichever end is lower in the image.
    let (pa, pb) = (pixels[a], pixels[b]);
    if (pa.0, Reverse(pa.1)) > (pb.0, Reverse(pb.1)) {
        path.reverse();
    }
    path.into_iter().map(|i| pixels[i]).collect()
}

/// Vectorizes each labeled component of a skeleton into one polyline.
pub fn components_to_polylines(labels: &Labels, params: VectorizeParams) -> LaneGraph {
    let mut members: Vec<Vec<(usize, usize)>> = vec![Vec::new(); labels.count];
    for (i, &l) in labels.labels.iter().enumerate() {
        if l != 0 {
            members[l as usize - 1].push((i / labels.width, i % labels.width));
        }
    }
    let lanes = members
        .iter()
        .filter(|m| m.len() >= params.min_size.max(2))
        .filter_map(|m| {
            let path: Vec<Point2> = longest_path(m)
                .into_iter()
                .map(|(r, c)| Point2::new(c as f64 + 0.5, r as f64 + 0.5))
                .collect();
            Polyline::new(douglas_peucker(&path, params.dp_tolerance)).ok()
        })
        .collect();
    LaneGraph::new(lanes)
}

/// Threshold, skeletonize, label and vectorize.
pub fn run_baseline(m: &ProbabilityMap, tau: f64, params: VectorizeParams) -> Result<LaneGraph> {
    let mask = threshold_mask(m, tau)?;
    Ok(components_to_polylines(&connected_components(&skeletonize(&mask)), params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{densify, directed_polyline_distance};
    use crate::PointSet;

    fn geom(h: usize, w: usize) -> RasterGeometry {
        RasterGeometry {
            height: h,
            width: w,
            resolution: 0.05,
        }
    }

    fn vertical_graph(xs: &[f64], h: f64) -> LaneGraph {
        LaneGraph::new(
            xs.iter()
                .map(|&x| Polyline::new(vec![Point2::new(x, h), Point2::new(x, 0.0)]).unwrap())
                .collect(),
        )
    }

    fn clean() -> DetectorSim {
        DetectorSim {
            blur_sigma: 0.0,
            noise_sigma: 0.0,
            ..DetectorSim::default()
        }
    }

    #[test]
    fn exact_ribbons() {
        let m = dense_detection_map(&vertical_graph(&[100.0], 200.0), geom(200, 200), &clean()).unwrap();
        for row in 0..200 {
            for col in 0..200 {
                let expect = if (90..110).contains(&col) { 1.0 } else { 0.0 };
                assert_eq!(m.get(row, col), expect, "({row}, {col})");
            }
        }
    }

    #[test]
    fn empty_graph_map_is_zero() {
        let m = dense_detection_map(&LaneGraph::empty(), geom(50, 50), &clean()).unwrap();
        assert!(m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn clipped_noise_mean_matches_empirical_oracle() {
        let sim = DetectorSim {
            blur_sigma: 0.0,
            noise_sigma: 0.1,
            seed: 3,
            ..DetectorSim::default()
        };
        let m = dense_detection_map(&LaneGraph::empty(), geom(400, 400), &sim).unwrap();
        let mean = m.data().iter().map(|&v| v as f64).sum::<f64>() / m.data().len() as f64;
        // Oracle: the same draws, clipped independently.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let oracle = (0..400 * 400)
            .map(|_| (normal.sample(&mut rng) as f32).clamp(0.0, 1.0) as f64)
            .sum::<f64>()
            / (400.0 * 400.0);
        assert!((mean - oracle).abs() < 1e-9);
        // E[max(0, N(0, s))] = s / sqrt(2 pi).
        assert!((mean - 0.1 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-3, "{mean}");
    }

    #[test]
    fn detector_is_deterministic_per_seed() {
        let g = vertical_graph(&[30.0], 64.0);
        let sim = DetectorSim {
            seed: 9,
            ..DetectorSim::default()
        };
        let a = dense_detection_map(&g, geom(64, 64), &sim).unwrap();
        assert_eq!(a, dense_detection_map(&g, geom(64, 64), &sim).unwrap());
        let other = DetectorSim { seed: 10, ..sim };
        assert_ne!(a, dense_detection_map(&g, geom(64, 64), &other).unwrap());
    }

    #[test]
    fn threshold_examples() {
        let m = BevRaster::from_data(geom(4, 4), vec![0.6; 16]).unwrap();
        assert_eq!(threshold_mask(&m, 0.5).unwrap().count_ones(), 16);
        assert_eq!(threshold_mask(&m, 0.7).unwrap().count_ones(), 0);
        assert!(threshold_mask(&m, 0.0).is_err());
        let blurred = dense_detection_map(
            &vertical_graph(&[32.0], 64.0),
            geom(64, 64),
            &DetectorSim {
                noise_sigma: 0.0,
                ..DetectorSim::default()
            },
        )
        .unwrap();
        let lo = threshold_mask(&blurred, 0.3).unwrap();
        let hi = threshold_mask(&blurred, 0.9).unwrap();
        assert!(hi.is_subset_of(&lo));
        assert!(hi.count_ones() < lo.count_ones());
    }

    #[test]
    fn ribbon_skeleton_is_centered_line() {
        let m = dense_detection_map(&vertical_graph(&[100.0], 200.0), geom(200, 200), &clean()).unwrap();
        let skel = skeletonize(&threshold_mask(&m, 0.5).unwrap());
        for (r, c) in skel.ones() {
            assert!(((c as f64 + 0.5) - 100.0).abs() <= 1.0, "({r}, {c})");
        }
        // Away from the ends every row holds one pixel.
        for row in 15..185 {
            assert_eq!((0..200).filter(|&c| skel.get(row, c)).count(), 1, "row {row}");
        }
    }

    #[test]
    fn thin_inputs_unchanged() {
        assert_eq!(skeletonize(&BinaryMask::new(10, 10)), BinaryMask::new(10, 10));
        let line = BinaryMask::from_fn(30, 30, |r, c| c == 12 && (3..27).contains(&r));
        assert_eq!(skeletonize(&line), line);
        let diag = BinaryMask::from_fn(30, 30, |r, c| r == c && r > 2);
        assert_eq!(skeletonize(&diag), diag);
    }

    #[test]
    fn component_examples() {
        assert_eq!(connected_components(&BinaryMask::new(8, 8)).count, 0);
        let two = BinaryMask::from_fn(20, 20, |_, c| c == 3 || c == 9);
        assert_eq!(connected_components(&two).count, 2);
        // Vertical line whose lower half is shifted one column right.
        let kinked = BinaryMask::from_fn(20, 20, |r, c| (r < 10 && c == 5) || (r >= 10 && c == 6));
        let l = connected_components(&kinked);
        assert_eq!(l.count, 1);
        // U shape merges two provisional labels.
        let u = BinaryMask::from_fn(10, 10, |r, c| (c == 1 || c == 8) || (r == 9 && (1..=8).contains(&c)));
        let l = connected_components(&u);
        assert_eq!(l.count, 1);
        assert!(u.ones().all(|(r, c)| l.get(r, c) == 1));
    }

    #[test]
    fn clean_skeleton_line_vectorizes_to_one_polyline() {
        let mask = BinaryMask::from_fn(960, 64, |r, c| (30..930).contains(&r) && c == 20 + r / 100);
        let g = components_to_polylines(&connected_components(&mask), VectorizeParams::default());
        assert_eq!(g.len(), 1);
        let lane = &g.lanes()[0];
        assert!(lane.first().y > lane.last().y, "starts at the bottom");
        let skel = PointSet::new(mask.ones().map(|(r, c)| Point2::new(c as f64 + 0.5, r as f64 + 0.5)).collect()).unwrap();
        let dense = densify(lane, 1.0).unwrap();
        let total = directed_polyline_distance(&dense, &skel) + directed_polyline_distance(&skel, &dense);
        let per_point = total / (dense.len() + skel.len()) as f64;
        assert!(per_point < 1.5, "{per_point}");
    }

    #[test]
    fn small_components_dropped() {
        let mask = BinaryMask::from_fn(10, 10, |r, c| c == 4 && r < 3);
        let g = components_to_polylines(&connected_components(&mask), VectorizeParams {
            min_size: 10,
            dp_tolerance: 1.5,
        });
        assert!(g.is_empty());
    }

    #[test]
    fn y_shape_keeps_longest_path() {
        // Stem from (99, 50) up to (40, 50); short arm up-left, long arm up-right.
        let mut mask = BinaryMask::new(100, 100);
        for r in 40..100 {
            mask.set(r, 50, true);
        }
        for i in 1..=10 {
            mask.set(40 - i, 50 - i, true);
        }
        for i in 1..=30 {
            mask.set(40 - i, 50 + i, true);
        }
        let g = components_to_polylines(&connected_components(&mask), VectorizeParams::default());
        assert_eq!(g.len(), 1);
        let lane = &g.lanes()[0];
        assert_eq!(lane.first(), Point2::new(50.5, 99.5));
        assert_eq!(lane.last(), Point2::new(80.5, 10.5));
        // Oracle: stem plus the long arm.
        let expected = 59.0 + 30.0 * std::f64::consts::SQRT_2;
        assert!((lane.length() - expected).abs() < 1e-9);
    }

    #[test]
    fn douglas_peucker_collinear() {
        let pts: Vec<_> = (0..10).map(|i| Point2::new(i as f64, 2.0 * i as f64)).collect();
        assert_eq!(douglas_peucker(&pts, 0.1), vec![pts[0], pts[9]]);
    }

    #[test]
    fn noise_free_baseline_counts_lanes() {
        let g = vertical_graph(&[100.0, 200.0, 300.0], 400.0);
        let m = dense_detection_map(&g, geom(400, 400), &DetectorSim {
            noise_sigma: 0.0,
            ..DetectorSim::default()
        })
        .unwrap();
        for tau in PRESET_TAUS {
            assert_eq!(run_baseline(&m, tau, VectorizeParams::default()).unwrap().len(), 3, "tau {tau}");
        }
    }

    #[test]
    fn suppressed_band_splits_every_lane() {
        let g = vertical_graph(&[100.0, 200.0], 400.0);
        let sim = DetectorSim {
            noise_sigma: 0.0,
            suppressed: vec![OcclusionBand { top: 180.0, bottom: 240.0 }],
            ..DetectorSim::default()
        };
        let m = dense_detection_map(&g, geom(400, 400), &sim).unwrap();
        assert_eq!(run_baseline(&m, 0.5, VectorizeParams::default()).unwrap().len(), 4);
    }
}
