//! Count-then-draw lane-graph extraction.
//!
//! 1. [`propose_initial_regions`] finds where lane boundaries enter the
//!    bottom of the raster and returns their bins on a K×K grid, ordered
//!    left to right. The list simply ends when no more entries exist.
//! 2. [`trace_polyline`] draws one boundary from its bin by repeatedly
//!    cropping an `h_c × w_c` window ahead of the current vertex and moving
//!    to the evidence centroid in the window's forward half, dead-reckoning
//!    through windows without evidence.
//! 3. [`refine_polyline`] pulls the traced vertices onto the evidence by
//!    descending the one-sided polyline distance plus a curvature penalty.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    DensePolyline, LaneGraph, NearestFinder, Point2, PointSet, Polyline, DEFAULT_DENSIFY_STEP,
};
use crate::losses::{DIVERGENCE_LIMIT, MAX_HALVINGS};
use crate::scenegen::{crop_window, evidence_pixels, BevRaster, RasterGeometry};

/// One tile of the K×K grid over the raster. Row `r` covers
/// `y ∈ [r·H/K, (r+1)·H/K)`, and likewise for columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RegionBin {
    pub row: usize,
    pub col: usize,
    pub k: usize,
}

impl RegionBin {
    pub fn new(row: usize, col: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::param("k_grid", format!("must be at least 2, got {k}")));
        }
        if row >= k || col >= k {
            return Err(Error::param(
                "bin",
                format!("({row}, {col}) outside a {k}x{k} grid"),
            ));
        }
        Ok(RegionBin { row, col, k })
    }

    /// The bin containing `p`, or `None` outside the raster.
    pub fn containing(p: Point2, k: usize, g: RasterGeometry) -> Option<Self> {
        if !g.contains(p) || k == 0 {
            return None;
        }
        let row = ((p.y * k as f64 / g.height as f64).floor() as usize).min(k - 1);
        let col = ((p.x * k as f64 / g.width as f64).floor() as usize).min(k - 1);
        Some(RegionBin { row, col, k })
    }

    /// Pixel rows `[top, bottom)` and columns `[left, right)` whose centers
    /// fall in this bin.
    pub fn pixel_bounds(&self, g: RasterGeometry) -> (usize, usize, usize, usize) {
        // Pixel i belongs to bin floor((i + 0.5) * k / n).
        let edge = |b: usize, n: usize| -> usize {
            ((b * n) as f64 / self.k as f64 - 0.5).ceil().max(0.0) as usize
        };
        (
            edge(self.row, g.height),
            edge(self.row + 1, g.height).min(g.height),
            edge(self.col, g.width),
            edge(self.col + 1, g.width).min(g.width),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// The trace reached the raster boundary.
    Boundary,
    /// Too many consecutive windows without evidence.
    NoEvidence,
    /// The step cap was reached.
    StepCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionParams {
    pub k_grid: usize,
    pub tau: f64,
    pub crop_h: usize,
    pub crop_w: usize,
    /// Curvature weight of the refinement.
    pub lambda: f64,
    pub refine_steps: usize,
    pub refine_lr: f64,
    /// Evidence farther than this from a traced lane is ignored when refining it.
    pub corridor_px: f64,
    /// Proposal clusters closer than half this are merged.
    pub min_lane_spacing_px: f64,
    /// Height fraction at the bottom of the raster searched for lane entries.
    pub entry_fraction: f64,
    /// Evidence points a proposal cluster needs.
    pub min_cluster_support: usize,
    /// Weight of the previous heading when blending in a new step direction.
    pub heading_smoothing: f64,
    pub max_missed_windows: usize,
}

impl Default for ExtractionParams {
    fn default() -> Self {
        ExtractionParams {
            k_grid: 24,
            tau: 0.5,
            crop_h: 60,
            crop_w: 60,
            lambda: 0.05,
            refine_steps: 30,
            refine_lr: 8.0,
            corridor_px: 10.0,
            min_lane_spacing_px: 68.0,
            entry_fraction: 0.25,
            min_cluster_support: 10,
            heading_smoothing: 0.5,
            max_missed_windows: 3,
        }
    }
}

impl ExtractionParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid < 2 {
            return Err(Error::param("k_grid", "must be at least 2"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::param("tau", "must lie in (0, 1)"));
        }
        if self.crop_h == 0 || self.crop_w == 0 {
            return Err(Error::param("crop", "window dimensions must be positive"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::param("lambda", "must be nonnegative"));
        }
        if !(self.refine_lr > 0.0) {
            return Err(Error::param("refine_lr", "must be positive"));
        }
        if !(self.entry_fraction > 0.0 && self.entry_fraction <= 1.0) {
            return Err(Error::param("entry_fraction", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.heading_smoothing) {
            return Err(Error::param("heading_smoothing", "must lie in [0, 1)"));
        }
        if self.max_missed_windows == 0 {
            return Err(Error::param("max_missed_windows", "must be at least 1"));
        }
        Ok(())
    }

    /// `ceil(H / h_c) + 3`.
    pub fn step_cap(&self, height: usize) -> usize {
        height.div_ceil(self.crop_h) + 3
    }

    pub fn refine_options(&self) -> RefineOptions {
        RefineOptions {
            lambda: self.lambda,
            steps: self.refine_steps,
            lr: self.refine_lr,
            step: DEFAULT_DENSIFY_STEP,
        }
    }
}

/// Evidence pixels with at least one evidence pixel among their 8
/// neighbours; isolated returns are dropped.
pub fn connected_evidence(r: &BevRaster, tau: f64) -> Vec<(usize, usize)> {
    let (h, w) = (r.height() as i64, r.width() as i64);
    evidence_pixels(r, tau)
        .filter(|&(row, col)| {
            let (row, col) = (row as i64, col as i64);
            (-1..=1).any(|dr| {
                (-1..=1).any(|dc| {
                    (dr, dc) != (0, 0)
                        && row + dr >= 0
                        && row + dr < h
                        && col + dc >= 0
                        && col + dc < w
                        && r.get_padded(row + dr, col + dc) as f64 >= tau
                })
            })
        })
        .collect()
}

fn pixel_center(row: usize, col: usize) -> Point2 {
    Point2::new(col as f64 + 0.5, row as f64 + 0.5)
}

/// Ordered starting bins, one per lane boundary entering the bottom band.
pub fn propose_initial_regions(r: &BevRaster, params: &ExtractionParams) -> Result<Vec<RegionBin>> {
    params.validate()?;
    let g = r.geometry();
    let band_top = g.height as f64 * (1.0 - params.entry_fraction);
    let mut entries: Vec<Point2> = connected_evidence(r, params.tau)
        .into_iter()
        .map(|(row, col)| pixel_center(row, col))
        .filter(|p| p.y >= band_top)
        .collect();
    entries.sort_by(|a, b| a.x.total_cmp(&b.x).then(b.y.total_cmp(&a.y)));

    let merge_radius = params.min_lane_spacing_px / 2.0;
    let mut bins: Vec<RegionBin> = Vec::new();
    let mut start = 0;
    while start < entries.len() {
        let mut end = start + 1;
        while end < entries.len() && entries[end].x - entries[end - 1].x <= merge_radius {
            end += 1;
        }
        let cluster = &entries[start..end];
        if cluster.len() >= params.min_cluster_support {
            // Bottommost point, leftmost on ties.
            let entry = cluster
                .iter()
                .copied()
                .reduce(|best, p| if p.y > best.y { p } else { best })
                .expect("nonempty cluster");
            let bin = RegionBin::containing(entry, params.k_grid, g).expect("entry inside raster");
            if bins.last().is_none_or(|last| last.col < bin.col) {
                bins.push(bin);
            }
        }
        start = end;
    }
    Ok(bins)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub polyline: Polyline,
    pub stop: StopReason,
    pub steps: usize,
}

fn bin_centroid(r: &BevRaster, bin: RegionBin, tau: f64) -> Option<Point2> {
    let (top, bottom, left, right) = bin.pixel_bounds(r.geometry());
    let (mut sum, mut n) = (Point2::default(), 0usize);
    for row in top..bottom {
        for col in left..right {
            if r.get(row, col) as f64 >= tau {
                sum = sum + pixel_center(row, col);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum * (1.0 / n as f64))
}

/// Walks from `from` towards `to` and stops at the raster boundary
/// (closed box `[0, W] × [0, H]`).
fn clip_to_raster(from: Point2, to: Point2, g: RasterGeometry) -> Point2 {
    let d = to - from;
    let mut t: f64 = 1.0;
    let limit = |p: f64, dp: f64, hi: f64| -> f64 {
        if dp > 0.0 {
            (hi - p) / dp
        } else if dp < 0.0 {
            -p / dp
        } else {
            f64::INFINITY
        }
    };
    t = t.min(limit(from.x, d.x, g.width as f64));
    t = t.min(limit(from.y, d.y, g.height as f64));
    let p = from + d * t.max(0.0);
    Point2::new(p.x.clamp(0.0, g.width as f64), p.y.clamp(0.0, g.height as f64))
}

const UP: Point2 = Point2::new(0.0, -1.0);

/// Keeps the heading within 45° of straight up so every step makes upward
/// progress.
fn constrain_heading(h: Point2) -> Point2 {
    let limit = std::f64::consts::FRAC_1_SQRT_2;
    match h.normalized() {
        Some(u) if -u.y >= limit => u,
        Some(u) => Point2::new(limit.copysign(u.x), -limit),
        None => UP,
    }
}

/// Draws one lane boundary starting from `start`.
pub fn trace_polyline(r: &BevRaster, start: RegionBin, params: &ExtractionParams) -> Result<Trace> {
    params.validate()?;
    let g = r.geometry();
    let mut v = bin_centroid(r, start, params.tau).ok_or(Error::NoEvidence {
        row: start.row,
        col: start.col,
    })?;
    let (h_c, w_c) = (params.crop_h, params.crop_w);
    let mut vertices = vec![v];
    let mut heading = UP;
    let mut missed = 0;
    let mut steps = 0;
    let mut stop = StopReason::StepCap;

    while steps < params.step_cap(g.height) {
        steps += 1;
        let center = v + heading * h_c as f64;
        let crop = crop_window(r, center, h_c, w_c)?;
        let (mut sum, mut hits, mut on_raster) = (Point2::default(), 0usize, 0usize);
        for row in 0..h_c {
            for col in 0..w_c {
                let pc = crop.pixel_center(row, col);
                if (pc - center).dot(heading) < 0.0 {
                    continue;
                }
                if g.contains(pc) {
                    on_raster += 1;
                    if crop.get(row, col) as f64 >= params.tau {
                        sum = sum + pc;
                        hits += 1;
                    }
                }
            }
        }
        if on_raster == 0 {
            let terminal = clip_to_raster(v, v + heading * h_c as f64, g);
            if terminal.y < v.y {
                vertices.push(terminal);
            }
            stop = StopReason::Boundary;
            break;
        }
        let next = if hits > 0 {
            missed = 0;
            sum * (1.0 / hits as f64)
        } else {
            missed += 1;
            if missed >= params.max_missed_windows && vertices.len() >= 2 {
                stop = StopReason::NoEvidence;
                break;
            }
            v + heading * h_c as f64
        };
        if !g.contains(next) {
            let terminal = clip_to_raster(v, next, g);
            if terminal.y < v.y {
                vertices.push(terminal);
            }
            stop = StopReason::Boundary;
            break;
        }
        if let Some(dir) = (next - v).normalized() {
            let s = params.heading_smoothing;
            heading = constrain_heading(heading * s + dir * (1.0 - s));
        }
        vertices.push(next);
        v = next;
        if missed >= params.max_missed_windows {
            stop = StopReason::NoEvidence;
            break;
        }
    }
    if vertices.len() < 2 {
        let terminal = clip_to_raster(v, v + heading * h_c as f64, g);
        if terminal.y < v.y {
            vertices.push(terminal);
        }
    }
    let polyline = Polyline::new(vertices).map_err(|_| Error::NoEvidence {
        row: start.row,
        col: start.col,
    })?;
    Ok(Trace {
        polyline,
        stop,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineOptions {
    pub lambda: f64,
    pub steps: usize,
    /// Initial step size; adapted by backtracking.
    pub lr: f64,
    /// Densification spacing.
    pub step: f64,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions {
            lambda: 0.05,
            steps: 200,
            lr: 8.0,
            step: DEFAULT_DENSIFY_STEP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RefineResult {
    pub polyline: Polyline,
    /// Objective before the first step and after each accepted step.
    pub trace: Vec<f64>,
}

fn curvature_penalty(v: &[Point2]) -> f64 {
    v.windows(3)
        .map(|w| {
            let r = w[0] - w[1] * 2.0 + w[2];
            r.dot(r)
        })
        .sum()
}

/// Mean distance from the densified polyline to the evidence, and a descent
/// direction for it: the gradient with endpoints held fixed, projected onto
/// the local normals.
fn evidence_term(p: &Polyline, finder: &NearestFinder, evidence: &[Point2], step: f64) -> Result<(f64, Vec<Point2>)> {
    let dense = DensePolyline::build(p, step)?;
    let n = dense.points.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![Point2::default(); p.len()];
    for (pt, parent) in dense.points.iter().zip(&dense.parents) {
        let (d, k) = finder.nearest(*pt);
        value += d;
        if d > 0.0 {
            let g = (*pt - evidence[k]) * (1.0 / (d * n));
            grad[parent.segment] = grad[parent.segment] + g * parent.weight;
            if parent.weight != 1.0 {
                grad[parent.segment + 1] = grad[parent.segment + 1] + g * (1.0 - parent.weight);
            }
        }
    }
    let last = grad.len() - 1;
    grad[0] = Point2::default();
    grad[last] = Point2::default();
    // Only the component across the lane is kept; sliding along it changes
    // nothing but the pixel sampling.
    let v = p.vertices();
    for i in 1..last {
        if let Some(t) = (v[i + 1] - v[i - 1]).normalized() {
            grad[i] = grad[i] - t * grad[i].dot(t);
        }
    }
    Ok((value / n, grad))
}

/// Minimizes `|z_I - x_I|² / (2 lr) + lambda |L x|²` over the interior
/// vertices, where `L` takes second differences and the endpoints are fixed.
fn smoothing_prox(z: &[Point2], lr: f64, lambda: f64) -> Vec<Point2> {
    let n = z.len();
    if lambda == 0.0 || n < 3 {
        return z.to_vec();
    }
    let m = n - 2;
    let c = 2.0 * lr * lambda;
    // Second-difference rows over all n vertices; interior unknowns are 1..n-1.
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut rhs_x = nalgebra::DVector::<f64>::zeros(m);
    let mut rhs_y = nalgebra::DVector::<f64>::zeros(m);
    for i in 0..m {
        rhs_x[i] = z[i + 1].x;
        rhs_y[i] = z[i + 1].y;
    }
    for row in 0..m {
        // Row `row` is centered on vertex row + 1 with stencil (1, -2, 1).
        let stencil = [(row, 1.0), (row + 1, -2.0), (row + 2, 1.0)];
        let boundary: Point2 = stencil
            .iter()
            .filter(|(j, _)| *j == 0 || *j == n - 1)
            .fold(Point2::default(), |acc, &(j, w)| acc + z[j] * w);
        for &(ja, wa) in &stencil {
            if ja == 0 || ja == n - 1 {
                continue;
            }
            for &(jb, wb) in &stencil {
                if jb == 0 || jb == n - 1 {
                    continue;
                }
                a[(ja - 1, jb - 1)] += c * wa * wb;
            }
            rhs_x[ja - 1] -= c * wa * boundary.x;
            rhs_y[ja - 1] -= c * wa * boundary.y;
        }
    }
    let chol = a.cholesky().expect("identity plus a Gram matrix is positive definite");
    let sx = chol.solve(&rhs_x);
    let sy = chol.solve(&rhs_y);
    let mut out = z.to_vec();
    for i in 0..m {
        out[i + 1] = Point2::new(sx[i], sy[i]);
    }
    out
}

/// Pulls `p` onto the evidence: minimizes the mean distance from its
/// densified points to the evidence plus `lambda` times the summed squared
/// second differences of its vertices. Endpoints stay fixed.
///
/// Each step is a gradient step on the distance followed by an exact
/// minimization of the curvature penalty around it (a proximal step), with
/// the step size halved until the objective does not increase.
pub fn refine_polyline(p: &Polyline, evidence: &PointSet, opts: RefineOptions) -> Result<RefineResult> {
    if !(opts.lambda >= 0.0 && opts.lambda.is_finite()) {
        return Err(Error::param("lambda", "must be nonnegative"));
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::param("lr", "must be positive"));
    }
    let pts = evidence.points();
    let finder = NearestFinder::new(pts);
    let objective = |poly: &Polyline| -> Result<(f64, Vec<Point2>)> {
        let (d, g) = evidence_term(poly, &finder, pts, opts.step)?;
        Ok((d + opts.lambda * curvature_penalty(poly.vertices()), g))
    };

    let mut current = p.clone();
    let (mut value, mut grad) = objective(&current)?;
    let mut trace = vec![value];
    let mut lr = opts.lr;
    if p.len() < 3 && grad.iter().all(|g| *g == Point2::default()) {
        return Ok(RefineResult { polyline: current, trace });
    }
    for iteration in 1..=opts.steps {
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let z: Vec<Point2> = current
                .vertices()
                .iter()
                .zip(&grad)
                .map(|(&v, &g)| v - g * lr)
                .collect();
            if let Ok(candidate) = Polyline::new(smoothing_prox(&z, lr, opts.lambda)) {
                let (v, g) = objective(&candidate)?;
                if !v.is_finite() || v > DIVERGENCE_LIMIT {
                    return Err(Error::Diverged { iteration, loss: v });
                }
                if v <= value {
                    accepted = Some((candidate, v, g));
                    break;
                }
            }
            lr *= 0.5;
        }
        let Some((next, v, g)) = accepted else { break };
        let moved = next
            .vertices()
            .iter()
            .zip(current.vertices())
            .any(|(a, b)| a != b);
        current = next;
        value = v;
        grad = g;
        trace.push(value);
        if !moved {
            break;
        }
        lr = (lr * 2.0).min(opts.lr);
    }
    Ok(RefineResult {
        polyline: current,
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneProvenance {
    pub bin: RegionBin,
    pub steps: usize,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub graph: LaneGraph,
    /// One entry per lane, in lane order.
    pub provenance: Vec<LaneProvenance>,
}

#[derive(Serialize, Deserialize)]
struct ProvenanceRepr {
    bin: [usize; 2],
    steps: usize,
    stop: StopReason,
}

#[derive(Serialize, Deserialize)]
struct ExtractionRepr {
    lanes: Vec<Polyline>,
    provenance: Vec<ProvenanceRepr>,
}

impl ExtractionResult {
    pub fn to_json(&self) -> String {
        let repr = ExtractionRepr {
            lanes: self.graph.lanes().to_vec(),
            provenance: self
                .provenance
                .iter()
                .map(|p| ProvenanceRepr {
                    bin: [p.bin.row, p.bin.col],
                    steps: p.steps,
                    stop: p.stop,
                })
                .collect(),
        };
        serde_json::to_string(&repr).expect("extraction results always serialize")
    }

    pub fn from_json(s: &str, k: usize) -> serde_json::Result<Self> {
        let repr: ExtractionRepr = serde_json::from_str(s)?;
        let provenance = repr
            .provenance
            .into_iter()
            .map(|p| LaneProvenance {
                bin: RegionBin {
                    row: p.bin[0],
                    col: p.bin[1],
                    k,
                },
                steps: p.steps,
                stop: p.stop,
            })
            .collect();
        Ok(ExtractionResult {
            graph: LaneGraph::new(repr.lanes),
            provenance,
        })
    }
}

/// Evidence within `radius` of the densified polyline.
pub fn evidence_near(p: &Polyline, evidence: &[Point2], radius: f64) -> Vec<Point2> {
    let Ok(dense) = DensePolyline::build(p, DEFAULT_DENSIFY_STEP) else {
        return Vec::new();
    };
    let finder = NearestFinder::for_dense(&dense);
    evidence
        .iter()
        .copied()
        .filter(|&e| finder.nearest(e).0 <= radius)
        .collect()
}

/// Traces and refines a lane from `bin`.
pub fn draw_lane(
    r: &BevRaster,
    bin: RegionBin,
    evidence: &[Point2],
    params: &ExtractionParams,
) -> Result<(Polyline, LaneProvenance)> {
    let trace = trace_polyline(r, bin, params)?;
    let near = evidence_near(&trace.polyline, evidence, params.corridor_px);
    let polyline = match PointSet::new(near) {
        Ok(near) => refine_polyline(&trace.polyline, &near, params.refine_options())?.polyline,
        Err(_) => trace.polyline,
    };
    Ok((
        polyline,
        LaneProvenance {
            bin,
            steps: trace.steps,
            stop: trace.stop,
        },
    ))
}

/// Denoised evidence as pixel centers.
pub fn evidence_cloud(r: &BevRaster, tau: f64) -> Vec<Point2> {
    connected_evidence(r, tau)
        .into_iter()
        .map(|(row, col)| pixel_center(row, col))
        .collect()
}

/// The full pipeline: propose, then trace and refine each proposal.
pub fn extract_lane_graph(r: &BevRaster, params: &ExtractionParams) -> Result<ExtractionResult> {
    params.validate()?;
    let bins = propose_initial_regions(r, params)?;
    let evidence = evidence_cloud(r, params.tau);
    let mut lanes = Vec::with_capacity(bins.len());
    for bin in bins {
        lanes.push(draw_lane(r, bin, &evidence, params)?);
    }
    lanes.sort_by(|a, b| crate::geometry::lane_order(&a.0, &b.0));
    let (lanes, provenance): (Vec<_>, Vec<_>) = lanes.into_iter().unzip();
    Ok(ExtractionResult {
        graph: LaneGraph::new(lanes),
        provenance,
    })
}

/// Supervision targets for lane counting: the bins holding each lane's
/// first vertex, left to right, and halting labels that are 1 for each lane
/// and 0 for the final stop step.
pub fn region_targets(gt: &LaneGraph, k: usize, g: RasterGeometry) -> (Vec<RegionBin>, Vec<bool>) {
    let bins: Vec<RegionBin> = gt
        .lanes()
        .iter()
        .filter_map(|l| RegionBin::containing(l.first(), k, g))
        .collect();
    let mut labels = vec![true; bins.len()];
    labels.push(false);
    (bins, labels)
}
