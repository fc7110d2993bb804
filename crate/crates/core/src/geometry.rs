//! Polylines, point sets and the distance primitives shared by the losses,
//! the tracer and the metrics.
//!
//! Coordinates are pixels with the origin at the top-left corner of the
//! raster; `x` grows to the right (columns) and `y` grows downward (rows).

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{GridIndex, SegmentIndex};

/// Densification spacing used when none is given: one sample per pixel.
pub const DEFAULT_DENSIFY_STEP: f64 = 1.0;

/// Sets at or below this size are scanned exhaustively instead of indexed.
const BRUTE_FORCE_LIMIT: usize = 64;

/// A point (or 2-vector) in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Squared Euclidean distance. Every distance in the crate is derived
    /// from this expression so exhaustive and indexed searches agree bit for bit.
    pub fn distance_squared(self, other: Point2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Point2) -> f64 {
        self.distance_squared(other).sqrt()
    }

    /// `weight * self + (1 - weight) * other`.
    pub fn lerp_weighted(self, other: Point2, weight: f64) -> Point2 {
        let rest = 1.0 - weight;
        Point2::new(
            weight * self.x + rest * other.x,
            weight * self.y + rest * other.y,
        )
    }

    /// Unit vector in the same direction, or `None` for the zero vector.
    pub fn normalized(self) -> Option<Point2> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| Point2::new(self.x / n, self.y / n))
    }
}

impl From<[f64; 2]> for Point2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Point2 { x, y }
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// An ordered vertex sequence with at least two vertices and no zero-length
/// segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct Polyline {
    vertices: Vec<Point2>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::TooFewVertices(vertices.len()));
        }
        if let Some(i) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = vertices.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::RepeatedVertex(i));
        }
        Ok(Polyline { vertices })
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn into_vertices(self) -> Vec<Point2> {
        self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn first(&self) -> Point2 {
        self.vertices[0]
    }

    pub fn last(&self) -> Point2 {
        self.vertices[self.vertices.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.vertices.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    pub fn translated(&self, offset: Point2) -> Polyline {
        Polyline {
            vertices: self.vertices.iter().map(|&p| p + offset).collect(),
        }
    }

    /// Distance from `p` to the nearest point on any segment.
    pub fn distance_to_point(&self, p: Point2) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<Point2>> for Polyline {
    type Error = Error;
    fn try_from(vertices: Vec<Point2>) -> Result<Self> {
        Polyline::new(vertices)
    }
}

impl From<Polyline> for Vec<Point2> {
    fn from(p: Polyline) -> Self {
        p.vertices
    }
}

pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// A nonempty set of finite points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point2>", into = "Vec<Point2>")]
pub struct PointSet {
    points: Vec<Point2>,
}

impl PointSet {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(PointSet { points })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }
}

impl TryFrom<Vec<Point2>> for PointSet {
    type Error = Error;
    fn try_from(points: Vec<Point2>) -> Result<Self> {
        PointSet::new(points)
    }
}

impl From<PointSet> for Vec<Point2> {
    fn from(s: PointSet) -> Self {
        s.points
    }
}

/// Where a densified point came from: `weight * v[segment] + (1 - weight) * v[segment + 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseParent {
    pub segment: usize,
    pub weight: f64,
}

/// A densified polyline that remembers the convex weights of every sample,
/// which is what the analytic gradients flow back through.
#[derive(Debug, Clone)]
pub struct DensePolyline {
    pub points: Vec<Point2>,
    pub parents: Vec<DenseParent>,
    /// Number of interior samples on each segment.
    pub interior_counts: Vec<usize>,
}

impl DensePolyline {
    pub fn build(p: &Polyline, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::param("step", format!("must be positive, got {step}")));
        }
        let v = p.vertices();
        let mut points = Vec::new();
        let mut parents = Vec::new();
        let mut interior_counts = Vec::with_capacity(v.len() - 1);
        for j in 0..v.len() - 1 {
            let (a, b) = (v[j], v[j + 1]);
            points.push(a);
            parents.push(DenseParent {
                segment: j,
                weight: 1.0,
            });
            let pieces = (a.distance(b) / step).ceil().max(1.0) as usize;
            let interior = pieces - 1;
            for k in 1..=interior {
                let t = k as f64 / pieces as f64;
                let weight = 1.0 - t;
                // a + t (b - a) reproduces constant coordinates exactly.
                points.push(Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
                parents.push(DenseParent { segment: j, weight });
            }
            interior_counts.push(interior);
        }
        points.push(p.last());
        parents.push(DenseParent {
            segment: v.len() - 2,
            weight: 0.0,
        });
        Ok(DensePolyline {
            points,
            parents,
            interior_counts,
        })
    }

    pub fn point_set(&self) -> PointSet {
        PointSet {
            points: self.points.clone(),
        }
    }
}

/// All vertices of `p` plus evenly spaced convex combinations along each
/// segment, at most `step` apart, in traversal order.
pub fn densify(p: &Polyline, step: f64) -> Result<PointSet> {
    Ok(PointSet {
        points: DensePolyline::build(p, step)?.points,
    })
}

/// Nearest neighbour by exhaustive scan. Ties go to the lowest index.
pub fn nearest_brute_force(p: Point2, points: &[Point2]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, &q) in points.iter().enumerate() {
        let d2 = p.distance_squared(q);
        if best.is_none_or(|(b, _)| d2 < b) {
            best = Some((d2, i));
        }
    }
    best.map(|(d2, i)| (d2.sqrt(), i))
}

/// Distance from `p` to the closest point of `s` and that point's index.
pub fn min_distance(p: Point2, s: &PointSet) -> (f64, usize) {
    nearest_brute_force(p, &s.points).expect("point sets are nonempty")
}

/// Nearest-neighbour queries against a fixed point set; switches to a grid
/// index for large sets. Results are identical to [`nearest_brute_force`].
pub enum NearestFinder<'a> {
    Scan(&'a [Point2]),
    Grid(GridIndex<'a>),
    Segments(SegmentIndex<'a>),
}

/// Past this many segments the grid beats a per-segment scan.
const SEGMENT_SCAN_LIMIT: usize = 32;

impl<'a> NearestFinder<'a> {
    pub fn new(points: &'a [Point2]) -> Self {
        if points.len() <= BRUTE_FORCE_LIMIT {
            NearestFinder::Scan(points)
        } else {
            NearestFinder::Grid(GridIndex::new(points))
        }
    }

    /// Finder over a densified polyline's points that exploits their even
    /// spacing when there are few segments.
    pub fn for_dense(d: &'a DensePolyline) -> Self {
        let segments = d.interior_counts.len();
        if d.points.len() > BRUTE_FORCE_LIMIT && segments <= SEGMENT_SCAN_LIMIT && 4 * segments < d.points.len() {
            NearestFinder::Segments(SegmentIndex::new(&d.points, &[(0, &d.interior_counts)]))
        } else {
            NearestFinder::new(&d.points)
        }
    }

    pub fn nearest(&self, p: Point2) -> (f64, usize) {
        match self {
            NearestFinder::Scan(points) => {
                nearest_brute_force(p, points).expect("finder built over a nonempty set")
            }
            NearestFinder::Grid(index) => index.nearest(p).expect("finder built over a nonempty set"),
            NearestFinder::Segments(index) => index.nearest(p).expect("finder built over a nonempty set"),
        }
    }
}

/// One-sided polyline distance: the sum, over every point of `a`, of its
/// distance to the nearest point of `b`.
pub fn directed_polyline_distance(a: &PointSet, b: &PointSet) -> f64 {
    let finder = NearestFinder::new(&b.points);
    a.points.iter().map(|&p| finder.nearest(p).0).sum()
}

/// Lane boundaries ordered left to right by their first vertex.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "LaneGraphRepr", into = "LaneGraphRepr")]
pub struct LaneGraph {
    lanes: Vec<Polyline>,
}

#[derive(Serialize, Deserialize)]
struct LaneGraphRepr {
    lanes: Vec<Polyline>,
}

impl From<LaneGraphRepr> for LaneGraph {
    fn from(r: LaneGraphRepr) -> Self {
        LaneGraph::new(r.lanes)
    }
}

impl From<LaneGraph> for LaneGraphRepr {
    fn from(g: LaneGraph) -> Self {
        LaneGraphRepr { lanes: g.lanes }
    }
}

/// Left-to-right order: ascending x of the first vertex, ties by y.
pub fn lane_order(a: &Polyline, b: &Polyline) -> std::cmp::Ordering {
    let (pa, pb) = (a.first(), b.first());
    pa.x.total_cmp(&pb.x).then(pa.y.total_cmp(&pb.y))
}

impl LaneGraph {
    pub fn new(mut lanes: Vec<Polyline>) -> Self {
        lanes.sort_by(lane_order);
        LaneGraph { lanes }
    }

    pub fn empty() -> Self {
        LaneGraph::default()
    }

    pub fn lanes(&self) -> &[Polyline] {
        &self.lanes
    }

    pub fn len(&self) -> usize {
        self.lanes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lanes.is_empty()
    }

    /// Inserts a lane at its ordered position and returns that position.
    pub fn insert(&mut self, lane: Polyline) -> usize {
        let at = self
            .lanes
            .partition_point(|l| lane_order(l, &lane) != std::cmp::Ordering::Greater);
        self.lanes.insert(at, lane);
        at
    }

    pub fn remove(&mut self, index: usize) -> Option<Polyline> {
        (index < self.lanes.len()).then(|| self.lanes.remove(index))
    }

    /// Densified points of every lane, concatenated in lane order.
    pub fn densified_points(&self, step: f64) -> Result<Vec<Point2>> {
        let mut out = Vec::new();
        for lane in &self.lanes {
            out.extend(densify(lane, step)?.into_points());
        }
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("lane graphs always serialize")
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}
