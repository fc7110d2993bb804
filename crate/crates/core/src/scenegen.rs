//! Synthetic highway scenes: BEV intensity rasters with exact ground-truth
//! lane graphs.
//!
//! The vehicle sits at the bottom center of the raster looking up. Lane
//! boundaries are near-vertical curves sharing a cubic lateral drift; inner
//! boundaries are dashed, outer ones solid. Paint returns are sampled along
//! the ground-truth polylines, thinned by dropout and optional occlusion
//! bands, and mixed with isolated spurious returns.
//!
//! Pixel `(row, col)` covers `x ∈ [col, col + 1)`, `y ∈ [row, row + 1)`; its
//! center is at `+0.5`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneGraph, Point2, PointSet, Polyline};

pub const DEFAULT_SIZE: usize = 960;
pub const DEFAULT_RESOLUTION: f64 = 0.05;

/// Raster dimensions and metric resolution (meters per pixel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasterGeometry {
    pub height: usize,
    pub width: usize,
    pub resolution: f64,
}

impl Default for RasterGeometry {
    fn default() -> Self {
        RasterGeometry {
            height: DEFAULT_SIZE,
            width: DEFAULT_SIZE,
            resolution: DEFAULT_RESOLUTION,
        }
    }
}

impl RasterGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::param("geometry", "height and width must be positive"));
        }
        if !(self.resolution > 0.0 && self.resolution.is_finite()) {
            return Err(Error::param("resolution", "must be positive"));
        }
        Ok(())
    }

    pub fn contains(&self, p: Point2) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < self.width as f64 && p.y < self.height as f64
    }

    /// Pixels per meter is `1 / resolution`.
    pub fn meters_to_pixels(&self, meters: f64) -> f64 {
        meters / self.resolution
    }
}

/// An H×W grid of intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BevRaster {
    geometry: RasterGeometry,
    intensity: Vec<f32>,
}

impl BevRaster {
    pub fn zeros(geometry: RasterGeometry) -> Result<Self> {
        geometry.validate()?;
        Ok(BevRaster {
            geometry,
            intensity: vec![0.0; geometry.height * geometry.width],
        })
    }

    pub fn from_data(geometry: RasterGeometry, intensity: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if intensity.len() != geometry.height * geometry.width {
            return Err(Error::param(
                "intensity",
                format!(
                    "expected {} values, got {}",
                    geometry.height * geometry.width,
                    intensity.len()
                ),
            ));
        }
        if intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param("intensity", "values must lie in [0, 1]"));
        }
        Ok(BevRaster {
            geometry,
            intensity,
        })
    }

    pub fn geometry(&self) -> RasterGeometry {
        self.geometry
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn resolution(&self) -> f64 {
        self.geometry.resolution
    }

    pub fn data(&self) -> &[f32] {
        &self.intensity
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.intensity[row * self.geometry.width + col]
    }

    /// Intensity at signed pixel coordinates; zero outside the raster.
    pub fn get_padded(&self, row: i64, col: i64) -> f32 {
        if row < 0 || col < 0 || row >= self.height() as i64 || col >= self.width() as i64 {
            0.0
        } else {
            self.get(row as usize, col as usize)
        }
    }

    /// Max-combines `value` into a pixel.
    pub fn splat(&mut self, row: usize, col: usize, value: f32) {
        let v = &mut self.intensity[row * self.geometry.width + col];
        *v = v.max(value.clamp(0.0, 1.0));
    }
}

/// A return in metric raster coordinates (meters from the top-left corner).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarReturn {
    pub x: f64,
    pub y: f64,
    pub intensity: f32,
}

/// Accumulates returns into their containing pixels by max. Returns the
/// raster and the number of returns that fell outside it.
pub fn rasterize_points(points: &[LidarReturn], geometry: RasterGeometry) -> Result<(BevRaster, usize)> {
    let mut raster = BevRaster::zeros(geometry)?;
    let mut dropped = 0;
    for p in points {
        let col = (p.x / geometry.resolution).floor();
        let row = (p.y / geometry.resolution).floor();
        if !(col >= 0.0 && row >= 0.0 && col < geometry.width as f64 && row < geometry.height as f64) {
            dropped += 1;
            continue;
        }
        raster.splat(row as usize, col as usize, p.intensity);
    }
    Ok((raster, dropped))
}

/// An `h_c × w_c` window cut from a raster, zero-padded outside it.
#[derive(Debug, Clone, PartialEq)]
pub struct CropWindow {
    /// Raster row of the window's first row (may be negative).
    pub top: i64,
    /// Raster column of the window's first column (may be negative).
    pub left: i64,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    /// False when the requested center lies outside the raster.
    pub valid: bool,
}

impl CropWindow {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// Center of window pixel `(row, col)` in raster coordinates.
    pub fn pixel_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            (self.left + col as i64) as f64 + 0.5,
            (self.top + row as i64) as f64 + 0.5,
        )
    }
}

pub fn crop_window(r: &BevRaster, center: Point2, h_c: usize, w_c: usize) -> Result<CropWindow> {
    if h_c == 0 || w_c == 0 {
        return Err(Error::param("crop", "window dimensions must be positive"));
    }
    let top = (center.y - h_c as f64 / 2.0).floor() as i64;
    let left = (center.x - w_c as f64 / 2.0).floor() as i64;
    let mut data = Vec::with_capacity(h_c * w_c);
    for row in 0..h_c as i64 {
        for col in 0..w_c as i64 {
            data.push(r.get_padded(top + row, left + col));
        }
    }
    Ok(CropWindow {
        top,
        left,
        height: h_c,
        width: w_c,
        data,
        valid: center.is_finite() && r.geometry().contains(center),
    })
}

/// Centers of all pixels with intensity at least `tau`, in row-major order;
/// `None` when no pixel passes.
pub fn evidence_points(r: &BevRaster, tau: f64) -> Result<Option<PointSet>> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::param("tau", format!("must lie in (0, 1), got {tau}")));
    }
    let points: Vec<Point2> = evidence_pixels(r, tau)
        .map(|(row, col)| Point2::new(col as f64 + 0.5, row as f64 + 0.5))
        .collect();
    Ok(PointSet::new(points).ok())
}

pub(crate) fn evidence_pixels(r: &BevRaster, tau: f64) -> impl Iterator<Item = (usize, usize)> + '_ {
    let w = r.width();
    r.data()
        .iter()
        .enumerate()
        .filter(move |(_, &v)| v as f64 >= tau)
        .map(move |(i, _)| (i / w, i % w))
}

/// A horizontal band (rows, in pixels) where all paint returns are missing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionBand {
    pub top: f64,
    pub bottom: f64,
}

impl OcclusionBand {
    pub fn contains_row(&self, y: f64) -> bool {
        y >= self.top && y < self.bottom
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub geometry: RasterGeometry,
    /// Inclusive range for the number of lane boundaries.
    pub lane_count_range: (usize, usize),
    /// Meters between neighbouring boundaries.
    pub lane_spacing: f64,
    /// Uniform jitter applied to each spacing, meters.
    pub spacing_jitter: f64,
    /// Largest lateral drift of the road over the raster height, meters.
    pub curvature: f64,
    /// (painted length, gap length) of dashed boundaries, meters.
    pub dash_pattern: (f64, f64),
    /// Total lateral spread of paint samples around the boundary, pixels.
    pub marking_width_px: f64,
    /// Fraction of paint samples removed independently.
    pub dropout_rate: f64,
    /// Spurious returns per square meter.
    pub noise_rate: f64,
    /// Height in meters of a full-width occlusion band placed in the middle
    /// half of the raster; none when `None`.
    pub occlusion_band: Option<f64>,
    pub solid_outer: bool,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            geometry: RasterGeometry::default(),
            lane_count_range: (2, 6),
            lane_spacing: 3.7,
            spacing_jitter: 0.3,
            curvature: 1.5,
            dash_pattern: (3.0, 3.0),
            marking_width_px: 0.5,
            dropout_rate: 0.1,
            noise_rate: 0.01,
            occlusion_band: None,
            solid_outer: true,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let (lo, hi) = self.lane_count_range;
        if lo > hi {
            return Err(Error::param("lane_count_range", "empty range"));
        }
        if !(self.lane_spacing > 0.0) || self.spacing_jitter < 0.0 || self.spacing_jitter >= self.lane_spacing {
            return Err(Error::param("lane_spacing", "spacing must exceed its jitter"));
        }
        if !(0.0..=1.0).contains(&self.dropout_rate) || !(0.0..=1.0).contains(&self.noise_rate) {
            return Err(Error::param("rates", "dropout and noise rates must lie in [0, 1]"));
        }
        if !(self.dash_pattern.0 > 0.0) || self.dash_pattern.1 < 0.0 {
            return Err(Error::param("dash_pattern", "mark length must be positive"));
        }
        if self.curvature < 0.0 || self.marking_width_px < 0.0 {
            return Err(Error::param("curvature", "must be nonnegative"));
        }
        if self.occlusion_band.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::param("occlusion_band", "height must be positive"));
        }
        Ok(())
    }

    /// The smallest spacing the generator can produce, in pixels.
    pub fn min_lane_spacing_px(&self) -> f64 {
        self.geometry
            .meters_to_pixels(self.lane_spacing - self.spacing_jitter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub raster: BevRaster,
    pub ground_truth: LaneGraph,
    pub config: SceneConfig,
    pub occlusions: Vec<OcclusionBand>,
    /// Paint sample positions (pixels) that survived dropout.
    pub markings: Vec<Point2>,
    pub noise_points: usize,
}

// Independent random streams so that, for example, changing the dropout
// rate does not move the lanes.
const STREAM_LAYOUT: u64 = 1;
const STREAM_PAINT: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_NOISE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Ground-truth vertices are placed every this many pixels of height.
const GT_VERTEX_SPACING_PX: f64 = 40.0;
/// Paint samples per pixel of boundary length.
const SAMPLES_PER_PX: f64 = 4.0;

pub fn generate_scene(config: &SceneConfig) -> Result<Scene> {
    config.validate()?;
    let g = config.geometry;
    let (h, w) = (g.height as f64, g.width as f64);
    let mut layout = stream(config.seed, STREAM_LAYOUT);

    let count = layout.random_range(config.lane_count_range.0..=config.lane_count_range.1);
    let spacings: Vec<f64> = (1..count)
        .map(|_| {
            let jitter = if config.spacing_jitter > 0.0 {
                layout.random_range(-config.spacing_jitter..=config.spacing_jitter)
            } else {
                0.0
            };
            g.meters_to_pixels(config.lane_spacing + jitter)
        })
        .collect();
    let span: f64 = spacings.iter().sum();
    // Ego vehicle somewhere inside the road, at the bottom center.
    let ego_fraction = layout.random_range(0.2..=0.8);
    let left = w / 2.0 - ego_fraction * span;
    let mut offsets = vec![left];
    for s in &spacings {
        offsets.push(offsets.last().unwrap() + s);
    }

    // Shared lateral drift: a cubic in the normalized distance ahead, scaled
    // so its largest magnitude is at most the configured curvature.
    let coeffs: [f64; 3] = [
        layout.random_range(-1.0..=1.0),
        layout.random_range(-1.0..=1.0),
        layout.random_range(-1.0..=1.0),
    ];
    let cubic = |t: f64| coeffs[0] * t + coeffs[1] * t * t + coeffs[2] * t * t * t;
    let peak = (0..=100)
        .map(|i| cubic(i as f64 / 100.0).abs())
        .fold(0.0, f64::max);
    let amplitude = g.meters_to_pixels(config.curvature) * layout.random_range(0.0..=1.0);
    let scale = if peak > 0.0 { amplitude / peak } else { 0.0 };
    let drift = |y: f64| scale * cubic((h - y) / h);

    let rows: Vec<f64> = {
        let (top, bottom) = (0.5, h - 0.5);
        let n = ((bottom - top) / GT_VERTEX_SPACING_PX).ceil().max(1.0) as usize;
        (0..=n).map(|k| bottom - (bottom - top) * k as f64 / n as f64).collect()
    };
    let mut lanes = Vec::with_capacity(count);
    for &x0 in &offsets {
        let vertices: Vec<Point2> = rows.iter().map(|&y| Point2::new(x0 + drift(y), y)).collect();
        if let Some(p) = vertices.iter().find(|p| !(p.x >= 0.0 && p.x < w)) {
            return Err(Error::SceneOutOfBounds(format!(
                "boundary leaves the raster at x = {:.1}",
                p.x
            )));
        }
        lanes.push(Polyline::new(vertices)?);
    }

    let occlusions: Vec<OcclusionBand> = match config.occlusion_band {
        Some(height_m) => {
            let band = g.meters_to_pixels(height_m);
            let top = layout.random_range(0.25 * h..=(0.75 * h - band).max(0.25 * h));
            vec![OcclusionBand {
                top,
                bottom: top + band,
            }]
        }
        None => Vec::new(),
    };

    let mut paint = stream(config.seed, STREAM_PAINT);
    let mut dropout = stream(config.seed, STREAM_DROPOUT);
    let (mark, gap) = (
        g.meters_to_pixels(config.dash_pattern.0),
        g.meters_to_pixels(config.dash_pattern.1),
    );
    let mut markings = Vec::new();
    let mut returns = Vec::new();
    for (i, lane) in lanes.iter().enumerate() {
        let solid = config.solid_outer && (i == 0 || i + 1 == lanes.len());
        let phase = paint.random_range(0.0..mark + gap);
        let mut arc = 0.0;
        for seg in lane.vertices().windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let len = a.distance(b);
            let dir = (b - a) * (1.0 / len);
            let normal = Point2::new(-dir.y, dir.x);
            let n = (len * SAMPLES_PER_PX).ceil() as usize;
            for k in 0..n {
                let t = k as f64 / n as f64;
                let s = arc + t * len;
                let painted = solid || (s + phase) % (mark + gap) < mark;
                let half = config.marking_width_px / 2.0;
                let lateral = if half > 0.0 {
                    paint.random_range(-half..=half)
                } else {
                    0.0
                };
                let intensity = paint.random_range(0.6f32..=1.0);
                let keep = dropout.random::<f64>() >= config.dropout_rate;
                if !painted || !keep {
                    continue;
                }
                let p = a.lerp_weighted(b, 1.0 - t) + normal * lateral;
                if occlusions.iter().any(|o| o.contains_row(p.y)) || !g.contains(p) {
                    continue;
                }
                markings.push(p);
                returns.push(LidarReturn {
                    x: p.x * g.resolution,
                    y: p.y * g.resolution,
                    intensity,
                });
            }
            arc += len;
        }
    }

    let mut noise = stream(config.seed, STREAM_NOISE);
    let area_m2 = h * w * g.resolution * g.resolution;
    let expected = config.noise_rate * area_m2;
    let noise_points = if expected > 0.0 {
        Poisson::new(expected)
            .map(|d| d.sample(&mut noise) as usize)
            .unwrap_or(0)
    } else {
        0
    };
    for _ in 0..noise_points {
        returns.push(LidarReturn {
            x: noise.random_range(0.0..w) * g.resolution,
            y: noise.random_range(0.0..h) * g.resolution,
            intensity: noise.random_range(0.3f32..=1.0),
        });
    }

    let (raster, _) = rasterize_points(&returns, g)?;
    Ok(Scene {
        raster,
        ground_truth: LaneGraph::new(lanes),
        config: config.clone(),
        occlusions,
        markings,
        noise_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::directed_polyline_distance;

    fn clean(seed: u64) -> SceneConfig {
        SceneConfig {
            lane_count_range: (3, 3),
            dropout_rate: 0.0,
            noise_rate: 0.0,
            seed,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn clean_scene_markings_hug_ground_truth() {
        let scene = generate_scene(&clean(7)).unwrap();
        assert_eq!(scene.ground_truth.len(), 3);
        for &m in &scene.markings {
            let d = scene
                .ground_truth
                .lanes()
                .iter()
                .map(|l| l.distance_to_point(m))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 0.5, "marking {m:?} is {d} px from ground truth");
        }
        for lane in scene.ground_truth.lanes() {
            assert!(lane.vertices().iter().all(|&v| scene.raster.geometry().contains(v)));
        }
    }

    #[test]
    fn seeds_change_raster_not_count() {
        let a = generate_scene(&clean(7)).unwrap();
        let b = generate_scene(&clean(8)).unwrap();
        assert_ne!(a.raster, b.raster);
        assert_eq!(a.ground_truth.len(), b.ground_truth.len());
        assert_eq!(generate_scene(&clean(7)).unwrap(), a);
    }

    #[test]
    fn dropout_thins_binomially() {
        let base = generate_scene(&clean(11)).unwrap();
        let thinned = generate_scene(&SceneConfig {
            dropout_rate: 0.5,
            ..clean(11)
        })
        .unwrap();
        assert_eq!(base.ground_truth, thinned.ground_truth);
        let ratio = thinned.markings.len() as f64 / base.markings.len() as f64;
        assert!((ratio - 0.5).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn lanes_stay_apart() {
        for seed in 0..20 {
            let cfg = SceneConfig {
                seed,
                ..SceneConfig::default()
            };
            let scene = generate_scene(&cfg).unwrap();
            let lanes = scene.ground_truth.lanes();
            let min_px = cfg.geometry.meters_to_pixels(1.0);
            for pair in lanes.windows(2) {
                for &v in pair[0].vertices() {
                    assert!(pair[1].distance_to_point(v) >= min_px);
                }
            }
        }
    }

    #[test]
    fn occlusion_band_removes_paint() {
        let cfg = SceneConfig {
            occlusion_band: Some(4.0),
            seed: 3,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&cfg).unwrap();
        let band = scene.occlusions[0];
        assert!((band.bottom - band.top - 80.0).abs() < 1e-9);
        assert!(band.top >= 240.0 && band.bottom <= 720.0);
        assert!(scene.markings.iter().all(|m| !band.contains_row(m.y)));
    }

    #[test]
    fn too_many_lanes_rejected() {
        let cfg = SceneConfig {
            lane_count_range: (20, 20),
            ..SceneConfig::default()
        };
        assert!(matches!(generate_scene(&cfg), Err(Error::SceneOutOfBounds(_))));
    }

    #[test]
    fn rasterize_examples() {
        let g = RasterGeometry::default();
        let (r, dropped) = rasterize_points(&[], g).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        assert_eq!(dropped, 0);

        let (r, _) = rasterize_points(
            &[LidarReturn {
                x: 1.0,
                y: 1.0,
                intensity: 1.0,
            }],
            g,
        )
        .unwrap();
        assert_eq!(r.get(20, 20), 1.0);
        assert_eq!(r.data().iter().filter(|&&v| v > 0.0).count(), 1);

        let same_pixel = [0.3f32, 0.9].map(|intensity| LidarReturn {
            x: 0.51,
            y: 0.52,
            intensity,
        });
        let (r, _) = rasterize_points(&same_pixel, g).unwrap();
        assert_eq!(r.get(10, 10), 0.9);

        let outside = [LidarReturn {
            x: -1.0,
            y: 0.0,
            intensity: 1.0,
        }];
        assert_eq!(rasterize_points(&outside, g).unwrap().1, 1);
    }

    fn ramp() -> BevRaster {
        let g = RasterGeometry {
            height: 100,
            width: 100,
            resolution: 0.05,
        };
        let data = (0..100 * 100).map(|i| (i % 97) as f32 / 97.0).collect();
        BevRaster::from_data(g, data).unwrap()
    }

    #[test]
    fn crop_mid_raster_is_exact_copy() {
        let r = ramp();
        let c = crop_window(&r, Point2::new(50.0, 50.0), 60, 60).unwrap();
        assert!(c.valid);
        assert_eq!((c.top, c.left), (20, 20));
        for row in 0..60 {
            for col in 0..60 {
                assert_eq!(c.get(row, col), r.get(20 + row, 20 + col));
            }
        }
    }

    #[test]
    fn crop_corner_is_zero_padded() {
        let r = ramp();
        let c = crop_window(&r, Point2::new(0.0, 0.0), 60, 60).unwrap();
        assert!(c.valid);
        for row in 0..60 {
            for col in 0..60 {
                if row < 30 || col < 30 {
                    assert_eq!(c.get(row, col), 0.0);
                } else {
                    assert_eq!(c.get(row, col), r.get(row - 30, col - 30));
                }
            }
        }
        assert!(!crop_window(&r, Point2::new(-5.0, -5.0), 60, 60).unwrap().valid);
        assert!(crop_window(&r, Point2::new(5.0, 5.0), 0, 60).is_err());
    }

    #[test]
    fn evidence_examples() {
        let g = RasterGeometry::default();
        let mut r = BevRaster::zeros(g).unwrap();
        assert_eq!(evidence_points(&r, 0.5).unwrap(), None);
        r.splat(10, 10, 1.0);
        let e = evidence_points(&r, 0.5).unwrap().unwrap();
        assert_eq!(e.points(), &[Point2::new(10.5, 10.5)]);
        assert!(evidence_points(&r, 1.0).is_err());
    }

    #[test]
    fn clean_evidence_lies_on_ground_truth() {
        let scene = generate_scene(&clean(7)).unwrap();
        let evidence = evidence_points(&scene.raster, 0.5).unwrap().unwrap();
        for &p in evidence.points() {
            let d = scene
                .ground_truth
                .lanes()
                .iter()
                .map(|l| l.distance_to_point(p))
                .fold(f64::INFINITY, f64::min);
            assert!(d <= 1.0, "evidence {p:?} is {d} px away");
        }
        let gt = PointSet::new(scene.ground_truth.densified_points(1.0).unwrap()).unwrap();
        let mean = directed_polyline_distance(&evidence, &gt) / evidence.len() as f64;
        assert!(mean <= 1.0);
    }
}
