//! Fixtures shared by the benchmarks.

use lanegraph_core::baseline::{dense_detection_map, threshold_mask, BinaryMask, DetectorSim};
use lanegraph_core::{generate_scene, Point2, Polyline, Scene, SceneConfig};

/// A default-config scene.
pub fn scene(seed: u64) -> Scene {
    generate_scene(&SceneConfig {
        seed,
        ..SceneConfig::default()
    })
    .expect("default scene config is valid")
}

/// A gently curving vertical polyline of `n` vertices spanning the raster.
pub fn curve(n: usize, x: f64, amplitude: f64) -> Polyline {
    let vertices = (0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            Point2::new(x + amplitude * (std::f64::consts::PI * t).sin(), 950.0 - 940.0 * t)
        })
        .collect();
    Polyline::new(vertices).expect("distinct vertices")
}

/// The thresholded detection map of a default scene.
pub fn detection_mask(seed: u64) -> BinaryMask {
    let s = scene(seed);
    let sim = DetectorSim {
        seed,
        ..DetectorSim::default()
    };
    let map = dense_detection_map(&s.ground_truth, s.raster.geometry(), &sim).expect("valid detector");
    threshold_mask(&map, 0.5).expect("threshold in range")
}
