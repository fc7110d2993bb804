//! Lane-graph extraction from bird's-eye-view LIDAR rasters.
//!
//! The crate counts lane boundaries by proposing ordered starting regions on
//! a K×K bin grid, draws each boundary by iterative crop-and-step tracing,
//! and refines the result by descending a polyline distance against the
//! raster evidence. Alongside the pipeline live the polyline loss with
//! analytic gradients, a synthetic scene generator with exact ground truth,
//! the dense-detection baseline (threshold, skeletonize, connected
//! components) and the evaluation metrics.

// Parameter checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod extraction;
pub mod geometry;
pub mod losses;
pub mod metrics;
pub mod raster_io;
pub mod scenegen;
pub mod spatial;

pub use error::{Error, Result};
pub use extraction::{extract_lane_graph, ExtractionParams, ExtractionResult, RegionBin, StopReason};
pub use geometry::{
    densify, directed_polyline_distance, min_distance, LaneGraph, Point2, PointSet, Polyline,
};
pub use losses::{fit_polyline, polyline_loss};
pub use metrics::{aggregate, evaluate_scene, precision_recall, topology_deviation, EvalReport};
pub use scenegen::{generate_scene, BevRaster, RasterGeometry, Scene, SceneConfig};
