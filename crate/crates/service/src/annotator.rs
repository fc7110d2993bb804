//! Scripted annotator used to measure clicks-to-fix.
//!
//! The annotator compares the session graph with ground truth, deletes
//! predicted lanes that match no true lane, and clicks the entry bin of
//! every true lane that was missed. A click on a bin without evidence moves
//! one bin up the missed lane and tries again.

use lanegraph_core::geometry::directed_polyline_distance;
use lanegraph_core::{densify, topology_deviation, LaneGraph, Polyline, RegionBin};
use serde::Serialize;

use crate::session::{Session, SessionError, Workspace};

/// Predicted and true lanes closer than this (mean symmetric distance,
/// pixels) are the same lane.
pub const MATCH_DISTANCE_PX: f64 = 20.0;
/// Region clicks tried per missed lane.
pub const MAX_ATTEMPTS: usize = 3;

fn mean_symmetric_distance(a: &Polyline, b: &Polyline) -> f64 {
    let (Ok(da), Ok(db)) = (densify(a, 1.0), densify(b, 1.0)) else {
        return f64::INFINITY;
    };
    let ab = directed_polyline_distance(&da, &db) / da.len() as f64;
    let ba = directed_polyline_distance(&db, &da) / db.len() as f64;
    0.5 * (ab + ba)
}

/// Greedy one-to-one matching by ascending distance. Returns, per
/// predicted lane, the matched true lane.
pub fn match_lanes(pred: &LaneGraph, gt: &LaneGraph) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (i, p) in pred.lanes().iter().enumerate() {
        for (j, g) in gt.lanes().iter().enumerate() {
            let d = mean_symmetric_distance(p, g);
            if d <= MATCH_DISTANCE_PX {
                pairs.push((d, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_match = vec![None; pred.len()];
    let mut gt_taken = vec![false; gt.len()];
    for (_, i, j) in pairs {
        if pred_match[i].is_none() && !gt_taken[j] {
            pred_match[i] = Some(j);
            gt_taken[j] = true;
        }
    }
    pred_match
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Correction {
    pub before_deviation: usize,
    pub after_deviation: usize,
    pub clicks: usize,
    pub failed_clicks: usize,
}

/// Bins along `lane` from its first vertex onwards, without repeats.
fn bins_along(lane: &Polyline, ws: &Workspace) -> Vec<RegionBin> {
    let g = ws.raster.geometry();
    let mut out: Vec<RegionBin> = Vec::new();
    let Ok(points) = densify(lane, 1.0) else {
        return out;
    };
    for p in points.points() {
        if let Some(b) = RegionBin::containing(*p, ws.params.k_grid, g) {
            if !out.contains(&b) {
                out.push(b);
            }
        }
    }
    out
}

/// Fixes `session` towards `gt`: hallucinated lanes first (highest index
/// first so indices stay valid), then missed lanes left to right.
pub fn correct(session: &mut Session, ws: &Workspace, gt: &LaneGraph) -> Result<Correction, SessionError> {
    let before_deviation = topology_deviation(session.graph(), gt);
    let start_clicks = (session.clicks(), session.failed_clicks());
    let matches = match_lanes(session.graph(), gt);
    for i in (0..matches.len()).rev() {
        if matches[i].is_none() {
            session.delete(i)?;
        }
    }
    let mut missed: Vec<bool> = vec![true; gt.len()];
    for j in matches.into_iter().flatten() {
        missed[j] = false;
    }
    for (j, lane) in gt.lanes().iter().enumerate() {
        if !missed[j] {
            continue;
        }
        for bin in bins_along(lane, ws).into_iter().take(MAX_ATTEMPTS) {
            match session.trace(ws, [bin.row, bin.col]) {
                Ok(_) => break,
                Err(SessionError::NoEvidence { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(Correction {
        before_deviation,
        after_deviation: topology_deviation(session.graph(), gt),
        clicks: session.clicks() - start_clicks.0,
        failed_clicks: session.failed_clicks() - start_clicks.1,
    })
}
