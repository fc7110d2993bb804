//! Topology deviation and point-level precision/recall.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LaneGraph, NearestFinder, Point2};

pub const DEFAULT_THRESHOLDS_CM: [f64; 4] = [5.0, 10.0, 15.0, 20.0];

/// `| |pred| − |gt| |` in lanes.
pub fn topology_deviation(pred: &LaneGraph, gt: &LaneGraph) -> usize {
    pred.len().abs_diff(gt.len())
}

/// Converts a threshold in centimeters to pixels.
pub fn threshold_px(cm: f64, resolution: f64) -> f64 {
    // cm / (100 · res) keeps 15 cm at 5 cm/px exactly 3.
    cm / (resolution * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecall {
    pub threshold_cm: f64,
    pub precision: f64,
    pub recall: f64,
    /// Predicted points within the threshold of the ground truth.
    pub pred_within: usize,
    pub pred_total: usize,
    /// Ground-truth points within the threshold of the prediction.
    pub gt_within: usize,
    pub gt_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    pub topology_deviation: usize,
    pub pr: Vec<PrecisionRecall>,
    /// Empty prediction: precision is reported as 1.
    pub precision_undefined: bool,
    /// Empty ground truth: recall is reported as 1.
    pub recall_undefined: bool,
}

fn validate_thresholds(thresholds_cm: &[f64], resolution: f64, step: f64) -> Result<()> {
    if thresholds_cm.is_empty() || thresholds_cm.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::param("thresholds", "need one or more positive thresholds"));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::param("resolution", "must be positive"));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::param("step", "must be positive"));
    }
    Ok(())
}

/// Distance from each point of `from` to the nearest point of `to`.
fn nearest_distances(from: &[Point2], to: &[Point2]) -> Vec<f64> {
    if to.is_empty() {
        return vec![f64::INFINITY; from.len()];
    }
    let finder = NearestFinder::new(to);
    from.iter().map(|&p| finder.nearest(p).0).collect()
}

fn ratio(hits: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        hits as f64 / total as f64
    }
}

/// Precision, recall and topology deviation of one scene. Polylines are
/// densified at `step` pixels; thresholds are in centimeters.
pub fn evaluate_scene(
    pred: &LaneGraph,
    gt: &LaneGraph,
    thresholds_cm: &[f64],
    resolution: f64,
    step: f64,
) -> Result<SceneEval> {
    validate_thresholds(thresholds_cm, resolution, step)?;
    let p = pred.densified_points(step)?;
    let g = gt.densified_points(step)?;
    let p_to_g = nearest_distances(&p, &g);
    let g_to_p = nearest_distances(&g, &p);
    let pr = thresholds_cm
        .iter()
        .map(|&cm| {
            let tau = threshold_px(cm, resolution);
            let pred_within = p_to_g.iter().filter(|&&d| d <= tau).count();
            let gt_within = g_to_p.iter().filter(|&&d| d <= tau).count();
            PrecisionRecall {
                threshold_cm: cm,
                precision: ratio(pred_within, p.len()),
                recall: ratio(gt_within, g.len()),
                pred_within,
                pred_total: p.len(),
                gt_within,
                gt_total: g.len(),
            }
        })
        .collect();
    Ok(SceneEval {
        topology_deviation: topology_deviation(pred, gt),
        pr,
        precision_undefined: p.is_empty(),
        recall_undefined: g.is_empty(),
    })
}

/// Per-threshold precision and recall of one scene.
pub fn precision_recall(
    pred: &LaneGraph,
    gt: &LaneGraph,
    thresholds_cm: &[f64],
    resolution: f64,
    step: f64,
) -> Result<Vec<PrecisionRecall>> {
    Ok(evaluate_scene(pred, gt, thresholds_cm, resolution, step)?.pr)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrRow {
    pub threshold_cm: f64,
    /// Pooled over the densified points of all scenes.
    pub precision: f64,
    pub recall: f64,
    /// Mean of the per-scene values.
    pub precision_macro: f64,
    pub recall_macro: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scene_count: usize,
    /// Entry `d` counts scenes with deviation `d`.
    pub topology_histogram: Vec<usize>,
    /// Entry `d` is the fraction of scenes with deviation at most `d`.
    pub topology_cdf: Vec<f64>,
    pub pr_table: Vec<PrRow>,
    pub precision_undefined_scenes: usize,
    pub recall_undefined_scenes: usize,
}

/// Dataset-level report. Scenes must share the same thresholds.
pub fn aggregate(scenes: &[SceneEval]) -> Result<EvalReport> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::param("scenes", "cannot aggregate an empty scene set"))?;
    let thresholds: Vec<f64> = first.pr.iter().map(|r| r.threshold_cm).collect();
    if scenes
        .iter()
        .any(|s| s.pr.iter().map(|r| r.threshold_cm).ne(thresholds.iter().copied()))
    {
        return Err(Error::param("scenes", "thresholds differ between scenes"));
    }
    let max_dev = scenes.iter().map(|s| s.topology_deviation).max().unwrap_or(0);
    let mut histogram = vec![0usize; max_dev + 1];
    for s in scenes {
        histogram[s.topology_deviation] += 1;
    }
    let n = scenes.len() as f64;
    let mut running = 0;
    let cdf = histogram
        .iter()
        .map(|&c| {
            running += c;
            running as f64 / n
        })
        .collect();
    let pr_table = thresholds
        .iter()
        .enumerate()
        .map(|(i, &cm)| {
            let sum = |f: fn(&PrecisionRecall) -> usize| scenes.iter().map(|s| f(&s.pr[i])).sum::<usize>();
            PrRow {
                threshold_cm: cm,
                precision: ratio(sum(|r| r.pred_within), sum(|r| r.pred_total)),
                recall: ratio(sum(|r| r.gt_within), sum(|r| r.gt_total)),
                precision_macro: scenes.iter().map(|s| s.pr[i].precision).sum::<f64>() / n,
                recall_macro: scenes.iter().map(|s| s.pr[i].recall).sum::<f64>() / n,
            }
        })
        .collect();
    Ok(EvalReport {
        scene_count: scenes.len(),
        topology_histogram: histogram,
        topology_cdf: cdf,
        pr_table,
        precision_undefined_scenes: scenes.iter().filter(|s| s.precision_undefined).count(),
        recall_undefined_scenes: scenes.iter().filter(|s| s.recall_undefined).count(),
    })
}

impl EvalReport {
    /// Fraction of scenes with deviation at most `d`.
    pub fn cdf_at(&self, d: usize) -> f64 {
        self.topology_cdf.get(d).copied().unwrap_or(1.0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }
}

/// Plain-text comparison: one row per method, precision then recall per
/// threshold, then the share of scenes with the right lane count.
pub fn render_table(rows: &[(&str, &EvalReport)]) -> String {
    let Some((_, first)) = rows.first() else {
        return String::new();
    };
    let width = rows.iter().map(|(m, _)| m.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = write!(out, "{:width$} |", "method");
    for kind in ["P", "R"] {
        for r in &first.pr_table {
            let _ = write!(out, " {:>7}", format!("{kind}@{}", r.threshold_cm));
        }
        out.push_str(" |");
    }
    out.push_str(" topo=0  scenes\n");
    for (method, report) in rows {
        let _ = write!(out, "{method:width$} |");
        for r in &report.pr_table {
            let _ = write!(out, " {:>7.3}", r.precision);
        }
        out.push_str(" |");
        for r in &report.pr_table {
            let _ = write!(out, " {:>7.3}", r.recall);
        }
        let _ = writeln!(out, " | {:>6.3}  {}", report.cdf_at(0), report.scene_count);
    }
    out
}

/// `deviation,<method>...` rows of cumulative fractions.
pub fn cdf_csv(rows: &[(&str, &EvalReport)]) -> String {
    let max = rows.iter().map(|(_, r)| r.topology_cdf.len()).max().unwrap_or(1);
    let mut out = String::from("deviation");
    for (m, _) in rows {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for d in 0..max {
        let _ = write!(out, "{d}");
        for (_, r) in rows {
            let _ = write!(out, ",{}", r.cdf_at(d));
        }
        out.push('\n');
    }
    out
}
