//! Training objectives: the symmetric polyline loss with its analytic vertex
//! gradient, a gradient-descent fitter built on it, and the region / halting
//! cross-entropies that supervise lane counting.
//!
//! The polyline loss between a prediction `P` and a target `Q` is
//!
//! ```text
//! L(P, Q) = sum_i min_q |p_i - q| + sum_j min_p |p - q_j|
//! ```
//!
//! where both sums run over densified points, so every edge point (not just
//! the vertices) is matched. Each densified point of `P` is a convex
//! combination of two vertices; its gradient is split onto those vertices
//! with the same weights.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DensePolyline, NearestFinder, Point2, Polyline, DEFAULT_DENSIFY_STEP};

/// Probabilities are clamped to this before taking logs.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Losses above this abort an optimization run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Halvings tried per iteration before the step is abandoned.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Plain sums over densified points.
    #[default]
    Sum,
    /// Each directed term divided by its number of densified points.
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossOptions {
    pub step: f64,
    pub normalization: Normalization,
}

impl Default for LossOptions {
    fn default() -> Self {
        LossOptions {
            step: DEFAULT_DENSIFY_STEP,
            normalization: Normalization::Sum,
        }
    }
}

/// Gradient of a loss with respect to each vertex of a polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexGradient(pub Vec<Point2>);

impl VertexGradient {
    pub fn zeros(n: usize) -> Self {
        VertexGradient(vec![Point2::default(); n])
    }

    pub fn as_slice(&self) -> &[Point2] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|g| g.dot(*g)).sum::<f64>().sqrt()
    }

    fn accumulate(&mut self, parent: crate::geometry::DenseParent, g: Point2) {
        self.0[parent.segment] = self.0[parent.segment] + g * parent.weight;
        if parent.weight != 1.0 {
            let j = parent.segment + 1;
            self.0[j] = self.0[j] + g * (1.0 - parent.weight);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolylineLoss {
    pub value: f64,
    /// Gradient with respect to the vertices of the first argument.
    pub gradient: VertexGradient,
    pub forward: f64,
    pub backward: f64,
}

/// The discrete structure a loss evaluation depends on: densification counts
/// and every nearest-match assignment. The analytic gradient is exact while
/// this stays fixed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub prediction_counts: Vec<usize>,
    pub target_counts: Vec<usize>,
    pub forward: Vec<usize>,
    pub backward: Vec<usize>,
}

fn evaluate(
    p: &Polyline,
    q: &Polyline,
    opts: LossOptions,
    with_gradient: bool,
) -> Result<(PolylineLoss, Assignment)> {
    let dp = DensePolyline::build(p, opts.step)?;
    let dq = DensePolyline::build(q, opts.step)?;
    let (scale_fwd, scale_bwd) = match opts.normalization {
        Normalization::Sum => (1.0, 1.0),
        Normalization::Mean => (1.0 / dp.points.len() as f64, 1.0 / dq.points.len() as f64),
    };
    let mut gradient = VertexGradient::zeros(p.len());

    let to_q = NearestFinder::for_dense(&dq);
    let mut forward = 0.0;
    let mut forward_match = Vec::with_capacity(dp.points.len());
    for (i, &pt) in dp.points.iter().enumerate() {
        let (d, k) = to_q.nearest(pt);
        forward += d;
        forward_match.push(k);
        if with_gradient && d > 0.0 {
            gradient.accumulate(dp.parents[i], (pt - dq.points[k]) * (scale_fwd / d));
        }
    }

    let to_p = NearestFinder::for_dense(&dp);
    let mut backward = 0.0;
    let mut backward_match = Vec::with_capacity(dq.points.len());
    for &qt in &dq.points {
        let (d, m) = to_p.nearest(qt);
        backward += d;
        backward_match.push(m);
        if with_gradient && d > 0.0 {
            gradient.accumulate(dp.parents[m], (dp.points[m] - qt) * (scale_bwd / d));
        }
    }

    let forward = forward * scale_fwd;
    let backward = backward * scale_bwd;
    Ok((
        PolylineLoss {
            value: forward + backward,
            gradient,
            forward,
            backward,
        },
        Assignment {
            prediction_counts: dp.interior_counts,
            target_counts: dq.interior_counts,
            forward: forward_match,
            backward: backward_match,
        },
    ))
}

/// Symmetric polyline loss and its gradient with respect to `p`.
pub fn polyline_loss(p: &Polyline, q: &Polyline, step: f64) -> Result<PolylineLoss> {
    polyline_loss_with(
        p,
        q,
        LossOptions {
            step,
            ..LossOptions::default()
        },
    )
}

pub fn polyline_loss_with(p: &Polyline, q: &Polyline, opts: LossOptions) -> Result<PolylineLoss> {
    Ok(evaluate(p, q, opts, true)?.0)
}

pub fn polyline_loss_value(p: &Polyline, q: &Polyline, opts: LossOptions) -> Result<f64> {
    Ok(evaluate(p, q, opts, false)?.0.value)
}

pub fn loss_assignment(p: &Polyline, q: &Polyline, opts: LossOptions) -> Result<Assignment> {
    Ok(evaluate(p, q, opts, false)?.1)
}

fn perturbed(p: &Polyline, vertex: usize, axis: usize, delta: f64) -> Result<Polyline> {
    let mut v = p.vertices().to_vec();
    if axis == 0 {
        v[vertex].x += delta;
    } else {
        v[vertex].y += delta;
    }
    Polyline::new(v)
}

/// Central-difference estimate of the polyline-loss gradient, one
/// coordinate at a time.
pub fn finite_difference_gradient(
    p: &Polyline,
    q: &Polyline,
    step: f64,
    epsilon: f64,
) -> Result<VertexGradient> {
    finite_difference_gradient_with(p, q, LossOptions { step, ..LossOptions::default() }, epsilon)
}

pub fn finite_difference_gradient_with(
    p: &Polyline,
    q: &Polyline,
    opts: LossOptions,
    epsilon: f64,
) -> Result<VertexGradient> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::param("epsilon", format!("must be positive, got {epsilon}")));
    }
    let mut out = VertexGradient::zeros(p.len());
    for vertex in 0..p.len() {
        for axis in 0..2 {
            let plus = polyline_loss_value(&perturbed(p, vertex, axis, epsilon)?, q, opts)?;
            let minus = polyline_loss_value(&perturbed(p, vertex, axis, -epsilon)?, q, opts)?;
            let d = (plus - minus) / (2.0 * epsilon);
            if axis == 0 {
                out.0[vertex].x = d;
            } else {
                out.0[vertex].y = d;
            }
        }
    }
    Ok(out)
}

/// Outcome of comparing one gradient coordinate against central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordinateCheck {
    Compared {
        analytic: f64,
        numeric: f64,
        relative_error: f64,
    },
    /// The probe changed the matching or densification, so the loss is not
    /// differentiable along this coordinate at this scale.
    AssignmentFlipped,
}

#[derive(Debug, Clone)]
pub struct GradientCheck {
    pub coordinates: Vec<CoordinateCheck>,
}

impl GradientCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.coordinates
            .iter()
            .filter_map(|c| match c {
                CoordinateCheck::Compared { relative_error, .. } => Some(*relative_error),
                CoordinateCheck::AssignmentFlipped => None,
            })
            .fold(0.0, f64::max)
    }

    pub fn compared(&self) -> usize {
        self.coordinates
            .iter()
            .filter(|c| matches!(c, CoordinateCheck::Compared { .. }))
            .count()
    }
}

/// `|a - b| / max(|a|, |b|, 1)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Analytic gradient vs. central differences, coordinate by coordinate,
/// skipping coordinates whose probes change the assignment.
pub fn check_gradient(
    p: &Polyline,
    q: &Polyline,
    opts: LossOptions,
    epsilon: f64,
) -> Result<GradientCheck> {
    let (base, assignment) = evaluate(p, q, opts, true)?;
    let mut coordinates = Vec::with_capacity(2 * p.len());
    for vertex in 0..p.len() {
        for axis in 0..2 {
            let plus = perturbed(p, vertex, axis, epsilon)?;
            let minus = perturbed(p, vertex, axis, -epsilon)?;
            let (lp, ap) = evaluate(&plus, q, opts, false)?;
            let (lm, am) = evaluate(&minus, q, opts, false)?;
            if ap != assignment || am != assignment {
                coordinates.push(CoordinateCheck::AssignmentFlipped);
                continue;
            }
            let numeric = (lp.value - lm.value) / (2.0 * epsilon);
            let g = base.gradient.0[vertex];
            let analytic = if axis == 0 { g.x } else { g.y };
            coordinates.push(CoordinateCheck::Compared {
                analytic,
                numeric,
                relative_error: relative_error(analytic, numeric),
            });
        }
    }
    Ok(GradientCheck { coordinates })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub steps: usize,
    pub lr: f64,
    pub loss: LossOptions,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            steps: 500,
            lr: 0.1,
            loss: LossOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub polyline: Polyline,
    /// Loss before the first step followed by the loss after each accepted
    /// iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Gradient descent on the polyline loss from `p0` towards `q`.
pub fn fit_polyline(p0: &Polyline, q: &Polyline, steps: usize, lr: f64) -> Result<FitResult> {
    fit_polyline_with(
        p0,
        q,
        FitOptions {
            steps,
            lr,
            ..FitOptions::default()
        },
    )
}

/// Each iteration starts from `opts.lr` and halves it (at most
/// [`MAX_HALVINGS`] times) until the loss does not increase. The run ends
/// early once no halving yields an acceptable step.
pub fn fit_polyline_with(p0: &Polyline, q: &Polyline, opts: FitOptions) -> Result<FitResult> {
    if opts.steps == 0 {
        return Err(Error::param("steps", "must be at least 1"));
    }
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::param("lr", format!("must be positive, got {}", opts.lr)));
    }
    let mut current = p0.clone();
    let mut loss = polyline_loss_with(&current, q, opts.loss)?;
    let mut trace = vec![loss.value];
    for iteration in 1..=opts.steps {
        if loss.value == 0.0 {
            trace.push(0.0);
            continue;
        }
        let mut lr = opts.lr;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<Point2> = current
                .vertices()
                .iter()
                .zip(loss.gradient.as_slice())
                .map(|(&v, &g)| v - g * lr)
                .collect();
            if let Ok(candidate) = Polyline::new(candidate) {
                let value = polyline_loss_value(&candidate, q, opts.loss)?;
                if !value.is_finite() || value > DIVERGENCE_LIMIT {
                    return Err(Error::Diverged {
                        iteration,
                        loss: value,
                    });
                }
                if value <= loss.value {
                    accepted = Some(candidate);
                    break;
                }
            }
            lr *= 0.5;
        }
        let Some(next) = accepted else { break };
        current = next;
        loss = polyline_loss_with(&current, q, opts.loss)?;
        trace.push(loss.value);
    }
    Ok(FitResult {
        polyline: current,
        trace,
    })
}

/// Writes `iteration,value` rows with a header.
pub fn write_trace_csv(trace: &[f64], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iteration,value")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    Ok(())
}

/// A K×K grid of region probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSoftmax {
    k: usize,
    probabilities: Vec<f64>,
}

impl RegionSoftmax {
    pub fn new(k: usize, probabilities: Vec<f64>) -> Result<Self> {
        if k == 0 || probabilities.len() != k * k {
            return Err(Error::param(
                "probabilities",
                format!("expected {} entries for K = {k}, got {}", k * k, probabilities.len()),
            ));
        }
        if probabilities.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::param("probabilities", "entries must be finite and nonnegative"));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::param("probabilities", format!("sum to {total}, expected 1")));
        }
        Ok(RegionSoftmax { k, probabilities })
    }

    /// Softmax of raw scores.
    pub fn from_logits(k: usize, logits: &[f64]) -> Result<Self> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        RegionSoftmax::new(k, exps.into_iter().map(|e| e / total).collect())
    }

    pub fn uniform(k: usize) -> Self {
        let n = (k * k).max(1);
        RegionSoftmax {
            k,
            probabilities: vec![1.0 / n as f64; n],
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.probabilities[row * self.k + col]
    }
}

/// Cross-entropy of the region softmax against the ground-truth bin.
pub fn region_cross_entropy(s: &RegionSoftmax, row: usize, col: usize) -> Result<f64> {
    if row >= s.k || col >= s.k {
        return Err(Error::param(
            "bin",
            format!("({row}, {col}) outside a {k}x{k} grid", k = s.k),
        ));
    }
    Ok(-s.get(row, col).max(PROBABILITY_FLOOR).ln())
}

/// Binary cross-entropy of the halting probability; `label` is true while
/// lanes remain to be counted.
pub fn halting_bce(h: f64, label: bool) -> Result<f64> {
    if !(0.0..=1.0).contains(&h) {
        return Err(Error::param("h", format!("must lie in [0, 1], got {h}")));
    }
    let p = if label { h } else { 1.0 - h };
    Ok(-p.max(PROBABILITY_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(v: &[(f64, f64)]) -> Polyline {
        Polyline::new(v.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn identical_polylines_have_zero_loss_and_gradient() {
        let p = pl(&[(3.0, 4.0), (10.0, 30.0), (2.5, 60.0)]);
        let l = polyline_loss(&p, &p, 1.0).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.gradient.as_slice().iter().all(|g| *g == Point2::default()));
    }

    #[test]
    fn parallel_segments_value_and_gradient() {
        let p = pl(&[(0.0, 0.0), (0.0, 2.0)]);
        let q = pl(&[(1.0, 0.0), (1.0, 2.0)]);
        let l = polyline_loss(&p, &q, 1.0).unwrap();
        assert_eq!(l.value, 6.0);
        let g = l.gradient.as_slice();
        assert!(g.iter().all(|v| v.x < 0.0 && v.y.abs() < 1e-12));
        // Three densified points per direction, each a unit residual.
        assert!((g[0].x + g[1].x + 6.0).abs() < 1e-12);
        // Any single-vertex probe lengthens the segment past 2 px and
        // changes the densification, so compare against a rigid translation.
        let check = check_gradient(&p, &q, LossOptions::default(), 1e-4).unwrap();
        assert_eq!(check.compared(), 0);
        let eps = 1e-4;
        let plus = polyline_loss(&p.translated(Point2::new(eps, 0.0)), &q, 1.0).unwrap().value;
        let minus = polyline_loss(&p.translated(Point2::new(-eps, 0.0)), &q, 1.0).unwrap().value;
        assert!(((plus - minus) / (2.0 * eps) - (g[0].x + g[1].x)).abs() < 1e-6);
    }

    #[test]
    fn blind_spot_is_covered_by_reverse_term() {
        let p = pl(&[(0.0, 0.0), (0.0, 1.0)]);
        let q = pl(&[(0.0, 0.0), (0.0, 3.0)]);
        let l = polyline_loss(&p, &q, 1.0).unwrap();
        assert_eq!(l.forward, 0.0);
        assert_eq!(l.backward, 3.0);
        assert_eq!(l.value, 3.0);
    }

    #[test]
    fn mean_normalization_divides_each_term() {
        let p = pl(&[(0.0, 0.0), (0.0, 1.0)]);
        let q = pl(&[(0.0, 0.0), (0.0, 3.0)]);
        let opts = LossOptions {
            normalization: Normalization::Mean,
            ..LossOptions::default()
        };
        assert_eq!(polyline_loss_value(&p, &q, opts).unwrap(), 0.75);
    }

    #[test]
    fn finite_difference_zero_at_identity() {
        let p = pl(&[(0.0, 0.0), (5.0, 7.0), (9.0, 20.0)]);
        let fd = finite_difference_gradient(&p, &p, 1.0, 1e-4).unwrap();
        // The loss has a kink at zero, so the central difference sees
        // |+eps| and |-eps| cancel.
        assert!(fd.as_slice().iter().all(|g| g.x.abs() < 1e-6 && g.y.abs() < 1e-6));
        assert!(finite_difference_gradient(&p, &p, 1.0, 0.0).is_err());
    }

    #[test]
    fn shifted_right_pushes_left() {
        let q = pl(&[(100.0, 0.0), (100.0, 50.0), (100.0, 100.0)]);
        let p = q.translated(Point2::new(10.0, 0.0));
        let fd = finite_difference_gradient(&p, &q, 1.0, 1e-4).unwrap();
        assert!(fd.as_slice().iter().all(|g| g.x > 0.0));
    }

    #[test]
    fn fit_at_optimum_stays_put() {
        let q = pl(&[(0.0, 0.0), (10.0, 10.0), (10.0, 30.0)]);
        let fit = fit_polyline(&q, &q, 10, 0.1).unwrap();
        assert_eq!(fit.polyline, q);
        assert!(fit.trace.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_rejects_bad_options() {
        let q = pl(&[(0.0, 0.0), (10.0, 10.0)]);
        assert!(fit_polyline(&q, &q, 0, 0.1).is_err());
        assert!(fit_polyline(&q, &q, 5, -1.0).is_err());
    }

    #[test]
    fn fit_diverges_with_absurd_learning_rate() {
        let q = pl(&[(0.0, 0.0), (0.0, 100.0)]);
        let p = q.translated(Point2::new(5.0, 0.0));
        let err = fit_polyline(&p, &q, 10, 1e16).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }

    #[test]
    fn trace_csv() {
        let mut buf = Vec::new();
        write_trace_csv(&[3.0, 1.5], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "iteration,value\n0,3\n1,1.5\n");
    }

    #[test]
    fn region_cross_entropy_examples() {
        let u = RegionSoftmax::uniform(24);
        assert!((region_cross_entropy(&u, 3, 7).unwrap() - 576f64.ln()).abs() < 1e-12);
        assert!((region_cross_entropy(&u, 0, 0).unwrap() - 6.356).abs() < 1e-3);

        let mut one_hot = vec![0.0; 4];
        one_hot[3] = 1.0;
        let s = RegionSoftmax::new(2, one_hot).unwrap();
        assert_eq!(region_cross_entropy(&s, 1, 1).unwrap(), 0.0);
        assert!((region_cross_entropy(&s, 0, 0).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-9);
        assert!(region_cross_entropy(&s, 2, 0).is_err());

        let quarter = RegionSoftmax::new(2, vec![0.25; 4]).unwrap();
        assert!((region_cross_entropy(&quarter, 0, 1).unwrap() - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn region_softmax_validation() {
        assert!(RegionSoftmax::new(2, vec![0.5, 0.5, 0.5, 0.5]).is_err());
        assert!(RegionSoftmax::new(2, vec![1.0]).is_err());
        let s = RegionSoftmax::from_logits(2, &[0.0, 0.0, 0.0, 1000.0]).unwrap();
        assert!((s.get(1, 1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn halting_bce_examples() {
        assert_eq!(halting_bce(1.0, true).unwrap(), 0.0);
        assert!((halting_bce(0.5, true).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((halting_bce(0.5, false).unwrap() - std::f64::consts::LN_2).abs() < 1e-4);
        assert!((halting_bce(0.9, false).unwrap() - std::f64::consts::LN_10).abs() < 1e-4);
        assert!(halting_bce(0.0, true).unwrap().is_finite());
        assert!(halting_bce(1.5, true).is_err());
    }
}
