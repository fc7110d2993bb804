use lanegraph_core::losses::{check_gradient, fit_polyline, polyline_loss, LossOptions};
use lanegraph_core::{densify, Point2, Polyline};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_polyline(rng: &mut ChaCha8Rng, n: usize) -> Polyline {
    loop {
        let v = (0..n)
            .map(|_| Point2::new(rng.random_range(0.0..960.0), rng.random_range(0.0..960.0)))
            .collect();
        if let Ok(p) = Polyline::new(v) {
            return p;
        }
    }
}

/// All-pairs min-pool in the same reduction order as the loss.
fn oracle(p: &Polyline, q: &Polyline) -> f64 {
    let a = densify(p, 1.0).unwrap();
    let b = densify(q, 1.0).unwrap();
    let directed = |from: &[Point2], to: &[Point2]| {
        let mut sum = 0.0;
        for x in from {
            let mut best = f64::INFINITY;
            for y in to {
                let (dx, dy) = (x.x - y.x, x.y - y.y);
                best = best.min(dx * dx + dy * dy);
            }
            sum += best.sqrt();
        }
        sum
    };
    directed(a.points(), b.points()) + directed(b.points(), a.points())
}

#[test]
fn value_matches_all_pairs_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let n = rng.random_range(2..6);
        let m = rng.random_range(2..6);
        let p = random_polyline(&mut rng, n);
        let q = random_polyline(&mut rng, m);
        assert_eq!(polyline_loss(&p, &q, 1.0).unwrap().value, oracle(&p, &q));
    }
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut compared = 0;
    for _ in 0..20 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(2..=10);
        let p = random_polyline(&mut rng, n);
        let q = random_polyline(&mut rng, m);
        let check = check_gradient(&p, &q, LossOptions::default(), 1e-4).unwrap();
        assert!(check.max_relative_error() < 1e-4, "{}", check.max_relative_error());
        compared += check.compared();
    }
    assert!(compared > 100);
}

#[test]
fn straight_line_bends_onto_s_curve() {
    let q = Polyline::new(
        (0..=40)
            .map(|i| {
                let y = 900.0 - 20.0 * i as f64;
                // Cosine ramp: one inflection, 20 px lateral shift end to end.
                Point2::new(480.0 - 10.0 * (std::f64::consts::PI * i as f64 / 40.0).cos(), y)
            })
            .collect(),
    )
    .unwrap();
    let p0 = Polyline::new((0..5).map(|i| Point2::new(480.0, 900.0 - 200.0 * i as f64)).collect()).unwrap();
    let fit = fit_polyline(&p0, &q, 500, 0.1).unwrap();
    assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    let n = densify(&fit.polyline, 1.0).unwrap().len() + densify(&q, 1.0).unwrap().len();
    let per_point = polyline_loss(&fit.polyline, &q, 1.0).unwrap().value / n as f64;
    assert!(per_point < 0.5, "{per_point}");
}

#[test]
fn translated_target_trace_is_non_increasing() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let q = random_polyline(&mut rng, 5);
    let p0 = q.translated(Point2::new(5.0, 0.0));
    let fit = fit_polyline(&p0, &q, 500, 0.1).unwrap();
    assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    assert!(fit.trace.last().unwrap() < &fit.trace[0]);
}
