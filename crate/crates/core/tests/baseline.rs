use std::collections::VecDeque;

use lanegraph_core::baseline::{
    connected_components, dense_detection_map, run_baseline, skeletonize, threshold_mask, BinaryMask,
    DetectorSim, VectorizeParams,
};
use lanegraph_core::scenegen::{generate_scene, BevRaster, RasterGeometry, SceneConfig};
use proptest::prelude::*;

fn flood_fill_count(m: &BinaryMask) -> usize {
    let (h, w) = (m.height(), m.width());
    let mut seen = vec![false; h * w];
    let mut count = 0;
    for start in 0..h * w {
        if seen[start] || !m.get(start / w, start % w) {
            continue;
        }
        count += 1;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as i64, (i % w) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if m.get_padded(rr, cc) {
                        let j = rr as usize * w + cc as usize;
                        if !seen[j] {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    count
}

fn mask_strategy(max: usize) -> impl Strategy<Value = BinaryMask> {
    (1..=max, 1..=max, 0.05f64..0.7, any::<u64>()).prop_map(|(h, w, density, seed)| {
        let mut state = seed | 1;
        let bits: Vec<bool> = (0..h * w)
            .map(|_| {
                // xorshift64
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                (state >> 11) as f64 / (1u64 << 53) as f64 > 1.0 - density
            })
            .collect();
        BinaryMask::from_fn(h, w, |r, c| bits[r * w + c])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn component_count_matches_flood_fill(m in mask_strategy(64)) {
        let labels = connected_components(&m);
        prop_assert_eq!(labels.count, flood_fill_count(&m));
        // Labels are dense and every pixel of a label is one component.
        for (r, c) in m.ones() {
            let l = labels.get(r, c);
            prop_assert!(l >= 1 && l as usize <= labels.count);
        }
    }

    #[test]
    fn skeletonize_is_idempotent(m in mask_strategy(48)) {
        let once = skeletonize(&m);
        prop_assert!(once.is_subset_of(&m));
        prop_assert_eq!(skeletonize(&once), once);
    }

    #[test]
    fn threshold_is_monotone(
        values in prop::collection::vec(0.0f32..=1.0, 64),
        t1 in 0.01f64..0.99,
        t2 in 0.01f64..0.99,
    ) {
        let g = RasterGeometry { height: 8, width: 8, resolution: 0.05 };
        let m = BevRaster::from_data(g, values).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(threshold_mask(&m, hi).unwrap().is_subset_of(&threshold_mask(&m, lo).unwrap()));
    }
}

#[test]
fn detector_maps_recover_lane_counts() {
    for seed in 0..6 {
        let scene = generate_scene(&SceneConfig {
            seed,
            ..SceneConfig::default()
        })
        .unwrap();
        let sim = DetectorSim {
            noise_sigma: 0.0,
            seed,
            ..DetectorSim::default()
        };
        let m = dense_detection_map(&scene.ground_truth, scene.raster.geometry(), &sim).unwrap();
        let g = run_baseline(&m, 0.5, VectorizeParams::default()).unwrap();
        assert_eq!(g.len(), scene.ground_truth.len(), "seed {seed}");
    }
}

#[test]
fn occlusion_band_makes_baseline_overcount() {
    for seed in 0..4 {
        let scene = generate_scene(&SceneConfig {
            seed,
            occlusion_band: Some(4.0),
            ..SceneConfig::default()
        })
        .unwrap();
        let sim = DetectorSim {
            suppressed: scene.occlusions.clone(),
            seed,
            ..DetectorSim::default()
        };
        let m = dense_detection_map(&scene.ground_truth, scene.raster.geometry(), &sim).unwrap();
        let g = run_baseline(&m, 0.5, VectorizeParams::default()).unwrap();
        assert!(g.len() > scene.ground_truth.len(), "seed {seed}");
    }
}
