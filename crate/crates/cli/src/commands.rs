use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use lanegraph_core::baseline::{dense_detection_map, run_baseline, DetectorSim, PRESET_TAUS};
use lanegraph_core::losses::{fit_polyline, write_trace_csv};
use lanegraph_core::metrics::{aggregate, cdf_csv, evaluate_scene, render_table, EvalReport, DEFAULT_THRESHOLDS_CM};
use lanegraph_core::raster_io::{
    encode_raster, read_ground_truth, read_json, read_lane_graph, read_manifest, read_raster_entry, read_scene,
    scene_id, write_atomic, write_json, write_manifest, write_scene, Manifest, ManifestEntry, RasterFormat, SCENE_META,
};
use lanegraph_core::{densify, extract_lane_graph, generate_scene, BevRaster, LaneGraph, Polyline, SceneConfig};
use lanegraph_service::annotator::correct;
use lanegraph_service::{AppState, SceneCatalog, Session, SessionLog, Workspace};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{AnnotateArgs, BaselineArgs, CliError, EvalArgs, ExtractArgs, FileConfig, FitArgs, GenerateArgs, ServeArgs};

/// A shipped scene corpus: one generator config and the seeds to run it with.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Corpus {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub config: SceneConfig,
    pub seeds: Vec<u64>,
}

impl Corpus {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        read_json(path).map_err(CliError::from)
    }

    /// Scene configs in corpus order.
    pub fn configs(&self) -> Vec<SceneConfig> {
        self.seeds
            .iter()
            .map(|&seed| SceneConfig {
                seed,
                ..self.config.clone()
            })
            .collect()
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn manifest(scenes: &Path) -> Result<Manifest, CliError> {
    if !scenes.is_dir() {
        return Err(CliError::Data(format!("scene directory {} does not exist", scenes.display())));
    }
    Ok(read_manifest(scenes)?)
}

/// Per-scene failures are logged and counted; the run continues and then
/// reports a data error naming how many scenes were skipped.
fn finish(skipped: &[String], what: &str) -> Result<(), CliError> {
    if skipped.is_empty() {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "{} scene(s) skipped during {what}: {}",
            skipped.len(),
            skipped.join(", ")
        )))
    }
}

fn collect_skips(results: Vec<(String, Result<(), CliError>)>) -> Vec<String> {
    results
        .into_iter()
        .filter_map(|(id, r)| {
            r.err().map(|e| {
                tracing::warn!(scene = %id, error = %e, "skipping scene");
                id
            })
        })
        .collect()
}

pub fn generate(a: &GenerateArgs, file: &FileConfig) -> Result<(), CliError> {
    let format = a.format.or(file.format).unwrap_or(RasterFormat::Pgm);
    let configs = match &a.corpus {
        Some(path) => Corpus::load(path)?.configs(),
        None => {
            let base = file.scene.clone().unwrap_or_default();
            let seed = a.seed.or(file.seed).unwrap_or(0);
            (0..a.count)
                .map(|i| SceneConfig {
                    seed: seed.wrapping_add(i as u64),
                    ..base.clone()
                })
                .collect()
        }
    };
    for c in &configs {
        c.validate()?;
    }
    create_dir(&a.out)?;
    let entries: Vec<ManifestEntry> = configs
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let scene = generate_scene(c)?;
            Ok(write_scene(&a.out, &scene_id(i), &scene, format)?)
        })
        .collect::<Result<_, CliError>>()?;
    write_manifest(&a.out, &Manifest { scenes: entries })?;
    tracing::info!(count = configs.len(), out = %a.out.display(), "scenes written");
    Ok(())
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Internal(e.to_string())),
        _ => Ok(()),
    }
}

fn prediction_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.json"))
}

/// The raster with lanes drawn at full intensity.
fn overlay(r: &BevRaster, g: &LaneGraph) -> BevRaster {
    let mut out = r.clone();
    for lane in g.lanes() {
        if let Ok(points) = densify(lane, 0.5) {
            for p in points.points() {
                if r.geometry().contains(*p) {
                    out.splat(p.y as usize, p.x as usize, 1.0);
                }
            }
        }
    }
    out
}

pub fn extract(a: &ExtractArgs, file: &FileConfig) -> Result<(), CliError> {
    let params = file.extraction(&a.params)?;
    let m = manifest(&a.scenes)?;
    create_dir(&a.out)?;
    let results: Vec<(String, Result<(), CliError>)> = m
        .scenes
        .par_iter()
        .map(|e| {
            let run = || -> Result<(), CliError> {
                let raster = read_raster_entry(&a.scenes, e)?;
                let result = extract_lane_graph(&raster, &params)?;
                let mut json = result.to_json();
                json.push('\n');
                write_atomic(&prediction_path(&a.out, &e.id), json.as_bytes())?;
                if a.render {
                    let img = encode_raster(&overlay(&raster, &result.graph), RasterFormat::Pgm);
                    write_atomic(&a.out.join(format!("{}.overlay.pgm", e.id)), &img)?;
                }
                Ok(())
            };
            (e.id.clone(), run())
        })
        .collect();
    finish(&collect_skips(results), "extraction")
}

#[derive(Serialize)]
struct BaselinePrediction<'a> {
    tau: f64,
    lanes: &'a [Polyline],
}

pub fn tau_dir(tau: f64) -> String {
    format!("ce_{tau:.2}")
}

/// Detector settings for one stored scene: suppressed where the scene was
/// occluded, noise seeded by the scene seed.
fn detector_for(root: &Path, e: &ManifestEntry, base: &DetectorSim) -> Result<DetectorSim, CliError> {
    let meta_path = root.join(&e.id).join(SCENE_META);
    let (suppressed, seed) = if meta_path.exists() {
        let meta: lanegraph_core::raster_io::SceneMeta = read_json(&meta_path)?;
        (meta.occlusions, meta.seed)
    } else {
        (Vec::new(), e.seed)
    };
    Ok(DetectorSim {
        suppressed,
        seed,
        ..base.clone()
    })
}

pub fn baseline(a: &BaselineArgs, file: &FileConfig) -> Result<(), CliError> {
    let taus: Vec<f64> = if !a.tau.is_empty() {
        a.tau.clone()
    } else {
        file.taus.clone().unwrap_or(PRESET_TAUS.to_vec())
    };
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(CliError::Usage(format!("baseline threshold {t} outside (0, 1)")));
    }
    let detector = file.detector.clone().unwrap_or_default();
    let vectorize = file.vectorize.unwrap_or_default();
    let m = manifest(&a.scenes)?;
    for &t in &taus {
        create_dir(&a.out.join(tau_dir(t)))?;
    }
    let results: Vec<(String, Result<(), CliError>)> = m
        .scenes
        .par_iter()
        .map(|e| {
            let run = || -> Result<(), CliError> {
                let gt = read_ground_truth(&a.scenes, e)?
                    .ok_or_else(|| CliError::Data(format!("scene {} has no ground truth to simulate detections from", e.id)))?;
                let geometry = read_raster_entry(&a.scenes, e)?.geometry();
                let sim = detector_for(&a.scenes, e, &detector)?;
                let map = dense_detection_map(&gt, geometry, &sim)?;
                for &tau in &taus {
                    let g = run_baseline(&map, tau, vectorize)?;
                    let mut json = serde_json::to_string(&BaselinePrediction { tau, lanes: g.lanes() })
                        .map_err(|e| CliError::Internal(e.to_string()))?;
                    json.push('\n');
                    write_atomic(&prediction_path(&a.out.join(tau_dir(tau)), &e.id), json.as_bytes())?;
                }
                Ok(())
            };
            (e.id.clone(), run())
        })
        .collect();
    finish(&collect_skips(results), "baseline")
}

/// Reads one prediction per scene from `dir`. Missing files and files for
/// scenes outside the set are errors.
fn read_predictions(name: &str, dir: &Path, m: &Manifest) -> Result<Vec<LaneGraph>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!("method {name}: {} is not a directory", dir.display())));
    }
    let ids: BTreeSet<&str> = m.scenes.iter().map(|e| e.id.as_str()).collect();
    let listing = fs::read_dir(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    for entry in listing.flatten() {
        let path = entry.path();
        if path.extension().is_some_and(|x| x == "json") {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            if !ids.contains(stem) {
                return Err(CliError::Data(format!(
                    "method {name}: prediction {} matches no scene",
                    path.display()
                )));
            }
        }
    }
    m.scenes
        .par_iter()
        .map(|e| {
            let path = prediction_path(dir, &e.id);
            if !path.exists() {
                return Err(CliError::Data(format!("method {name}: missing prediction for scene {}", e.id)));
            }
            Ok(read_lane_graph(&path)?)
        })
        .collect()
}

pub fn eval(a: &EvalArgs, file: &FileConfig) -> Result<(), CliError> {
    let thresholds: Vec<f64> = if !a.thresholds.is_empty() {
        a.thresholds.clone()
    } else {
        file.thresholds.clone().unwrap_or(DEFAULT_THRESHOLDS_CM.to_vec())
    };
    let m = manifest(&a.scenes)?;
    if m.scenes.is_empty() {
        return Err(CliError::Data(format!("{} holds no scenes", a.scenes.display())));
    }
    let names: BTreeSet<&str> = a.methods.iter().map(|(n, _)| n.as_str()).collect();
    if names.len() != a.methods.len() {
        return Err(CliError::Usage("method names must be unique".into()));
    }
    let gts: Vec<(LaneGraph, f64)> = m
        .scenes
        .par_iter()
        .map(|e| {
            let gt = read_ground_truth(&a.scenes, e)?
                .ok_or_else(|| CliError::Data(format!("scene {} has no ground truth", e.id)))?;
            Ok((gt, read_raster_entry(&a.scenes, e)?.resolution()))
        })
        .collect::<Result<_, CliError>>()?;
    create_dir(&a.out)?;
    let mut reports: Vec<(String, EvalReport)> = Vec::new();
    for (name, dir) in &a.methods {
        let preds = read_predictions(name, dir, &m)?;
        let evals = preds
            .par_iter()
            .zip(&gts)
            .map(|(p, (gt, res))| evaluate_scene(p, gt, &thresholds, *res, 1.0))
            .collect::<Result<Vec<_>, _>>()?;
        let report = aggregate(&evals)?;
        write_atomic(&a.out.join(format!("{name}.json")), format!("{}\n", report.to_json()).as_bytes())?;
        reports.push((name.clone(), report));
    }
    let rows: Vec<(&str, &EvalReport)> = reports.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let table = render_table(&rows);
    write_atomic(&a.out.join("table.txt"), table.as_bytes())?;
    write_atomic(&a.out.join("topology_cdf.csv"), cdf_csv(&rows).as_bytes())?;
    emit(&table)
}

pub fn serve(a: &ServeArgs, file: &FileConfig, workers: Option<usize>) -> Result<(), CliError> {
    let params = file.extraction(&a.params)?;
    manifest(&a.scenes)?;
    let catalog = SceneCatalog::open(&a.scenes)?;
    let log = SessionLog::new(a.logs.clone()).map_err(|e| CliError::Data(format!("session log directory: {e}")))?;
    let state = Arc::new(AppState::new(catalog, params, log));
    let port = a.port.or(file.port).unwrap_or(8080);
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(w) = workers {
        rt.worker_threads(w);
    }
    let rt = rt.enable_all().build().map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let addr = format!("{}:{port}", a.host);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| CliError::Data(format!("cannot listen on {addr}: {e}")))?;
        let bound = listener.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
        tracing::info!(%bound, scenes = state.catalog().len(), "serving");
        eprintln!("listening on http://{bound}");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        lanegraph_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::Internal(e.to_string()))
    })
}

#[derive(Serialize)]
struct FitOutput<'a> {
    polyline: &'a Polyline,
    initial_loss: f64,
    final_loss: f64,
    iterations: usize,
}

pub fn fit(a: &FitArgs) -> Result<(), CliError> {
    let init: Polyline = read_json(&a.init)?;
    let target: Polyline = read_json(&a.target)?;
    let result = fit_polyline(&init, &target, a.steps, a.lr)?;
    create_dir(&a.out)?;
    write_json(
        &a.out.join("fit.json"),
        &FitOutput {
            polyline: &result.polyline,
            initial_loss: result.trace[0],
            final_loss: *result.trace.last().expect("trace holds the initial loss"),
            iterations: result.trace.len() - 1,
        },
    )?;
    let mut csv = Vec::new();
    write_trace_csv(&result.trace, &mut csv).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(&a.out.join("trace.csv"), &csv)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct AnnotationReport {
    pub scenes: usize,
    /// Scenes whose automatic extraction had the wrong lane count.
    pub failure_scenes: usize,
    pub fixed_scenes: usize,
    pub total_clicks: usize,
    pub failed_clicks: usize,
    /// Mean clicks over failure scenes; zero when there are none.
    pub mean_clicks_to_fix: f64,
    pub per_scene: Vec<SceneAnnotation>,
}

#[derive(Debug, Serialize)]
pub struct SceneAnnotation {
    pub id: String,
    pub before_deviation: usize,
    pub after_deviation: usize,
    pub clicks: usize,
    pub failed_clicks: usize,
}

pub fn annotate(a: &AnnotateArgs, file: &FileConfig) -> Result<(), CliError> {
    let params = file.extraction(&a.params)?;
    let m = manifest(&a.scenes)?;
    let per_scene: Vec<SceneAnnotation> = m
        .scenes
        .par_iter()
        .map(|e| {
            let stored = read_scene(&a.scenes, e)?;
            let gt = stored
                .ground_truth
                .ok_or_else(|| CliError::Data(format!("scene {} has no ground truth", e.id)))?;
            let ws = Workspace::new(stored.raster, params.clone()).map_err(|e| CliError::Internal(e.to_string()))?;
            let mut s = Session::new("annotate", &e.id);
            s.extract(&ws).map_err(|e| CliError::Internal(e.to_string()))?;
            let c = correct(&mut s, &ws, &gt).map_err(|e| CliError::Internal(e.to_string()))?;
            Ok(SceneAnnotation {
                id: e.id.clone(),
                before_deviation: c.before_deviation,
                after_deviation: c.after_deviation,
                clicks: c.clicks,
                failed_clicks: c.failed_clicks,
            })
        })
        .collect::<Result<_, CliError>>()?;
    let failures: Vec<&SceneAnnotation> = per_scene.iter().filter(|s| s.before_deviation > 0).collect();
    let failure_clicks: usize = failures.iter().map(|s| s.clicks).sum();
    let report = AnnotationReport {
        scenes: per_scene.len(),
        failure_scenes: failures.len(),
        fixed_scenes: failures.iter().filter(|s| s.after_deviation == 0).count(),
        total_clicks: per_scene.iter().map(|s| s.clicks).sum(),
        failed_clicks: per_scene.iter().map(|s| s.failed_clicks).sum(),
        mean_clicks_to_fix: if failures.is_empty() {
            0.0
        } else {
            failure_clicks as f64 / failures.len() as f64
        },
        per_scene,
    };
    match &a.out {
        Some(path) => write_json(path, &report)?,
        None => emit(&format!(
            "{}\n",
            serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?
        ))?,
    }
    Ok(())
}
