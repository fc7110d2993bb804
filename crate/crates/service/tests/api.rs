use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use lanegraph_core::raster_io::{scene_id, write_manifest, write_scene, Manifest, RasterFormat};
use lanegraph_core::scenegen::{generate_scene, SceneConfig};
use lanegraph_core::{BevRaster, ExtractionParams, LaneGraph, Point2, Polyline};
use lanegraph_service::store::read_log;
use lanegraph_service::{router, AppState, SceneCatalog, SessionLog};
use serde_json::{json, Value};
use tower::ServiceExt;

fn write_corpus(root: &Path, n: usize) {
    let mut m = Manifest::default();
    for i in 0..n {
        let scene = generate_scene(&SceneConfig {
            lane_count_range: (3, 3),
            seed: i as u64 + 40,
            ..SceneConfig::default()
        })
        .unwrap();
        m.scenes.push(write_scene(root, &scene_id(i), &scene, RasterFormat::Pgm).unwrap());
    }
    write_manifest(root, &m).unwrap();
}

fn app(root: &Path, logs: &Path) -> Router {
    let state = AppState::new(
        SceneCatalog::open(root).unwrap(),
        ExtractionParams::default(),
        SessionLog::new(Some(logs.to_path_buf())).unwrap(),
    );
    router(Arc::new(state))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn assert_error(status: StatusCode, body: &Value, expected: StatusCode) {
    assert_eq!(status, expected, "{body}");
    assert_eq!(body["code"], expected.as_u16());
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn scenes_and_health() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 5);
    let app = app(dir.path(), &dir.path().join("logs"));

    let (s, v) = call(&app, Method::GET, "/health", None).await;
    assert_eq!((s, v), (StatusCode::OK, json!({"status": "ok"})));

    let (s, v) = call(&app, Method::GET, "/scenes", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["scenes"].as_array().unwrap().len(), 5);

    let (s, v) = call(&app, Method::GET, "/scenes/scene_0000", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["width"].as_u64(), v["height"].as_u64(), v["k_grid"].as_u64()), (Some(960), Some(960), Some(24)));
    assert_eq!(v["resolution"], 0.05);
    assert!(v.get("ground_truth").is_none());
    use base64::Engine;
    let pgm = base64::engine::general_purpose::STANDARD.decode(v["raster"].as_str().unwrap()).unwrap();
    assert!(pgm.starts_with(b"P5"));

    let (_, v) = call(&app, Method::GET, "/scenes/scene_0000?reveal=true", None).await;
    let gt: LaneGraph = serde_json::from_value(v["ground_truth"].clone()).unwrap();
    assert_eq!(gt.len(), 3);

    let (s, v) = call(&app, Method::GET, "/scenes/nope", None).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);
    let (s, v) = call(&app, Method::GET, "/no/such/route", None).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn extract_trace_delete_score() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1);
    let logs = dir.path().join("logs");
    let app = app(dir.path(), &logs);

    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({"scene_id": "nope"}))).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);
    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({"wrong": 1}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");

    let (s, v) = call(&app, Method::POST, "/sessions", Some(json!({"scene_id": "scene_0000"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(v["clicks"], 0);
    let id = v["id"].as_str().unwrap().to_string();
    let base = format!("/sessions/{id}");

    let (s, v) = call(&app, Method::POST, &format!("{base}/extract"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["lanes"].as_array().unwrap().len(), 3);
    assert_eq!(v["provenance"].as_array().unwrap().len(), 3);
    assert_eq!(v["clicks"], 0);
    let (s, v) = call(&app, Method::POST, &format!("{base}/extract"), None).await;
    assert_error(s, &v, StatusCode::CONFLICT);

    let (s, v) = call(&app, Method::GET, &format!("{base}/score"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["topology_deviation"], 0);
    assert_eq!(v["precision_recall"].as_array().unwrap().len(), 4);
    let (_, again) = call(&app, Method::GET, &format!("{base}/score"), None).await;
    assert_eq!(v, again, "score is read-only");

    // Out of range: rejected, no click.
    let (s, v) = call(&app, Method::POST, &format!("{base}/trace"), Some(json!({"bin": [24, 0]}))).await;
    assert_error(s, &v, StatusCode::UNPROCESSABLE_ENTITY);
    // Empty road: conflict, but the click counts.
    let (s, v) = call(&app, Method::POST, &format!("{base}/trace"), Some(json!({"bin": [0, 0]}))).await;
    assert_error(s, &v, StatusCode::CONFLICT);
    let (_, v) = call(&app, Method::GET, &base, None).await;
    assert_eq!((v["clicks"].as_u64(), v["failed_clicks"].as_u64()), (Some(1), Some(1)));

    let bin = v["provenance"][2]["bin"].clone();
    let (s, v) = call(&app, Method::DELETE, &format!("{base}/lanes/2"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["lanes"].as_array().unwrap().len(), v["clicks"].as_u64()), (2, Some(2)));
    let (_, sc) = call(&app, Method::GET, &format!("{base}/score"), None).await;
    assert_eq!(sc["topology_deviation"], 1);
    let (s, v) = call(&app, Method::DELETE, &format!("{base}/lanes/7"), None).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);

    let (s, v) = call(&app, Method::POST, &format!("{base}/trace"), Some(json!({ "bin": bin }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!((v["lanes"].as_array().unwrap().len(), v["clicks"].as_u64()), (3, Some(3)));
    let log = v["log"].as_array().unwrap();
    let clicks = log.iter().filter(|e| e["action"] != "auto-extract").count();
    assert_eq!(clicks, 3);

    let (s, v) = call(&app, Method::POST, &format!("{base}/reset"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!((v["clicks"].as_u64(), v["lanes"].as_array().unwrap().len()), (Some(0), 0));
    let (s, _) = call(&app, Method::POST, &format!("{base}/extract"), None).await;
    assert_eq!(s, StatusCode::OK);

    let (s, v) = call(&app, Method::GET, "/sessions/s999", None).await;
    assert_error(s, &v, StatusCode::NOT_FOUND);

    let records = read_log(&logs.join(format!("{id}.jsonl"))).unwrap();
    let actions: Vec<&str> = records.iter().map(|r| r["action"].as_str().unwrap()).collect();
    assert_eq!(
        actions,
        ["create", "auto-extract", "add-trace", "delete-lane", "add-trace", "reset", "auto-extract"]
    );
    assert!(records.iter().all(|r| r["session"] == id.as_str() && r["ts"].is_u64()));
    assert_eq!(records[2]["payload"]["failed_click"], true);
}

#[tokio::test]
async fn score_without_ground_truth_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), 1);
    std::fs::remove_file(dir.path().join("scene_0000/gt.json")).unwrap();
    let app = app(dir.path(), &dir.path().join("logs"));
    let (_, v) = call(&app, Method::POST, "/sessions", Some(json!({"scene_id": "scene_0000"}))).await;
    let id = v["id"].as_str().unwrap();
    let (s, v) = call(&app, Method::GET, &format!("/sessions/{id}/score"), None).await;
    assert_error(s, &v, StatusCode::CONFLICT);
}

/// Paints `lane` onto `r` with the scene generator's density.
fn paint(r: &mut BevRaster, lane: &Polyline) {
    for p in lanegraph_core::densify(lane, 0.25).unwrap().points() {
        if r.geometry().contains(*p) {
            r.splat(p.y as usize, p.x as usize, 1.0);
        }
    }
}

/// A clean three-lane scene repainted with `edit`; returns the app and the
/// scene's ground truth lanes.
fn failure_scene(dir: &Path, edit: impl Fn(&mut BevRaster, &[Polyline]) -> LaneGraph) -> Router {
    let scene = generate_scene(&SceneConfig {
        lane_count_range: (3, 3),
        dropout_rate: 0.0,
        noise_rate: 0.0,
        seed: 77,
        ..SceneConfig::default()
    })
    .unwrap();
    let mut raster = BevRaster::zeros(scene.raster.geometry()).unwrap();
    let gt = edit(&mut raster, scene.ground_truth.lanes());
    let stored = lanegraph_core::Scene {
        raster,
        ground_truth: gt,
        ..scene
    };
    let entry = write_scene(dir, "failure", &stored, RasterFormat::F32).unwrap();
    write_manifest(dir, &Manifest { scenes: vec![entry] }).unwrap();
    app(dir, &dir.join("logs"))
}

async fn extracted_session(app: &Router) -> (String, u64) {
    let (_, v) = call(app, Method::POST, "/sessions", Some(json!({"scene_id": "failure"}))).await;
    let base = format!("/sessions/{}", v["id"].as_str().unwrap());
    call(app, Method::POST, &format!("{base}/extract"), None).await;
    let (_, sc) = call(app, Method::GET, &format!("{base}/score"), None).await;
    (base, sc["topology_deviation"].as_u64().unwrap())
}

#[tokio::test]
async fn deleting_a_hallucinated_lane_fixes_topology() {
    let dir = tempfile::tempdir().unwrap();
    let app = failure_scene(dir.path(), |r, lanes| {
        for l in lanes {
            paint(r, l);
        }
        paint(r, &Polyline::new(vec![Point2::new(930.0, 959.0), Point2::new(930.0, 0.0)]).unwrap());
        LaneGraph::new(lanes.to_vec())
    });
    let (base, before) = extracted_session(&app).await;
    assert_eq!(before, 1);
    let (_, v) = call(&app, Method::GET, &base, None).await;
    let ghost = v["lanes"].as_array().unwrap().len() - 1;
    let (s, _) = call(&app, Method::DELETE, &format!("{base}/lanes/{ghost}"), None).await;
    assert_eq!(s, StatusCode::OK);
    let (_, sc) = call(&app, Method::GET, &format!("{base}/score"), None).await;
    assert_eq!((sc["topology_deviation"].as_u64(), sc["clicks"].as_u64()), (Some(0), Some(1)));
}

#[tokio::test]
async fn clicking_a_missed_lane_adds_it() {
    let dir = tempfile::tempdir().unwrap();
    // The right lane has paint only in the upper half, out of reach of the
    // entry proposals.
    let app = failure_scene(dir.path(), |r, lanes| {
        paint(r, &lanes[0]);
        paint(r, &lanes[1]);
        let upper = Polyline::new(lanes[2].vertices().iter().copied().filter(|p| p.y < 500.0).collect()).unwrap();
        paint(r, &upper);
        LaneGraph::new(vec![lanes[0].clone(), lanes[1].clone(), upper])
    });
    let (base, before) = extracted_session(&app).await;
    assert_eq!(before, 1);
    let (_, gt) = call(&app, Method::GET, "/scenes/failure?reveal=true", None).await;
    let entry = &gt["ground_truth"]["lanes"][2][0];
    let (x, y) = (entry[0].as_f64().unwrap(), entry[1].as_f64().unwrap() - 20.0);
    let bin = json!([(y / 40.0) as usize, (x / 40.0) as usize]);
    let (s, v) = call(&app, Method::POST, &format!("{base}/trace"), Some(json!({ "bin": bin }))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["lanes"].as_array().unwrap().len(), 3);
    let (_, sc) = call(&app, Method::GET, &format!("{base}/score"), None).await;
    assert_eq!((sc["topology_deviation"].as_u64(), sc["clicks"].as_u64()), (Some(0), Some(1)));
}
