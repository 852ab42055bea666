use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use http_body_util::BodyExt;
use ndarray::Array2;
use serde_json::{json, Value};
use tower::ServiceExt;

use qi2_core::analysis::{detect_outliers, select_region, DetectorConfig};
use qi2_core::dataset::{Dataset, Embedding2D};
use qi2_core::metrics::{Metric, Metrics};
use qi2_core::pipeline::{compute, ComputeOptions};
use qi2_core::synth;
use qi2_service::{router, AppState, Meta, SelectResponse, ServiceConfig, Session};

const CLASSIFICATION: Metrics = Metrics {
    input: Metric::Euclidean,
    output: Metric::Discrete,
};

fn session(ds: Dataset, k_max: usize, metrics: Metrics) -> Session {
    let opts = ComputeOptions {
        k_max,
        metrics,
        ..ComputeOptions::default()
    };
    let c = compute(&ds, &opts, None).unwrap();
    Session::new(c.results, ds, None).unwrap().with_index(c.index)
}

fn blob_app(limit: usize) -> (Router, Session, usize) {
    let (ds, planted) = synth::planted_outlier(50, 0).unwrap();
    let app = router(AppState::loaded(
        session(ds.clone(), 40, CLASSIFICATION),
        ServiceConfig {
            select_limit: limit,
            ..ServiceConfig::default()
        },
    ));
    (app, session(ds, 40, CLASSIFICATION), planted)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, v: &Value) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(v.to_string()))
        .unwrap()
}

fn parse<T: serde::de::DeserializeOwned>(body: &[u8]) -> T {
    serde_json::from_slice(body).unwrap()
}

#[tokio::test]
async fn nothing_loaded_answers_503_but_health_is_ok() {
    let app = router(AppState::empty(ServiceConfig::default()));
    for uri in ["/api/meta", "/api/shlqi2", "/api/point/0", "/api/detect/outliers"] {
        assert_eq!(send(&app, get(uri)).await.0, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
    }
    let (status, _, body) = send(&app, get("/api/health")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse::<Value>(&body), json!({"status": "ok"}));
    assert_eq!(send(&app, get("/")).await.0, StatusCode::OK);
}

#[tokio::test]
async fn meta_on_a_minimal_fixture() {
    let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let ds = Dataset::from_parts(x, y).unwrap();
    let emb = Embedding2D {
        coords: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
    };
    let base = session(ds.clone(), 3, Metrics::default());
    let s = Session::new(base.results().clone(), ds, Some(emb)).unwrap();
    let app = router(AppState::loaded(s, ServiceConfig::default()));
    let (status, _, body) = send(&app, get("/api/meta")).await;
    assert_eq!(status, StatusCode::OK);
    let m: Meta = parse(&body);
    assert_eq!((m.n, m.k_max, m.bins), (4, 3, 100));
    assert!(m.has_embedding && !m.has_labels);
    let (_, _, body) = send(&app, get("/api/point/2")).await;
    let p: Value = parse(&body);
    assert_eq!(p["embedding_xy"], json!([0.0, 1.0]));
    assert!(p.get("input_preview").is_none());
    assert_eq!(p["input_values"], json!([2.0]));
    assert_eq!(p["output_values"], json!([0.0]));
}

#[tokio::test]
async fn grid_round_trips_in_both_encodings() {
    let (app, s, _) = blob_app(1000);
    let grid = &s.results().grid;
    let (status, headers, raw) = send(&app, get("/api/shlqi2")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(headers[header::CONTENT_TYPE], "application/octet-stream");
    assert_eq!(headers["x-grid-rows"], grid.bins().to_string().as_str());
    let expected: Vec<u8> = grid.grid.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(raw, expected);

    let req = Request::get("/api/shlqi2").header(header::ACCEPT, "application/json").body(Body::empty()).unwrap();
    let (_, _, body) = send(&app, req).await;
    let v: Value = parse(&body);
    assert_eq!(B64.decode(v["data"].as_str().unwrap()).unwrap(), expected);
    assert_eq!((v["rows"].as_u64(), v["cols"].as_u64()), (Some(grid.bins() as u64), Some(40)));

    let (_, _, window) = send(&app, get("/api/shlqi2?k_min=3&k_max=4&bin_lo=1&bin_hi=1")).await;
    let want: Vec<u8> = [grid.value(1, 3), grid.value(1, 4)].iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(window, want);

    let req = Request::get("/api/shlqi2").header(header::ACCEPT, "text/html").body(Body::empty()).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::NOT_ACCEPTABLE);
    assert_eq!(send(&app, get("/api/shlqi2?k_max=41")).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, get("/api/shlqi2?nope=1")).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn regamma_query_matches_elementwise_power() {
    let (app, s, _) = blob_app(1000);
    let (_, _, raw) = send(&app, get("/api/shlqi2?gamma=1.0")).await;
    let lin: Vec<f64> = raw.chunks(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    for (a, b) in lin.iter().zip(&s.results().grid.grid) {
        assert!((a.powf(0.5) - b).abs() < 1e-12);
    }
}

#[tokio::test]
async fn select_matches_the_in_process_region() {
    let (app, s, planted) = blob_app(1000);
    let m = &s.results().matrix;
    let (status, _, body) = send(&app, post_json("/api/select", &json!({"k_min": 1, "k_max": 40, "v_min": 0.0}))).await;
    assert_eq!(status, StatusCode::OK);
    let r: SelectResponse = parse(&body);
    assert_eq!(r.ids, (0..m.len()).collect::<Vec<_>>());
    assert!(!r.truncated);

    let band = json!({"k_min": 5, "k_max": 25, "v_min": 10.0, "v_max": null});
    let r: SelectResponse = parse(&send(&app, post_json("/api/select", &band)).await.2);
    assert_eq!(r.ids, select_region(m, (5, 25), (10.0, f64::INFINITY)).unwrap());
    assert!(r.ids.contains(&planted));

    let inverted = json!({"k_min": 9, "k_max": 3, "v_min": 0.0, "v_max": 1.0});
    assert_eq!(send(&app, post_json("/api/select", &inverted)).await.0, StatusCode::BAD_REQUEST);
    let values = json!({"k_min": 1, "k_max": 3, "v_min": 2.0, "v_max": 1.0});
    assert_eq!(send(&app, post_json("/api/select", &values)).await.0, StatusCode::BAD_REQUEST);
    let junk = Request::post("/api/select").header(header::CONTENT_TYPE, "application/json").body(Body::from("{")).unwrap();
    assert_eq!(send(&app, junk).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn select_is_capped() {
    let (app, _, _) = blob_app(7);
    let r: SelectResponse = parse(&send(&app, post_json("/api/select", &json!({"k_min": 1, "k_max": 40, "v_min": 0.0}))).await.2);
    assert_eq!((r.ids.len(), r.count, r.truncated), (7, 101, true));
    assert_eq!(r.ids, (0..7).collect::<Vec<_>>());
}

#[tokio::test]
async fn concurrent_selections_agree() {
    let (app, _, _) = blob_app(1000);
    let band = json!({"k_min": 5, "k_max": 25, "v_min": 10.0});
    let tasks: Vec<_> = (0..32)
        .map(|_| {
            let app = app.clone();
            let band = band.clone();
            tokio::spawn(async move { send(&app, post_json("/api/select", &band)).await.2 })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        bodies.push(t.await.unwrap());
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn point_trajectory_and_missing_ids() {
    let (app, s, planted) = blob_app(1000);
    let (status, _, body) = send(&app, get(&format!("/api/point/{planted}"))).await;
    assert_eq!(status, StatusCode::OK);
    let p: Value = parse(&body);
    assert_eq!(p["label"], json!("1"));
    let traj: Vec<(usize, f64)> = serde_json::from_value(p["trajectory"].clone()).unwrap();
    assert_eq!(traj, s.results().matrix.trajectory(planted));
    for uri in ["/api/point/101", "/api/point/-1", "/api/point/x"] {
        assert_eq!(send(&app, get(uri)).await.0, StatusCode::NOT_FOUND, "{uri}");
    }
}

#[tokio::test]
async fn image_points_carry_a_thumbnail() {
    let n = 6;
    let x = Array2::from_shape_fn((n, 784), |(i, j)| ((i * 31 + j) % 256) as f64);
    let y = Array2::from_shape_fn((n, 1), |(i, _)| (i % 2) as f64);
    let ds = Dataset::from_parts(x, y).unwrap().with_image_shape(28, 28).unwrap();
    let app = router(AppState::loaded(session(ds, 3, Metrics::default()), ServiceConfig::default()));
    let p: Value = parse(&send(&app, get("/api/point/1")).await.2);
    let png = B64.decode(p["input_preview"].as_str().unwrap()).unwrap();
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (28, 28));
}

#[tokio::test]
async fn detectors_over_http() {
    let (app, s, planted) = blob_app(1000);
    let (status, _, body) = send(&app, get("/api/detect/outliers")).await;
    assert_eq!(status, StatusCode::OK);
    let r: qi2_core::analysis::DetectionReport = parse(&body);
    assert_eq!(r.ids(), vec![planted]);
    let (ds, _) = synth::planted_outlier(50, 0).unwrap();
    let idx = qi2_core::knn::build_index(&ds, Metric::Euclidean, 40).unwrap();
    let local = detect_outliers(&s.results().matrix, ds.labels(), &idx, &DetectorConfig::default()).unwrap();
    assert_eq!(r, local);

    let r: qi2_core::analysis::DetectionReport = parse(&send(&app, get("/api/detect/outliers?outlier_spike_min=1e300")).await.2);
    assert!(r.is_empty());
    let cfg = "%7B%22outlier_rise_k_range%22%3A%5B5%2C10%5D%7D";
    let r: qi2_core::analysis::DetectionReport = parse(&send(&app, get(&format!("/api/detect/outliers?config={cfg}"))).await.2);
    assert_eq!(r.config.outlier_rise_k_range, (5, 10));

    for name in ["homogeneous", "ood", "simple-subsets"] {
        assert_eq!(send(&app, get(&format!("/api/detect/{name}"))).await.0, StatusCode::OK, "{name}");
    }
    assert_eq!(send(&app, get("/api/detect/nope")).await.0, StatusCode::NOT_FOUND);
    for q in ["bogus_field=1", "ood_margin=abc", "ood_percentile=3", "config=%5B1%5D", "config=%7B"] {
        assert_eq!(send(&app, get(&format!("/api/detect/ood?{q}"))).await.0, StatusCode::BAD_REQUEST, "{q}");
    }
}

#[tokio::test]
async fn index_is_built_on_demand() {
    let (ds, planted) = synth::planted_outlier(50, 2).unwrap();
    let with = session(ds.clone(), 40, CLASSIFICATION);
    let without = Session::new(with.results().clone(), ds, None).unwrap();
    let app = router(AppState::loaded(without, ServiceConfig::default()));
    let r: qi2_core::analysis::DetectionReport = parse(&send(&app, get("/api/detect/outliers")).await.2);
    assert_eq!(r.ids(), vec![planted]);
}

#[tokio::test]
async fn mismatched_dataset_is_refused() {
    let s = session(synth::two_blobs(20, 1).unwrap(), 5, CLASSIFICATION);
    assert!(Session::new(s.results().clone(), synth::two_blobs(20, 2).unwrap(), None).is_err());
}

#[tokio::test]
async fn static_bundle_is_served_from_the_ui_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<p>bundle</p>").unwrap();
    let app = router(AppState::empty(ServiceConfig {
        ui_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    }));
    let (status, _, body) = send(&app, get("/")).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"<p>bundle</p>");
    assert_eq!(send(&app, get("/api/health")).await.0, StatusCode::OK);
}
