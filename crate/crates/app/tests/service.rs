use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use latentgrade::corpus::{generate_corpus, Split};
use latentgrade::counterfactual::CeSteps;
use latentgrade::dae::{DaeModel, ModelConfig};
use latentgrade::geometry::{signed_distance, Calibration, CalibrationMode, Probe, ProbeKind};
use latentgrade::nn::{DenoiserConfig, EncoderConfig};
use latentgrade::par::Execution;
use latentgrade_app::service::{router, AppState, ServeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tower::ServiceExt;

const D: usize = 8;

fn small_config() -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            latent_dim: D,
            channels: [4, 8, 8],
            image_size: 32,
        },
        denoiser: DenoiserConfig {
            latent_dim: D,
            base_channels: 8,
            mid_channels: 16,
            time_dim: 16,
            latent_proj_dim: 16,
            image_size: 32,
        },
        ..ModelConfig::default()
    }
}

struct Fixture {
    _dir: tempfile::TempDir,
    config: ServeConfig,
    probe: Probe,
}

/// Corpus, untrained small model and a calibrated random probe on disk.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let corpus = generate_corpus(&data, 100, 3, [0.4, 0.2, 0.2, 0.2]).unwrap();
    let model = DaeModel::new(small_config(), 5).unwrap();
    let checkpoint = dir.path().join("model.daec");
    model.save(&checkpoint).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let probe = Probe {
        kind: ProbeKind::Svm,
        n: (0..D).map(|_| rng.random_range(-1.0..1.0)).collect(),
        b: 0.05,
        cal: Some(Calibration::linear(CalibrationMode::MeansOfExtremes, 1.5, 40.0, 3.0, vec![0.0, 3.0]).unwrap()),
    };
    let probe_path = dir.path().join("probe.json");
    probe.save(&probe_path).unwrap();
    Fixture {
        config: ServeConfig {
            manifest: corpus.manifest_path(),
            checkpoint,
            probe: probe_path,
            workers: 2,
            steps: CeSteps { encode: 4, decode: 4 },
            exec: Execution::Parallel,
        },
        probe,
        _dir: dir,
    }
}

fn app(config: &ServeConfig) -> Router {
    router(Arc::new(AppState::load(config)))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<&str>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if body.is_some() {
        req = req.header(header::CONTENT_TYPE, "application/json");
    }
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let text = body.map(|b| b.to_string());
    let (status, bytes) = call(app, method, uri, text.as_deref()).await;
    (status, serde_json::from_slice(&bytes).expect("every response is JSON"))
}

fn assert_api_error(v: &Value, code: &str) {
    let obj = v.as_object().expect("error body is an object");
    assert_eq!(obj["code"], code, "{v}");
    assert!(obj["message"].is_string());
    assert!(obj.contains_key("detail"));
    assert_eq!(obj.len(), 3, "exactly one ApiError: {v}");
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[tokio::test]
async fn health_and_listing() {
    let f = fixture();
    let app = app(&f.config);
    let (s, v) = json_call(&app, "GET", "/api/health", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({"status": "ok", "model_loaded": true}));

    let (s, v) = json_call(&app, "GET", "/api/samples?split=test", None).await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 20);
    assert!(list.iter().all(|e| e["grade"].as_u64().unwrap() <= 3 && e["g"].is_number()));

    let (_, default) = json_call(&app, "GET", "/api/samples", None).await;
    assert_eq!(default, v, "split defaults to test");

    let (s, v) = json_call(&app, "GET", "/api/samples?split=nope", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_api_error(&v, "bad_request");
}

#[tokio::test]
async fn sample_lookup() {
    let f = fixture();
    let app = app(&f.config);
    let (s, v) = json_call(&app, "GET", "/api/sample/3", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["id"], 3);
    assert_eq!(v["image"]["width"], 32);
    assert_eq!(v["image"]["pixels"].as_array().unwrap().len(), 1024);

    let (s, v) = json_call(&app, "GET", "/api/sample/999999", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");

    let (s, v) = json_call(&app, "GET", "/api/sample/abc", None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_api_error(&v, "bad_request");
}

#[tokio::test]
async fn encode_by_id_and_image() {
    let f = fixture();
    let app = app(&f.config);
    let (s, by_id) = json_call(&app, "POST", "/api/encode", Some(json!({"id": 5}))).await;
    assert_eq!(s, StatusCode::OK);
    let z: Vec<f64> = serde_json::from_value(by_id["z_sem"].clone()).unwrap();
    assert_eq!(z.len(), D);
    let plane = f.probe.hyperplane().unwrap();
    let d = signed_distance(&z, &plane).unwrap();
    assert!((by_id["distance"].as_f64().unwrap() - d).abs() < 1e-12);
    let cal = f.probe.cal.as_ref().unwrap();
    assert!((by_id["score"].as_f64().unwrap() - cal.score(d)).abs() < 1e-12);

    let (_, sample) = json_call(&app, "GET", "/api/sample/5", None).await;
    let (s, by_image) = json_call(&app, "POST", "/api/encode", Some(json!({"image": sample["image"]}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(by_image, by_id);
}

#[tokio::test]
async fn encode_rejects_bad_input() {
    let f = fixture();
    let app = app(&f.config);
    let bad = [
        json!({}),
        json!({"id": 1, "image": {"width": 1, "height": 1, "pixels": [0.5]}}),
        json!({"image": {"width": 2, "height": 2, "pixels": [0.1, 0.2, 0.3]}}),
        json!({"image": {"width": 32, "height": 32, "pixels": vec![1.5; 1024]}}),
        json!({"id": "seven"}),
    ];
    for body in bad {
        let (s, v) = json_call(&app, "POST", "/api/encode", Some(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert_api_error(&v, "bad_request");
    }
    let (s, bytes) = call(&app, "POST", "/api/encode", Some("{not json")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_api_error(&serde_json::from_slice(&bytes).unwrap(), "bad_request");

    let (s, v) = json_call(&app, "POST", "/api/encode", Some(json!({"id": 999999}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");
}

#[tokio::test]
async fn reflect_through_the_api() {
    let f = fixture();
    let app = app(&f.config);
    let body = json!({"id": 7, "mode": "reflect"});
    let (s, v) = json_call(&app, "POST", "/api/counterfactual", Some(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let d0 = v["distance_original"].as_f64().unwrap();
    let d1 = v["distance_edited"].as_f64().unwrap();
    assert!((d1 + d0).abs() <= 1e-6, "{d0} vs {d1}");
    assert_eq!(v["frames"].as_array().unwrap().len(), 1);
    assert_eq!(v["reconstruction"]["pixels"].as_array().unwrap().len(), 1024);
    assert_eq!(v["id"], 7);
}

#[tokio::test]
async fn counterfactual_is_idempotent() {
    let f = fixture();
    let app = app(&f.config);
    for body in [
        r#"{"id": 2, "mode": "target-grade", "target_grade": 2.5}"#,
        r#"{"id": 4, "mode": "sweep", "sweep_grades": [0, 1, 2, 3]}"#,
    ] {
        let (s1, a) = call(&app, "POST", "/api/counterfactual", Some(body)).await;
        let (s2, b) = call(&app, "POST", "/api/counterfactual", Some(body)).await;
        assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
        assert_eq!(a, b, "identical bodies must give identical JSON");
    }
}

#[tokio::test]
async fn target_grade_hits_its_score() {
    let f = fixture();
    let app = app(&f.config);
    let (_, v) = json_call(
        &app,
        "POST",
        "/api/counterfactual",
        Some(json!({"id": 9, "mode": "target-grade", "target_grade": 1.25})),
    )
    .await;
    assert!((v["score_edited"].as_f64().unwrap() - 1.25).abs() <= 1e-6, "{v}");
}

#[tokio::test]
async fn counterfactual_validation() {
    let f = fixture();
    let app = app(&f.config);
    let cases = [
        (json!({"id": 1, "mode": "target-grade", "target_grade": 3.5}), StatusCode::BAD_REQUEST),
        (json!({"id": 1, "mode": "target-grade"}), StatusCode::BAD_REQUEST),
        (json!({"id": 1, "mode": "sweep", "sweep_grades": [1.0]}), StatusCode::BAD_REQUEST),
        (json!({"id": 1, "mode": "sweep", "sweep_grades": vec![1.0; 17]}), StatusCode::BAD_REQUEST),
        (json!({"id": 1, "mode": "teleport"}), StatusCode::BAD_REQUEST),
        (json!({"mode": "reflect"}), StatusCode::BAD_REQUEST),
        (json!({"id": 999999, "mode": "reflect"}), StatusCode::NOT_FOUND),
    ];
    for (body, status) in cases {
        let (s, v) = json_call(&app, "POST", "/api/counterfactual", Some(body.clone())).await;
        assert_eq!(s, status, "{body}: {v}");
        assert_api_error(&v, if status == StatusCode::NOT_FOUND { "not_found" } else { "bad_request" });
    }
}

#[tokio::test]
async fn calibration_curve_and_projection() {
    let f = fixture();
    let app = app(&f.config);
    let (s, v) = json_call(&app, "GET", "/api/calibration", None).await;
    assert_eq!(s, StatusCode::OK);
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 64);
    let scores: Vec<f64> = points.iter().map(|p| p["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(v["mode"], "means-of-extremes");

    let (s, v) = json_call(&app, "GET", "/api/projection?split=test", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["points"].as_array().unwrap().len(), 20);
    assert_eq!(v["split"], "test");
    assert_eq!(v["explained_ratio"].as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn missing_model_is_not_ready() {
    let f = fixture();
    let mut config = f.config.clone();
    config.checkpoint = PathBuf::from("/nonexistent/model.daec");
    let app = app(&config);
    let (_, v) = json_call(&app, "GET", "/api/health", None).await;
    assert_eq!(v["model_loaded"], false);
    for (method, uri, body) in [
        ("POST", "/api/encode", Some(json!({"id": 1}))),
        ("POST", "/api/counterfactual", Some(json!({"id": 1, "mode": "reflect"}))),
        ("GET", "/api/calibration", None),
        ("GET", "/api/projection", None),
    ] {
        let (s, v) = json_call(&app, method, uri, body).await;
        assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE, "{uri}");
        assert_api_error(&v, "not_ready");
    }
    // The corpus still loads, so browsing works.
    let (s, _) = json_call(&app, "GET", "/api/samples", None).await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn uncalibrated_probe_is_not_ready() {
    let f = fixture();
    let mut probe = f.probe.clone();
    probe.cal = None;
    probe.save(&f.config.probe).unwrap();
    let app = app(&f.config);
    let (s, v) = json_call(&app, "POST", "/api/encode", Some(json!({"id": 1}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert_api_error(&v, "not_ready");
}

#[tokio::test]
async fn unknown_routes_and_methods() {
    let f = fixture();
    let app = app(&f.config);
    let (s, v) = json_call(&app, "GET", "/api/nothing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_api_error(&v, "not_found");
    let (s, v) = json_call(&app, "DELETE", "/api/health", None).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
    assert_api_error(&v, "bad_request");
}

#[tokio::test]
async fn cors_allows_browser_clients() {
    let f = fixture();
    let app = app(&f.config);
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/api/counterfactual")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .header(header::ACCESS_CONTROL_REQUEST_HEADERS, "content-type")
        .body(Body::empty())
        .unwrap();
    let res = app.oneshot(req).await.unwrap();
    assert!(res.status().is_success());
    assert_eq!(res.headers()[header::ACCESS_CONTROL_ALLOW_ORIGIN], "*");
}

#[tokio::test]
async fn concurrent_generation_jobs_all_complete() {
    let f = fixture();
    let mut config = f.config.clone();
    config.workers = 1;
    let app = app(&config);
    let body = r#"{"id": 3, "mode": "sweep", "sweep_grades": [0, 3]}"#;
    let jobs: Vec<_> = (0..4)
        .map(|_| {
            let app = app.clone();
            tokio::spawn(async move { call(&app, "POST", "/api/counterfactual", Some(body)).await })
        })
        .collect();
    let mut bodies = Vec::new();
    for j in jobs {
        let (s, b) = j.await.unwrap();
        assert_eq!(s, StatusCode::OK);
        bodies.push(b);
    }
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[tokio::test]
async fn fuzzing_never_touches_artifacts() {
    let f = fixture();
    let before = (sha(&f.config.checkpoint), sha(&f.config.probe), sha(&f.config.manifest));
    let app = app(&f.config);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let modes = ["reflect", "target-grade", "sweep", "bogus"];
    for i in 0..100 {
        let (s, bytes) = match i % 5 {
            0 => call(&app, "GET", &format!("/api/sample/{}", rng.random_range(0..120)), None).await,
            1 => {
                let body = json!({"id": rng.random_range(0..100u64)});
                call(&app, "POST", "/api/encode", Some(&body.to_string())).await
            }
            2 => {
                let body = json!({
                    "id": rng.random_range(0..100u64),
                    "mode": modes[rng.random_range(0..modes.len())],
                    "target_grade": rng.random_range(-1.0..4.0),
                    "sweep_grades": [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)],
                });
                call(&app, "POST", "/api/counterfactual", Some(&body.to_string())).await
            }
            3 => {
                let junk: String = (0..rng.random_range(0..20))
                    .map(|_| char::from(rng.random_range(32u8..127)))
                    .collect();
                call(&app, "POST", "/api/counterfactual", Some(&junk)).await
            }
            _ => call(&app, "GET", "/api/projection?split=calibrate", None).await,
        };
        let v: Value = serde_json::from_slice(&bytes).expect("JSON response");
        if !s.is_success() {
            assert!(s.is_client_error(), "request {i}: {s} {v}");
            assert!(v.get("code").is_some(), "request {i}: {v}");
        }
    }
    let after = (sha(&f.config.checkpoint), sha(&f.config.probe), sha(&f.config.manifest));
    assert_eq!(before, after);
}

#[test]
fn split_names_match_the_corpus() {
    for s in Split::ALL {
        assert_eq!(s.as_str().parse::<Split>().unwrap(), s);
    }
}
