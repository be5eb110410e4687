mod common;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use pitchprobe_session::capture::{encode_frame, Encoding};
use pitchprobe_session::meter::MeterReading;
use pitchprobe_session::service::router;
use pitchprobe_session::wav::decode;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, path: &str, body: Body) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(format!("/api/v1{path}"));
    let req = if method == "GET" { req } else { req.header("content-type", "application/json") };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn json_call(app: &Router, method: &str, path: &str, body: Value) -> (StatusCode, Value) {
    let body = if body.is_null() { Body::empty() } else { Body::from(body.to_string()) };
    let (s, b) = call(app, method, path, body).await;
    (s, if b.is_empty() { Value::Null } else { serde_json::from_slice(&b).unwrap() })
}

fn small_config_json() -> Value {
    serde_json::to_value(common::small_config()).unwrap()
}

async fn new_session(app: &Router, mode: &str) -> String {
    let (s, v) = json_call(app, "POST", "/sessions", json!({ "config": small_config_json(), "mode": mode })).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_owned()
}

#[tokio::test]
async fn start_save_analyze_over_http() {
    let (_dir, m) = common::manager();
    let app = router(m);
    let (s, v) = json_call(&app, "GET", "/health", Value::Null).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("ok")));

    let id = new_session(&app, "live").await;
    let (s, v) = json_call(&app, "GET", &format!("/sessions/{id}"), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "created");
    assert_eq!(v["condition"]["mode"], "live");

    let (s, cfg) = json_call(&app, "GET", &format!("/sessions/{id}/config"), Value::Null).await;
    assert_eq!((s, cfg), (StatusCode::OK, small_config_json()));

    let (s, wav) = call(&app, "GET", &format!("/sessions/{id}/stimulus.wav"), Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let stim = decode(&wav).unwrap();
    assert_eq!(stim.frames(), 96000);

    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/analyze"), Value::Null).await;
    assert_eq!(s, StatusCode::CONFLICT, "analyze before save: {v}");
    assert_eq!(v["error"], "conflict");

    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/start"), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["expected_samples"], 96000);

    let samples = stim.mono();
    let mut body = Vec::new();
    for (i, c) in samples.chunks(8000).enumerate() {
        body.extend(encode_frame(Encoding::F32, 1, (i * 8000) as u64, c));
    }
    let (s, b) = call(&app, "POST", &format!("/sessions/{id}/capture"), Body::from(body)).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&b));
    let (_, st) = json_call(&app, "GET", &format!("/sessions/{id}/capture"), Value::Null).await;
    assert_eq!(st["high_water"], 96000);
    assert_eq!(st["overrun_samples"], 0);

    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/save"), Value::Null).await;
    assert_eq!((s, v["status"].as_str()), (StatusCode::OK, Some("recorded")));
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/analyze"), Value::Null).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["schema"], "pitchprobe.analysis/1");
    let (_, rec) = json_call(&app, "GET", &format!("/sessions/{id}"), Value::Null).await;
    assert_eq!(rec["status"], "analyzed");
    let (s, a) = json_call(&app, "GET", &format!("/sessions/{id}/analysis"), Value::Null).await;
    assert_eq!((s, &a), (StatusCode::OK, &v));

    let (_, log) = json_call(&app, "GET", "/log", Value::Null).await;
    let ops: Vec<&str> = log.as_array().unwrap().iter().map(|e| e["operation"].as_str().unwrap()).collect();
    assert_eq!(ops, ["save", "analyze"]);

    let (_, list) = json_call(&app, "GET", "/sessions", Value::Null).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn simulated_session_and_average() {
    let (_dir, m) = common::manager();
    let app = router(m);
    let mut ids = Vec::new();
    for seed in [1, 2] {
        let id = new_session(&app, "simulated").await;
        let (s, v) =
            json_call(&app, "POST", &format!("/sessions/{id}/simulate"), json!({ "kind": "subject", "seed": seed }))
                .await;
        assert_eq!(s, StatusCode::OK, "{v}");
        json_call(&app, "POST", &format!("/sessions/{id}/save"), Value::Null).await;
        let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/analyze"), json!({ "settle_s": 0.25 })).await;
        assert_eq!(s, StatusCode::OK);
        ids.push(id);
    }
    let (s, v) = json_call(&app, "POST", "/average", json!({ "session_ids": ids })).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["average"]["n_sessions"], 2);
    assert_eq!(v["average"]["latency"]["status"], "measured");
}

#[tokio::test]
async fn meter_stream_reports_sine_level() {
    let (_dir, m) = common::manager();
    let app = router(m);
    let id = new_session(&app, "live").await;
    json_call(&app, "POST", &format!("/sessions/{id}/start"), Value::Null).await;
    let x = common::sine(1000.0, 0.1 * 2f64.sqrt(), 16000.0, 8000);
    call(&app, "POST", &format!("/sessions/{id}/capture"), Body::from(encode_frame(Encoding::S16, 1, 0, &x))).await;

    let (s, v) = json_call(&app, "GET", &format!("/sessions/{id}/meter/latest"), Value::Null).await;
    assert_eq!(s, StatusCode::OK);
    let latest: MeterReading = serde_json::from_value(v).unwrap();
    assert!((latest.rms_dbfs + 20.0).abs() < 0.5);

    let req = Request::get(format!("/api/v1/sessions/{id}/meter")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "text/event-stream");
    let mut body = resp.into_body();
    let mut text = String::new();
    let mut events = Vec::new();
    let started = std::time::Instant::now();
    while events.len() < 3 {
        let frame = body.frame().await.unwrap().unwrap();
        if let Ok(d) = frame.into_data() {
            text.push_str(std::str::from_utf8(&d).unwrap());
        }
        while let Some(end) = text.find("\n\n") {
            let ev: String = text.drain(..end + 2).collect();
            if let Some(data) = ev.lines().find_map(|l| l.strip_prefix("data: ")) {
                events.push(serde_json::from_str::<MeterReading>(data).unwrap());
            }
        }
    }
    let rate = events.len() as f64 / started.elapsed().as_secs_f64();
    assert!(rate >= 10.0, "{rate} events per second");
    for e in &events {
        assert!((e.rms_dbfs + 20.0).abs() < 0.5, "{}", e.rms_dbfs);
    }
}

#[tokio::test]
async fn error_statuses() {
    let (_dir, m) = common::manager();
    let app = router(m);
    let (s, _) = json_call(&app, "GET", "/sessions/missing", Value::Null).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "GET", "/sessions/bad..id", Value::Null).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let id = new_session(&app, "live").await;
    let mut bad = small_config_json();
    bad["t_r"] = json!(3);
    let (s, v) = json_call(&app, "PUT", &format!("/sessions/{id}/config"), bad).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    json_call(&app, "POST", &format!("/sessions/{id}/start"), Value::Null).await;
    let (s, _) = call(&app, "POST", &format!("/sessions/{id}/capture"), Body::from("not a frame")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let (s, _) = json_call(&app, "PUT", &format!("/sessions/{id}/config"), small_config_json()).await;
    assert_eq!(s, StatusCode::CONFLICT);

    // Silent capture saves, then fails analysis on data quality.
    let silent = encode_frame(Encoding::S16, 1, 0, &vec![0.0; 96000]);
    call(&app, "POST", &format!("/sessions/{id}/capture"), Body::from(silent)).await;
    json_call(&app, "POST", &format!("/sessions/{id}/save"), Value::Null).await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/analyze"), Value::Null).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    assert_eq!(v["error"], "data_quality");
}

#[tokio::test]
async fn calibration_endpoints() {
    let (_dir, m) = common::manager();
    let app = router(m);
    let (s, wav) = call(&app, "GET", "/calibration/pink-noise.wav?duration=1&rate=16000&seed=4", Body::empty()).await;
    assert_eq!(s, StatusCode::OK);
    let w = decode(&wav).unwrap();
    assert_eq!((w.rate, w.frames()), (16000, 16000));
    let (s, _) = call(&app, "GET", "/calibration/pink-noise.wav?duration=-1", Body::empty()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (_, cal) = json_call(&app, "GET", "/calibration", Value::Null).await;
    assert_eq!(cal["clock_offset_s"], 0.0);
    let frames = encode_frame(Encoding::F32, 1, 0, &w.mono());
    let (s, cal) = call(&app, "POST", "/calibration/input", Body::from(frames)).await;
    assert_eq!(s, StatusCode::OK);
    let cal: Value = serde_json::from_slice(&cal).unwrap();
    assert!(cal["input_offset_db"].as_f64().unwrap().abs() < 0.01);
}
