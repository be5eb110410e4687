//! Local HTTP API under `/api/v1`.
//!
//! | method | path                                   | body / result                      |
//! |--------|----------------------------------------|------------------------------------|
//! | GET    | `/health`                              | `{"status":"ok"}`                  |
//! | GET    | `/sessions`                            | session records                    |
//! | POST   | `/sessions`                            | `CreateRequest` JSON, new record   |
//! | GET    | `/sessions/{id}`                       | record                             |
//! | GET    | `/sessions/{id}/config`                | stimulus configuration             |
//! | PUT    | `/sessions/{id}/config`                | configuration JSON, record         |
//! | GET    | `/sessions/{id}/stimulus.wav`          | stimulus audio                     |
//! | POST   | `/sessions/{id}/start`                 | opens the capture window           |
//! | POST   | `/sessions/{id}/capture`               | binary capture frames, status      |
//! | GET    | `/sessions/{id}/capture`               | capture status                     |
//! | POST   | `/sessions/{id}/simulate`              | `SyntheticCapture` JSON, status    |
//! | POST   | `/sessions/{id}/save`                  | record                             |
//! | POST   | `/sessions/{id}/analyze`               | optional `AnalysisParams` JSON     |
//! | GET    | `/sessions/{id}/analysis`              | analysis document                  |
//! | GET    | `/sessions/{id}/meter`                 | server-sent meter events at 20 Hz  |
//! | GET    | `/sessions/{id}/meter/latest`          | latest meter reading               |
//! | GET    | `/calibration`                         | stored calibration                 |
//! | GET    | `/calibration/pink-noise.wav`          | `?duration=&rate=&seed=`           |
//! | POST   | `/calibration/input`                   | binary capture frames, calibration |
//! | GET    | `/log`                                 | operation log entries              |
//! | POST   | `/average`                             | `{"session_ids":[..]}`             |
//!
//! Errors are JSON `{"error": kind, "message": text}`; a busy session or an
//! out-of-order operation answers 409.

use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use pitchprobe_core::sysresp::AnalysisParams;
use pitchprobe_core::StimulusConfig;
use serde::Deserialize;

use crate::calibration::calibration_noise;
use crate::error::{Error, Result};
use crate::manager::{CreateRequest, SessionManager, SyntheticCapture};
use crate::meter::METER_RATE_HZ;
use crate::wav::{self, SampleFormat};

pub const API_PREFIX: &str = "/api/v1";
const BODY_LIMIT: usize = 256 << 20;

type Shared = Arc<SessionManager>;

impl IntoResponse for Error {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            Error::Invalid(_) | Error::Wav(_) | Error::Frame(_) | Error::Sidecar(_) | Error::Json(_) => {
                (StatusCode::BAD_REQUEST, "invalid")
            }
            Error::Core(pitchprobe_core::Error::Parameter(_)) => (StatusCode::BAD_REQUEST, "invalid"),
            Error::Core(pitchprobe_core::Error::DataQuality(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "data_quality"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::Core(_) | Error::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(serde_json::json!({ "error": kind, "message": self.to_string() }))).into_response()
    }
}

/// Runs blocking manager work off the async executor.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f).await.unwrap_or_else(|e| std::panic::resume_unwind(e.into_panic()))
}

pub fn router(manager: Shared) -> Router {
    let api = Router::new()
        .route("/health", get(|| async { Json(serde_json::json!({ "status": "ok" })) }))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/config", get(get_config).put(put_config))
        .route("/sessions/{id}/stimulus.wav", get(get_stimulus))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/capture", post(capture).get(capture_status))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/save", post(save))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/analysis", get(get_analysis))
        .route("/sessions/{id}/meter", get(meter_stream))
        .route("/sessions/{id}/meter/latest", get(meter_latest))
        .route("/calibration", get(get_calibration))
        .route("/calibration/pink-noise.wav", get(pink_noise))
        .route("/calibration/input", post(calibrate_input))
        .route("/log", get(get_log))
        .route("/average", post(average));
    Router::new().nest(API_PREFIX, api).layer(DefaultBodyLimit::max(BODY_LIMIT)).with_state(manager)
}

pub async fn serve(manager: Shared, bind: &str, port: u16) -> Result<()> {
    let addr = format!("{bind}:{port}");
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| Error::io(&addr, e))?;
    tracing::info!(%addr, root = %manager.store().root().display(), "serving");
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr, e))
}

async fn list_sessions(State(m): State<Shared>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.list()).await?))
}

async fn create_session(State(m): State<Shared>, Json(req): Json<CreateRequest>) -> Result<impl IntoResponse> {
    let rec = blocking(move || m.create(&req)).await?;
    Ok((StatusCode::CREATED, Json(rec)))
}

async fn get_session(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.get(&id)).await?))
}

async fn get_config(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.get(&id)).await?.config))
}

async fn put_config(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(config): Json<StimulusConfig>,
) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.update_config(&id, &config)).await?))
}

fn wav_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response()
}

async fn get_stimulus(State(m): State<Shared>, Path(id): Path<String>) -> Result<Response> {
    Ok(wav_response(blocking(move || m.stimulus_bytes(&id)).await?))
}

async fn start(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.start(&id)).await?))
}

async fn capture(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.push_frames(&id, &body)).await?))
}

async fn capture_status(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.capture_status(&id)).await?))
}

async fn simulate(
    State(m): State<Shared>,
    Path(id): Path<String>,
    Json(source): Json<SyntheticCapture>,
) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.synthesize_capture(&id, &source)).await?))
}

async fn save(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.save(&id)).await?))
}

async fn analyze(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> Result<impl IntoResponse> {
    let params: Option<AnalysisParams> =
        if body.iter().all(u8::is_ascii_whitespace) { None } else { Some(serde_json::from_slice(&body)?) };
    Ok(Json(blocking(move || m.analyze(&id, params)).await?))
}

async fn get_analysis(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.analysis(&id)).await?))
}

async fn meter_latest(State(m): State<Shared>, Path(id): Path<String>) -> Result<impl IntoResponse> {
    let reading = blocking(move || {
        m.get(&id)?;
        Ok(m.meter(&id))
    })
    .await?;
    Ok(Json(reading))
}

async fn meter_stream(
    State(m): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = std::result::Result<Event, std::convert::Infallible>>>> {
    let check = m.clone();
    let check_id = id.clone();
    blocking(move || check.get(&check_id).map(drop)).await?;
    let mut tick = tokio::time::interval(Duration::from_secs_f64(1.0 / METER_RATE_HZ));
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let stream = futures::stream::unfold((m, id, tick), |(m, id, mut tick)| async move {
        loop {
            tick.tick().await;
            if let Some(r) = m.meter(&id) {
                let ev = Event::default().event("meter").json_data(r).expect("meter reading serializes");
                return Some((Ok(ev), (m, id, tick)));
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn get_calibration(State(m): State<Shared>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.store().calibration()).await?))
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct PinkQuery {
    duration: f64,
    rate: f64,
    seed: u64,
}

impl Default for PinkQuery {
    fn default() -> Self {
        Self { duration: 10.0, rate: 44100.0, seed: 0 }
    }
}

async fn pink_noise(Query(q): Query<PinkQuery>) -> Result<Response> {
    if !(q.duration <= 600.0 && q.rate <= 384_000.0 && q.rate.fract() == 0.0) {
        return Err(Error::Invalid("duration must be at most 600 s and rate an integer up to 384 kHz".into()));
    }
    let bytes = blocking(move || {
        let noise = calibration_noise(q.duration, q.rate, q.seed)?;
        wav::encode_mono(noise.samples(), q.rate as u32, SampleFormat::Pcm24)
    })
    .await?;
    Ok(wav_response(bytes))
}

async fn calibrate_input(State(m): State<Shared>, body: Bytes) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.calibrate_input(&body)).await?))
}

async fn get_log(State(m): State<Shared>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.store().read_log()).await?))
}

#[derive(Debug, Deserialize)]
struct AverageRequest {
    session_ids: Vec<String>,
}

async fn average(State(m): State<Shared>, Json(req): Json<AverageRequest>) -> Result<impl IntoResponse> {
    Ok(Json(blocking(move || m.average(&req.session_ids)).await?))
}
