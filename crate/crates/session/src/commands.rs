//! Command-line subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use pitchprobe_core::sysresp::{AnalysisParams, Latency};
use serde::Serialize;

use crate::calibration::calibration_noise;
use crate::config::{data_root, ModelArgs, StimulusArgs};
use crate::error::Result;
use crate::manager::{analyze_files, CreateRequest, SessionManager, SyntheticCapture};
use crate::sidecar::write_stimulus;
use crate::store::{SessionMode, Store};
use crate::wav::{self, SampleFormat};
use crate::write_atomic;

#[derive(Debug, Parser)]
#[command(name = "pitchprobe", version, about = "Pitch perturbation response measurement")]
pub struct Cli {
    /// Data root; defaults to ./pitchprobe-data.
    #[arg(long, global = true, env = crate::config::DATA_ENV)]
    pub data_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a stimulus WAV and its regeneration sidecar.
    Generate {
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        stimulus: StimulusArgs,
    },
    /// Analyze a recording against a stimulus that has a sidecar.
    Analyze {
        #[arg(long)]
        stimulus: PathBuf,
        #[arg(long)]
        recording: PathBuf,
        /// Output JSON; defaults to the recording path with `.analysis.json`.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Recording lag to remove, seconds; defaults to the stored
        /// loopback calibration.
        #[arg(long)]
        clock_offset: Option<f64>,
        #[arg(long)]
        recording_harmonic: Option<u32>,
        #[arg(long)]
        rejection_db: Option<f64>,
    },
    /// Run complete simulated sessions in the store.
    Simulate {
        #[command(flatten)]
        stimulus: StimulusArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Seed of the first session; later sessions count up from it.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        sessions: usize,
        /// Use a delayed loopback copy instead of the subject model.
        #[arg(long)]
        loopback_delay: Option<f64>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Write the pink calibration noise as a WAV file.
    Calibrate {
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 44100.0)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Serialize)]
struct SessionSummary {
    session_id: String,
    latency_ms: Option<f64>,
    peak_cents: Option<f64>,
    residual_level: f64,
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

pub async fn run(cli: Cli) -> Result<()> {
    let root = data_root(cli.data_dir.as_deref());
    match cli.command {
        Command::Serve { bind, port } => {
            let store = Arc::new(Store::open(&root)?);
            crate::service::serve(Arc::new(SessionManager::new(store)), &bind, port).await
        }
        other => tokio::task::spawn_blocking(move || run_blocking(&root, other))
            .await
            .unwrap_or_else(|e| std::panic::resume_unwind(e.into_panic())),
    }
}

fn run_blocking(root: &Path, command: Command) -> Result<()> {
    match command {
        Command::Generate { out, stimulus } => {
            let (config, format) = stimulus.resolve()?;
            let r = write_stimulus(&out, &config, format)?;
            tracing::info!(path = %out.display(), sha256 = %r.sidecar.wav.sha256, "stimulus written");
            print_json(&r.sidecar)
        }
        Command::Analyze { stimulus, recording, out, clock_offset, recording_harmonic, rejection_db } => {
            let store = Store::open(root)?;
            let mut params =
                AnalysisParams { clock_offset_s: store.calibration()?.clock_offset_s, ..AnalysisParams::default() };
            if let Some(v) = clock_offset {
                params.clock_offset_s = v;
            }
            if let Some(v) = rejection_db {
                params.rejection_db = v;
            }
            params.recording_harmonic = recording_harmonic;
            let id = recording.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let doc = analyze_files(&stimulus, &recording, &id, &params)?;
            let out = out.unwrap_or_else(|| recording.with_extension("analysis.json"));
            let json = serde_json::to_string_pretty(&doc)?;
            write_atomic(&out, json.as_bytes())?;
            store.append_log(
                "analyze",
                &id,
                &serde_json::to_string(&params)?,
                &out.display().to_string(),
                json.as_bytes(),
            )?;
            print_json(&summary(&id, &doc.estimate))
        }
        Command::Simulate { stimulus, model, seed, sessions, loopback_delay } => {
            let (config, format) = stimulus.resolve()?;
            let model = model.resolve()?;
            let manager = SessionManager::new(Arc::new(Store::open(root)?));
            let mut ids = Vec::new();
            let mut out = Vec::new();
            for i in 0..sessions.max(1) {
                let (mode, source) = match loopback_delay {
                    Some(delay_s) => (SessionMode::Loopback, SyntheticCapture::Loopback { delay_s }),
                    None => (
                        SessionMode::Simulated,
                        SyntheticCapture::Subject { model: model.clone(), seed: seed + i as u64 },
                    ),
                };
                let req = CreateRequest { id: None, config: config.clone(), format: Some(format), mode: Some(mode) };
                let id = manager.create(&req)?.id;
                manager.synthesize_capture(&id, &source)?;
                manager.save(&id)?;
                let doc = manager.analyze(&id, None)?;
                tracing::info!(session = %id, "session analyzed");
                out.push(summary(&id, &doc.estimate));
                ids.push(id);
            }
            if ids.len() > 1 {
                let avg = manager.average(&ids)?;
                print_json(&serde_json::json!({
                    "sessions": out,
                    "average_latency": avg.average.latency,
                }))
            } else {
                print_json(&out[0])
            }
        }
        Command::Calibrate { out, duration, rate, seed } => {
            let noise = calibration_noise(duration, rate, seed)?;
            let bytes = wav::encode_mono(noise.samples(), rate as u32, SampleFormat::Pcm24)?;
            write_atomic(&out, &bytes)?;
            print_json(&serde_json::json!({ "file": out, "rms_dbfs": crate::meter::rms_dbfs(noise.samples()) }))
        }
        Command::Serve { .. } => unreachable!("handled by run"),
    }
}

fn summary(id: &str, est: &pitchprobe_core::sysresp::ResponseEstimate) -> SessionSummary {
    let (latency_ms, peak_cents) = match &est.latency {
        Latency::Measured { ms, extremum_cents } => (Some(*ms), Some(*extremum_cents)),
        Latency::Indeterminate { .. } => (None, None),
    };
    SessionSummary { session_id: id.to_owned(), latency_ms, peak_cents, residual_level: est.residual_level }
}
