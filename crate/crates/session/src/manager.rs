//! Session state machine shared by the service and the CLI.
//!
//! Every mutating operation takes the session's writer lock without waiting;
//! a second writer gets [`Error::Conflict`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex, MutexGuard, TryLockError};

use pitchprobe_core::subjsim::{loopback_channel, simulate_subject, SubjectModel};
use pitchprobe_core::sysresp::{analyze_session_with, average_sessions, pulse_delay, AnalysisParams, AveragedResponse};
use pitchprobe_core::{AudioBuffer, StimulusConfig};
use serde::{Deserialize, Serialize};

use crate::capture::{decode_frames, CaptureBuffer, CaptureStatus};
use crate::error::{Error, IoContext, Result};
use crate::meter::{reading, MeterReading, METER_RATE_HZ};
use crate::sidecar::{load_stimulus, write_stimulus};
use crate::store::{
    AnalysisDocument, Condition, SessionFiles, SessionMode, SessionRecord, SessionStatus, Store, ANALYSIS_FILE,
    ANALYSIS_SCHEMA, RECORDING_FILE, SESSION_SCHEMA, SIDECAR_FILE, STIMULUS_FILE,
};
use crate::wav::{self, SampleFormat};
use crate::{now_utc, sha256_hex, write_atomic};

pub const AVERAGE_SCHEMA: &str = "pitchprobe.average/1";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateRequest {
    pub id: Option<String>,
    pub config: StimulusConfig,
    pub format: Option<SampleFormat>,
    pub mode: Option<SessionMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptureStart {
    pub session_id: String,
    pub rate: f64,
    /// Sample 0 of the capture is the first stimulus sample played.
    pub time_origin_sample: u64,
    pub expected_samples: usize,
    pub capacity_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticCapture {
    Subject {
        #[serde(default)]
        model: SubjectModel,
        #[serde(default)]
        seed: u64,
    },
    Loopback {
        #[serde(default)]
        delay_s: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedDocument {
    pub schema: String,
    pub session_ids: Vec<String>,
    pub average: AveragedResponse,
}

#[derive(Debug, Default)]
struct Slot {
    writer: Mutex<()>,
    capture: Mutex<Option<CaptureBuffer>>,
}

#[derive(Debug)]
pub struct SessionManager {
    store: Arc<Store>,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn new_id() -> String {
    let u = uuid::Uuid::new_v4().simple().to_string();
    format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S"), &u[..8])
}

impl SessionManager {
    pub fn new(store: Arc<Store>) -> Self {
        Self { store, slots: Mutex::new(HashMap::new()) }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn slot(&self, id: &str) -> Arc<Slot> {
        lock(&self.slots).entry(id.to_owned()).or_default().clone()
    }

    fn with_writer<T>(&self, id: &str, f: impl FnOnce(&Slot) -> Result<T>) -> Result<T> {
        let slot = self.slot(id);
        let _guard = match slot.writer.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => {
                return Err(Error::Conflict(format!("session {id} is being modified by another request")))
            }
            Err(TryLockError::Poisoned(e)) => e.into_inner(),
        };
        f(&slot)
    }

    pub fn create(&self, req: &CreateRequest) -> Result<SessionRecord> {
        let id = req.id.clone().unwrap_or_else(new_id);
        let format = req.format.unwrap_or(SampleFormat::Pcm24);
        let mode = req.mode.unwrap_or(SessionMode::Live);
        self.with_writer(&id, |_| {
            let dir = self.store.create_dir(&id)?;
            let result = write_stimulus(&dir.join(STIMULUS_FILE), &req.config, format);
            if let Err(e) = result {
                let _ = std::fs::remove_dir_all(&dir);
                return Err(e);
            }
            let now = now_utc();
            let condition = Condition::from_config(&req.config, mode);
            let record = SessionRecord {
                schema: SESSION_SCHEMA.into(),
                title: format!("{id}/{STIMULUS_FILE} | {}", condition.summary()),
                id: id.clone(),
                created_at: now.clone(),
                updated_at: now,
                condition,
                config: req.config.clone(),
                format,
                files: SessionFiles {
                    stimulus: STIMULUS_FILE.into(),
                    sidecar: SIDECAR_FILE.into(),
                    recording: None,
                    analysis: None,
                },
                status: SessionStatus::Created,
                capture: None,
                subject: None,
                subject_seed: None,
                loopback_delay_s: None,
            };
            self.store.write_record(&record)?;
            Ok(record)
        })
    }

    pub fn get(&self, id: &str) -> Result<SessionRecord> {
        self.store.read_record(id)
    }

    pub fn list(&self) -> Result<Vec<SessionRecord>> {
        self.store.list_records()
    }

    fn touch(&self, record: &mut SessionRecord) -> Result<()> {
        record.updated_at = now_utc();
        self.store.write_record(record)
    }

    /// Replaces the stimulus configuration; only before capture starts.
    pub fn update_config(&self, id: &str, config: &StimulusConfig) -> Result<SessionRecord> {
        self.with_writer(id, |_| {
            let mut record = self.store.read_record(id)?;
            if record.status != SessionStatus::Created {
                return Err(Error::Conflict(format!(
                    "session {id} is {:?}; its configuration is fixed once capture starts",
                    record.status
                )));
            }
            let path = self.store.session_file(id, STIMULUS_FILE)?;
            write_stimulus(&path, config, record.format)?;
            record.condition = Condition::from_config(config, record.condition.mode);
            record.title = format!("{id}/{STIMULUS_FILE} | {}", record.condition.summary());
            record.config = config.clone();
            self.touch(&mut record)?;
            Ok(record)
        })
    }

    pub fn stimulus_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let path = self.store.session_file(id, STIMULUS_FILE)?;
        match std::fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::NotFound(format!("stimulus of {id}"))),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    fn open_capture(&self, slot: &Slot, record: &mut SessionRecord) -> Result<CaptureStart> {
        match record.status {
            SessionStatus::Created | SessionStatus::Capturing => {}
            s => {
                return Err(Error::Conflict(format!("session {} is {s:?}; it already has a recording", record.id)))
            }
        }
        let rate = record.config.rate;
        let expected = (record.config.total_duration * rate).round() as usize;
        let buf = CaptureBuffer::new(rate, expected);
        let start = CaptureStart {
            session_id: record.id.clone(),
            rate,
            time_origin_sample: 0,
            expected_samples: expected,
            capacity_samples: buf.status().capacity_samples,
        };
        *lock(&slot.capture) = Some(buf);
        record.status = SessionStatus::Capturing;
        record.capture = None;
        self.touch(record)?;
        Ok(start)
    }

    /// Opens (or reopens) the capture window.
    pub fn start(&self, id: &str) -> Result<CaptureStart> {
        self.with_writer(id, |slot| {
            let mut record = self.store.read_record(id)?;
            self.open_capture(slot, &mut record)
        })
    }

    pub fn push_frames(&self, id: &str, body: &[u8]) -> Result<CaptureStatus> {
        let frames = decode_frames(body)?;
        self.with_writer(id, |slot| {
            let mut cap = lock(&slot.capture);
            let buf = cap
                .as_mut()
                .ok_or_else(|| Error::Conflict(format!("session {id} has no open capture window")))?;
            for f in &frames {
                buf.push(f);
            }
            Ok(buf.status().clone())
        })
    }

    pub fn capture_status(&self, id: &str) -> Result<Option<CaptureStatus>> {
        let slot = self.slot(id);
        let cap = lock(&slot.capture);
        match cap.as_ref() {
            Some(b) => Ok(Some(b.status().clone())),
            None => Ok(self.store.read_record(id)?.capture),
        }
    }

    /// Latest meter block of the open capture, if any.
    pub fn meter(&self, id: &str) -> Option<MeterReading> {
        let slot = self.slot(id);
        let cap = lock(&slot.capture);
        let buf = cap.as_ref()?;
        let rate = buf.status().rate;
        let block = (rate / METER_RATE_HZ).round() as usize;
        let tail = buf.tail(block);
        if tail.is_empty() {
            return None;
        }
        Some(reading(tail, buf.samples().len(), rate))
    }

    /// Fills the capture from the simulator or a delayed loopback, in place
    /// of streamed frames.
    pub fn synthesize_capture(&self, id: &str, source: &SyntheticCapture) -> Result<CaptureStatus> {
        self.with_writer(id, |slot| {
            let mut record = self.store.read_record(id)?;
            let loaded = load_stimulus(&self.store.session_file(id, STIMULUS_FILE)?)?;
            let audio = match source {
                SyntheticCapture::Subject { model, seed } => {
                    record.subject = Some(model.clone());
                    record.subject_seed = Some(*seed);
                    simulate_subject(&loaded.stimulus, model, *seed)?
                }
                SyntheticCapture::Loopback { delay_s } => {
                    record.loopback_delay_s = Some(*delay_s);
                    loopback_channel(&loaded.stimulus, *delay_s)?
                }
            };
            self.open_capture(slot, &mut record)?;
            let frame = crate::capture::Frame {
                encoding: crate::capture::Encoding::F32,
                channels: 1,
                start_sample: 0,
                samples: audio.into_samples(),
            };
            let mut cap = lock(&slot.capture);
            let buf = cap.as_mut().expect("capture just opened");
            buf.push(&frame);
            Ok(buf.status().clone())
        })
    }

    /// Writes the captured audio and logs the save.
    pub fn save(&self, id: &str) -> Result<SessionRecord> {
        self.with_writer(id, |slot| {
            let mut record = self.store.read_record(id)?;
            if record.status != SessionStatus::Capturing {
                return Err(Error::Conflict(format!("session {id} is {:?}; nothing to save", record.status)));
            }
            let mut cap = lock(&slot.capture);
            let buf = cap.as_ref().ok_or_else(|| Error::Conflict(format!("session {id} has no capture data")))?;
            if buf.samples().is_empty() {
                return Err(Error::Conflict(format!("session {id} has not received any audio")));
            }
            let status = buf.status().clone();
            let bytes = wav::encode_mono(buf.samples(), record.config.rate as u32, SampleFormat::Pcm24)?;
            let path = self.store.session_file(id, RECORDING_FILE)?;
            write_atomic(&path, &bytes)?;
            let params = serde_json::json!({
                "session_id": id,
                "samples": buf.samples().len(),
                "rate": record.config.rate,
                "format": SampleFormat::Pcm24,
            });
            self.store.append_log("save", id, &params.to_string(), RECORDING_FILE, &bytes)?;
            *cap = None;
            record.status = SessionStatus::Recorded;
            record.capture = Some(status);
            record.files.recording = Some(RECORDING_FILE.into());
            self.touch(&mut record)?;
            Ok(record)
        })
    }

    /// Analyzes a saved recording and logs the analysis. With no explicit
    /// parameters, live sessions use the stored clock offset.
    pub fn analyze(&self, id: &str, params: Option<AnalysisParams>) -> Result<AnalysisDocument> {
        self.with_writer(id, |_| {
            let mut record = self.store.read_record(id)?;
            if !matches!(record.status, SessionStatus::Recorded | SessionStatus::Analyzed) {
                return Err(Error::Conflict(format!(
                    "session {id} is {:?}; a recording must be saved before analysis",
                    record.status
                )));
            }
            let calibration = self.store.calibration()?;
            let params = params.unwrap_or_else(|| AnalysisParams {
                clock_offset_s: if record.condition.mode == SessionMode::Live { calibration.clock_offset_s } else { 0.0 },
                ..AnalysisParams::default()
            });
            let stim_path = self.store.session_file(id, STIMULUS_FILE)?;
            let rec_path = self.store.session_file(id, RECORDING_FILE)?;
            let doc = analyze_files(&stim_path, &rec_path, id, &params)?;
            let json = serde_json::to_string_pretty(&doc)?;
            write_atomic(&self.store.session_file(id, ANALYSIS_FILE)?, json.as_bytes())?;
            self.store.append_log("analyze", id, &serde_json::to_string(&params)?, ANALYSIS_FILE, json.as_bytes())?;
            if record.condition.mode == SessionMode::Loopback {
                let mut cal = calibration;
                cal.clock_offset_s = pulse_delay(&doc.estimate);
                cal.clock_offset_session = Some(id.to_owned());
                cal.updated_at = now_utc();
                self.store.write_calibration(&cal)?;
            }
            record.status = SessionStatus::Analyzed;
            record.files.analysis = Some(ANALYSIS_FILE.into());
            self.touch(&mut record)?;
            Ok(doc)
        })
    }

    pub fn analysis(&self, id: &str) -> Result<AnalysisDocument> {
        self.store.read_analysis(id)
    }

    pub fn average(&self, ids: &[String]) -> Result<AveragedDocument> {
        if ids.is_empty() {
            return Err(Error::Invalid("no sessions given".into()));
        }
        let estimates: Vec<_> = ids.iter().map(|id| self.store.read_analysis(id).map(|d| d.estimate)).collect::<Result<_>>()?;
        Ok(AveragedDocument {
            schema: AVERAGE_SCHEMA.into(),
            session_ids: ids.to_vec(),
            average: average_sessions(&estimates)?,
        })
    }

    /// Stores the input level offset from captured pink-noise frames.
    pub fn calibrate_input(&self, body: &[u8]) -> Result<crate::calibration::Calibration> {
        let frames = decode_frames(body)?;
        let samples: Vec<f64> = frames.into_iter().flat_map(|f| f.samples).collect();
        if samples.is_empty() {
            return Err(Error::Invalid("no calibration audio".into()));
        }
        let level = crate::meter::rms_dbfs(&samples);
        let mut cal = self.store.calibration()?;
        cal.input_offset_db = Some(level - crate::calibration::PINK_LEVEL_DBFS);
        cal.updated_at = now_utc();
        self.store.write_calibration(&cal)?;
        Ok(cal)
    }
}

/// Analyzes a recording against a stimulus file and its sidecar.
pub fn analyze_files(
    stimulus: &std::path::Path,
    recording: &std::path::Path,
    session_id: &str,
    params: &AnalysisParams,
) -> Result<AnalysisDocument> {
    let loaded = load_stimulus(stimulus)?;
    let rec_bytes = std::fs::read(recording).at(recording)?;
    let data = wav::decode(&rec_bytes)?;
    let audio = AudioBuffer::new(data.mono(), data.rate as f64)?;
    let f_target = loaded.stimulus.carrier.f_target;
    let mut estimate = analyze_session_with(&loaded.stimulus, &loaded.set, &audio, f_target, params)?;
    estimate.session_id = session_id.to_owned();
    Ok(AnalysisDocument {
        schema: ANALYSIS_SCHEMA.into(),
        session_id: session_id.to_owned(),
        created_at: now_utc(),
        stimulus_sha256: loaded.sidecar.wav.sha256.clone(),
        recording_sha256: sha256_hex(&rec_bytes),
        params: *params,
        estimate,
    })
}
