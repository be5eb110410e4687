//! On-disk session store: one directory per session under a data root, plus
//! an append-only operation log.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use pitchprobe_core::stimsynth::CarrierSpec;
use pitchprobe_core::subjsim::SubjectModel;
use pitchprobe_core::sysresp::{AnalysisParams, ResponseEstimate};
use pitchprobe_core::StimulusConfig;
use serde::{Deserialize, Serialize};

use crate::calibration::Calibration;
use crate::capture::CaptureStatus;
use crate::error::{Error, IoContext, Result};
use crate::wav::SampleFormat;
use crate::{now_utc, write_atomic};

pub const SESSION_SCHEMA: &str = "pitchprobe.session/1";
pub const ANALYSIS_SCHEMA: &str = "pitchprobe.analysis/1";
pub const OPLOG_SCHEMA: &str = "pitchprobe.oplog/1";

pub const STIMULUS_FILE: &str = "stimulus.wav";
pub const SIDECAR_FILE: &str = "stimulus.json";
pub const RECORDING_FILE: &str = "recording.wav";
pub const ANALYSIS_FILE: &str = "analysis.json";
const RECORD_FILE: &str = "session.json";
const OPLOG_FILE: &str = "oplog.jsonl";
const CALIBRATION_FILE: &str = "calibration.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionMode {
    Live,
    Simulated,
    Loopback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    /// Stimulus written, nothing captured yet.
    Created,
    /// Capture window open.
    Capturing,
    Recorded,
    Analyzed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub f_target: f64,
    pub carrier: CarrierSpec,
    pub seeds: [u64; 3],
    pub t_r: usize,
    pub duration: f64,
    pub rate: f64,
    pub mode: SessionMode,
}

impl Condition {
    pub fn from_config(config: &StimulusConfig, mode: SessionMode) -> Self {
        Self {
            f_target: config.carrier.f_target,
            carrier: config.carrier.clone(),
            seeds: config.seeds,
            t_r: config.t_r,
            duration: config.total_duration,
            rate: config.rate,
            mode,
        }
    }

    /// One-line summary for display.
    pub fn summary(&self) -> String {
        let h = &self.carrier.harmonics;
        let comps = match (h.first(), h.last()) {
            (Some(a), Some(b)) if (*b - *a) as usize + 1 == h.len() && h.len() > 1 => format!("{a}-{b}"),
            _ => h.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
        };
        format!(
            "{:.1} Hz, harmonics {comps} {:?} phase, seeds {:?}, t_r {}, {:.1} s, {:?}",
            self.f_target, self.carrier.phase_mode, self.seeds, self.t_r, self.duration, self.mode
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionFiles {
    pub stimulus: String,
    pub sidecar: String,
    pub recording: Option<String>,
    pub analysis: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema: String,
    pub id: String,
    pub created_at: String,
    pub updated_at: String,
    pub title: String,
    pub condition: Condition,
    pub config: StimulusConfig,
    pub format: SampleFormat,
    pub files: SessionFiles,
    pub status: SessionStatus,
    pub capture: Option<CaptureStatus>,
    /// Model used to fill a simulated capture.
    pub subject: Option<SubjectModel>,
    pub subject_seed: Option<u64>,
    /// Channel delay used to fill a loopback capture, seconds.
    pub loopback_delay_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDocument {
    pub schema: String,
    pub session_id: String,
    pub created_at: String,
    pub stimulus_sha256: String,
    pub recording_sha256: String,
    pub params: AnalysisParams,
    pub estimate: ResponseEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OplogEntry {
    pub schema: String,
    pub timestamp: String,
    pub operation: String,
    pub session_id: String,
    /// SHA-256 of the canonical JSON of the operation's parameters.
    pub parameter_digest: String,
    pub file: String,
    /// SHA-256 of the file written.
    pub content_hash: String,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    log_lock: Mutex<()>,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let sessions = root.join("sessions");
        std::fs::create_dir_all(&sessions).at(&sessions)?;
        Ok(Self { root, log_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf> {
        if !valid_id(id) {
            return Err(Error::Invalid(format!("bad session id {id:?}")));
        }
        Ok(self.root.join("sessions").join(id))
    }

    pub fn session_file(&self, id: &str, name: &str) -> Result<PathBuf> {
        Ok(self.session_dir(id)?.join(name))
    }

    pub fn create_dir(&self, id: &str) -> Result<PathBuf> {
        let dir = self.session_dir(id)?;
        std::fs::create_dir(&dir).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Conflict(format!("session {id} already exists"))
            } else {
                Error::io(&dir, e)
            }
        })?;
        Ok(dir)
    }

    pub fn write_record(&self, record: &SessionRecord) -> Result<()> {
        let path = self.session_file(&record.id, RECORD_FILE)?;
        write_atomic(&path, serde_json::to_string_pretty(record)?.as_bytes())
    }

    pub fn read_record(&self, id: &str) -> Result<SessionRecord> {
        let path = self.session_file(id, RECORD_FILE)?;
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(format!("session {id}")))
            }
            Err(e) => return Err(Error::io(path, e)),
        };
        Ok(serde_json::from_str(&text)?)
    }

    pub fn list_records(&self) -> Result<Vec<SessionRecord>> {
        let dir = self.root.join("sessions");
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&dir).at(&dir)? {
            let entry = entry.at(&dir)?;
            let Some(id) = entry.file_name().to_str().map(str::to_owned) else { continue };
            if valid_id(&id) && entry.path().join(RECORD_FILE).exists() {
                out.push(self.read_record(&id)?);
            }
        }
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then(a.id.cmp(&b.id)));
        Ok(out)
    }

    pub fn read_analysis(&self, id: &str) -> Result<AnalysisDocument> {
        let path = self.session_file(id, ANALYSIS_FILE)?;
        match std::fs::read_to_string(&path) {
            Ok(t) => Ok(serde_json::from_str(&t)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::NotFound(format!("analysis for session {id}")))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn log_path(&self) -> PathBuf {
        self.root.join(OPLOG_FILE)
    }

    /// Appends one line to the operation log.
    pub fn append_log(&self, operation: &str, session_id: &str, params_json: &str, file: &str, content: &[u8]) -> Result<OplogEntry> {
        let entry = OplogEntry {
            schema: OPLOG_SCHEMA.into(),
            timestamp: now_utc(),
            operation: operation.into(),
            session_id: session_id.into(),
            parameter_digest: crate::sha256_hex(params_json.as_bytes()),
            file: file.into(),
            content_hash: crate::sha256_hex(content),
        };
        let mut line = serde_json::to_string(&entry)?;
        line.push('\n');
        let path = self.log_path();
        let _guard = self.log_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new().create(true).append(true).open(&path).at(&path)?;
        f.write_all(line.as_bytes()).at(&path)?;
        f.sync_data().at(&path)?;
        Ok(entry)
    }

    pub fn read_log(&self) -> Result<Vec<OplogEntry>> {
        let path = self.log_path();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(Error::io(path, e)),
        };
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }

    pub fn calibration(&self) -> Result<Calibration> {
        let path = self.root.join(CALIBRATION_FILE);
        match std::fs::read_to_string(&path) {
            Ok(t) => Ok(serde_json::from_str(&t)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Calibration::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn write_calibration(&self, cal: &Calibration) -> Result<()> {
        write_atomic(&self.root.join(CALIBRATION_FILE), serde_json::to_string_pretty(cal)?.as_bytes())
    }
}
