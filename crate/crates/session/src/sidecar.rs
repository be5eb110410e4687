//! Stimulus files: the WAV plus a JSON sidecar holding everything needed to
//! regenerate it bit for bit.

use std::path::{Path, PathBuf};

use pitchprobe_core::modgen::max_transition_rate;
use pitchprobe_core::orthoseq::{OrthogonalSet, SetDescriptor};
use pitchprobe_core::stimsynth::TestStimulus;
use pitchprobe_core::{generate_stimulus, AudioBuffer, GeneratedStimulus, StimulusConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::sha256_hex;
use crate::wav::{self, SampleFormat};

pub const STIMULUS_SCHEMA: &str = "pitchprobe.stimulus/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavInfo {
    /// File name relative to the sidecar.
    pub file: String,
    pub format: SampleFormat,
    pub rate: u32,
    pub frames: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: String,
    pub generator: String,
    pub config: StimulusConfig,
    pub wav: WavInfo,
    pub set: SetDescriptor,
    /// Largest modulation slope, cents per second.
    pub max_transition_rate: f64,
}

/// A stimulus rendered to WAV bytes.
pub struct Rendered {
    pub generated: GeneratedStimulus,
    pub bytes: Vec<u8>,
    pub sidecar: Sidecar,
}

fn integer_rate(rate: f64) -> Result<u32> {
    if rate.fract() != 0.0 || !(1.0..=u32::MAX as f64).contains(&rate) {
        return Err(Error::Invalid(format!("sampling rate {rate} is not a positive integer")));
    }
    Ok(rate as u32)
}

/// Generates the stimulus for `config` and encodes it.
pub fn render(config: &StimulusConfig, format: SampleFormat, file: &str) -> Result<Rendered> {
    let rate = integer_rate(config.rate)?;
    let generated = generate_stimulus(config)?;
    let bytes = wav::encode_mono(generated.stimulus.audio.samples(), rate, format)?;
    let sidecar = Sidecar {
        schema: STIMULUS_SCHEMA.into(),
        generator: format!("pitchprobe {}", env!("CARGO_PKG_VERSION")),
        config: config.clone(),
        wav: WavInfo {
            file: file.into(),
            format,
            rate,
            frames: generated.stimulus.audio.len(),
            sha256: sha256_hex(&bytes),
        },
        set: generated.set.descriptor(config.tsp),
        max_transition_rate: max_transition_rate(&generated.stimulus.modulation),
    };
    Ok(Rendered { generated, bytes, sidecar })
}

impl Sidecar {
    pub fn parse(text: &str) -> Result<Sidecar> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema").and_then(|s| s.as_str()) {
            Some(STIMULUS_SCHEMA) => {}
            Some(other) => return Err(Error::Sidecar(format!("unsupported schema {other:?}"))),
            None => return Err(Error::Sidecar("missing schema field".into())),
        }
        let sidecar: Sidecar = serde_json::from_value(value)?;
        if sidecar.wav.sha256.len() != 64 || !sidecar.wav.sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::Sidecar("wav.sha256 is not a SHA-256 hex digest".into()));
        }
        if sidecar.set.seeds != sidecar.config.seeds || sidecar.set.t_r != sidecar.config.t_r {
            return Err(Error::Sidecar("set descriptor disagrees with the configuration".into()));
        }
        Ok(sidecar)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    /// Rebuilds the stimulus and checks it against the recorded digest.
    pub fn regenerate(&self) -> Result<Rendered> {
        let r = render(&self.config, self.wav.format, &self.wav.file)?;
        if r.sidecar.wav.sha256 != self.wav.sha256 {
            return Err(Error::Sidecar(format!(
                "regenerated audio has digest {}, sidecar records {}",
                r.sidecar.wav.sha256, self.wav.sha256
            )));
        }
        Ok(r)
    }
}

pub fn sidecar_path(wav_path: &Path) -> PathBuf {
    wav_path.with_extension("json")
}

/// Writes `<wav_path>` and its sidecar.
pub fn write_stimulus(wav_path: &Path, config: &StimulusConfig, format: SampleFormat) -> Result<Rendered> {
    let file = wav_path
        .file_name()
        .and_then(|f| f.to_str())
        .ok_or_else(|| Error::Invalid(format!("{} has no usable file name", wav_path.display())))?;
    let r = render(config, format, file)?;
    if let Some(dir) = wav_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).at(dir)?;
    }
    crate::write_atomic(wav_path, &r.bytes)?;
    let side = sidecar_path(wav_path);
    crate::write_atomic(&side, r.sidecar.to_json().as_bytes())?;
    Ok(r)
}

/// A stimulus file with its regenerated analysis context.
pub struct LoadedStimulus {
    pub sidecar: Sidecar,
    /// Audio as stored in the file, with modulation and set metadata from
    /// regeneration.
    pub stimulus: TestStimulus,
    pub set: OrthogonalSet,
}

pub fn read_sidecar(wav_path: &Path) -> Result<Sidecar> {
    let side = sidecar_path(wav_path);
    let text = match std::fs::read_to_string(&side) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::Sidecar(format!(
                "{} is missing; the stimulus cannot be analyzed without its generation metadata \
                 (regenerate it with `pitchprobe generate`)",
                side.display()
            )))
        }
        Err(e) => return Err(Error::io(side, e)),
    };
    Sidecar::parse(&text)
}

/// Loads a stimulus WAV, verifying it against its sidecar.
pub fn load_stimulus(wav_path: &Path) -> Result<LoadedStimulus> {
    let sidecar = read_sidecar(wav_path)?;
    let bytes = std::fs::read(wav_path).at(wav_path)?;
    let digest = sha256_hex(&bytes);
    if digest != sidecar.wav.sha256 {
        return Err(Error::Sidecar(format!(
            "{} has digest {digest}, its sidecar records {}",
            wav_path.display(),
            sidecar.wav.sha256
        )));
    }
    let r = sidecar.regenerate()?;
    let data = wav::decode(&bytes)?;
    let audio = AudioBuffer::new(data.mono(), data.rate as f64)?;
    let mut stimulus = r.generated.stimulus;
    stimulus.audio = audio;
    Ok(LoadedStimulus { sidecar, stimulus, set: r.generated.set })
}
