//! Command-line and environment configuration.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use pitchprobe_core::stimsynth::{parse_harmonics, PhaseMode};
use pitchprobe_core::subjsim::SubjectModel;
use pitchprobe_core::StimulusConfig;

use crate::error::{Error, IoContext, Result};
use crate::wav::SampleFormat;

/// Environment variable naming the data root.
pub const DATA_ENV: &str = "PITCHPROBE_DATA";
pub const DEFAULT_DATA_DIR: &str = "pitchprobe-data";

pub fn data_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_owned();
    }
    std::env::var_os(DATA_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Bits {
    #[value(name = "16")]
    B16,
    #[value(name = "24")]
    B24,
    #[value(name = "32")]
    B32,
    #[value(name = "float")]
    Float,
}

impl From<Bits> for SampleFormat {
    fn from(b: Bits) -> Self {
        match b {
            Bits::B16 => SampleFormat::Pcm16,
            Bits::B24 => SampleFormat::Pcm24,
            Bits::B32 => SampleFormat::Pcm32,
            Bits::Float => SampleFormat::Float32,
        }
    }
}

/// Overrides for every stimulus configuration field. Unset flags keep the
/// value from `--config` or the defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct StimulusArgs {
    /// JSON stimulus configuration to start from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub rate: Option<f64>,
    /// Total stimulus duration, seconds.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Allocation block length, samples.
    #[arg(long)]
    pub t_r: Option<usize>,
    /// Nominal TSP duration, seconds.
    #[arg(long)]
    pub tsp_duration: Option<f64>,
    /// Three comma-separated sequence seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub tsp_stages: Option<usize>,
    #[arg(long)]
    pub tsp_bandwidth: Option<f64>,
    #[arg(long)]
    pub tsp_envelope_fraction: Option<f64>,
    #[arg(long)]
    pub tsp_rank_smoothing: Option<f64>,
    /// Modulation SD, cents.
    #[arg(long)]
    pub sd: Option<f64>,
    /// Smoothing window length, samples.
    #[arg(long)]
    pub window_length: Option<usize>,
    /// Six comma-separated window coefficients.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub window_coefficients: Option<Vec<f64>>,
    /// Carrier fundamental, Hz.
    #[arg(long)]
    pub f_target: Option<f64>,
    /// Harmonic numbers such as `1-20` or `2-20` or `1,3,5`.
    #[arg(long)]
    pub harmonics: Option<String>,
    /// Comma-separated component amplitudes.
    #[arg(long, value_delimiter = ',')]
    pub amplitudes: Option<Vec<f64>>,
    /// sine, cosine, alternating, schroeder, schroeder-up, random[:seed].
    #[arg(long)]
    pub phase: Option<String>,
    /// WAV sample format.
    #[arg(long, value_enum)]
    pub bits: Option<Bits>,
}

impl StimulusArgs {
    pub fn resolve(&self) -> Result<(StimulusConfig, SampleFormat)> {
        let mut c: StimulusConfig = match &self.config {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p).at(p)?)?,
            None => StimulusConfig::default(),
        };
        if let Some(v) = self.rate {
            c.rate = v;
        }
        if let Some(v) = self.duration {
            c.total_duration = v;
        }
        if let Some(v) = self.t_r {
            c.t_r = v;
        }
        if let Some(v) = self.tsp_duration {
            c.nominal_duration = v;
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.as_slice().try_into().map_err(|_| Error::Invalid("--seeds takes three values".into()))?;
        }
        if let Some(v) = self.tsp_stages {
            c.tsp.stage_count = v;
        }
        if let Some(v) = self.tsp_bandwidth {
            c.tsp.section_bandwidth_hz = Some(v);
        }
        if let Some(v) = self.tsp_envelope_fraction {
            c.tsp.envelope_fraction = v;
        }
        if let Some(v) = self.tsp_rank_smoothing {
            c.tsp.rank_smoothing = v;
        }
        if let Some(v) = self.sd {
            c.modulation.target_sd = v;
        }
        if let Some(v) = self.window_length {
            c.modulation.window_length = Some(v);
        }
        if let Some(v) = &self.window_coefficients {
            c.modulation.coefficients =
                v.as_slice().try_into().map_err(|_| Error::Invalid("--window-coefficients takes six values".into()))?;
        }
        if let Some(v) = self.f_target {
            c.carrier.f_target = v;
        }
        if let Some(v) = &self.harmonics {
            c.carrier.harmonics = parse_harmonics(v)?;
        }
        if let Some(v) = &self.amplitudes {
            c.carrier.amplitudes = v.clone();
        }
        if let Some(v) = &self.phase {
            c.carrier.phase_mode = PhaseMode::parse(v)?;
        }
        let format = self.bits.map(SampleFormat::from).unwrap_or(SampleFormat::Pcm24);
        Ok((c, format))
    }
}

/// Overrides for the simulated subject.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// JSON subject model to start from.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Response cents per heard cent.
    #[arg(long, allow_negative_numbers = true)]
    pub gain: Option<f64>,
    /// Response latency, seconds.
    #[arg(long)]
    pub latency: Option<f64>,
    /// Response kernel natural frequency, Hz.
    #[arg(long)]
    pub kernel_hz: Option<f64>,
    #[arg(long)]
    pub kernel_damping: Option<f64>,
    /// Random-walk drift SD, cents.
    #[arg(long)]
    pub drift_sd: Option<f64>,
    /// Band-limited jitter SD, cents.
    #[arg(long)]
    pub jitter_sd: Option<f64>,
    #[arg(long)]
    pub jitter_bandwidth: Option<f64>,
    /// Voice fundamental, Hz.
    #[arg(long)]
    pub voice_f0: Option<f64>,
    #[arg(long)]
    pub voice_harmonics: Option<String>,
}

impl ModelArgs {
    pub fn resolve(&self) -> Result<SubjectModel> {
        let mut m: SubjectModel = match &self.model {
            Some(p) => serde_json::from_str(&std::fs::read_to_string(p).at(p)?)?,
            None => SubjectModel::default(),
        };
        if let Some(v) = self.gain {
            m.gain = v;
        }
        if let Some(v) = self.latency {
            m.latency = v;
        }
        if let Some(v) = self.kernel_hz {
            m.kernel.natural_hz = v;
        }
        if let Some(v) = self.kernel_damping {
            m.kernel.damping = v;
        }
        if let Some(v) = self.drift_sd {
            m.drift_sd = v;
        }
        if let Some(v) = self.jitter_sd {
            m.jitter_sd = v;
        }
        if let Some(v) = self.jitter_bandwidth {
            m.jitter_bandwidth_hz = v;
        }
        if let Some(v) = self.voice_f0 {
            m.voice.f_target = v;
        }
        if let Some(v) = &self.voice_harmonics {
            m.voice.harmonics = parse_harmonics(v)?;
        }
        m.validate()?;
        Ok(m)
    }
}
