//! Pink-noise calibration signal and stored calibration state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use pitchprobe_core::AudioBuffer;

use crate::error::{Error, Result};
use crate::meter::rms_dbfs;

pub const CALIBRATION_SCHEMA: &str = "pitchprobe.calibration/1";
pub const PINK_LEVEL_DBFS: f64 = -20.0;
/// Lower edge of the shaped band; below it the spectrum is flat.
const LOW_EDGE_HZ: f64 = 10.0;

/// Pink noise (power falling 3 dB per octave) at [`PINK_LEVEL_DBFS`] RMS.
/// Gaussian spectrum shaped by `1/sqrt(f)` in a single FFT, so the noise is
/// exactly periodic over its length.
pub fn calibration_noise(duration: f64, rate: f64, seed: u64) -> Result<AudioBuffer> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::Invalid(format!("duration must be positive, got {duration}")));
    }
    if !(rate.is_finite() && rate > 2.0 * LOW_EDGE_HZ) {
        return Err(Error::Invalid(format!("sampling rate {rate} is too low")));
    }
    let n = (duration * rate).round().max(2.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let f = (k as f64 * rate / n as f64).max(LOW_EDGE_HZ);
        let g = 1.0 / f.sqrt();
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        spec[k] = Complex64::new(re, im) * g;
        if k != n - k {
            spec[n - k] = spec[k].conj();
        } else {
            spec[k].im = 0.0;
        }
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let mut x: Vec<f64> = spec.iter().map(|c| c.re).collect();
    let gain = 10f64.powf((PINK_LEVEL_DBFS - rms_dbfs(&x)) / 20.0);
    x.iter_mut().for_each(|v| *v *= gain);
    Ok(AudioBuffer::new(x, rate)?)
}

/// Persisted calibration results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub schema: String,
    /// Recording lag behind the stimulus clock from the last loopback
    /// session, seconds. Subtracted during analysis.
    pub clock_offset_s: f64,
    pub clock_offset_session: Option<String>,
    /// Measured input level of the pink-noise reference minus its nominal
    /// level, dB.
    pub input_offset_db: Option<f64>,
    pub updated_at: String,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            schema: CALIBRATION_SCHEMA.into(),
            clock_offset_s: 0.0,
            clock_offset_session: None,
            input_offset_db: None,
            updated_at: String::new(),
        }
    }
}
