//! Simulated phonating subject and loopback channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::fft;
use crate::modgen::population_sd;
use crate::stimsynth::{normalize_peak, render_carrier, CarrierSpec, PhaseMode, TestStimulus};

/// Rate at which drift and jitter are drawn before interpolation.
const CONTROL_RATE: f64 = 200.0;

/// Second-order low-pass response kernel with unit DC gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub natural_hz: f64,
    pub damping: f64,
}

impl Default for Kernel {
    fn default() -> Self {
        Self { natural_hz: 40.0, damping: 1.0 }
    }
}

impl Kernel {
    /// Bilinear-transform biquad, prewarped at the natural frequency:
    /// `([b0, b1, b2], [a1, a2])`.
    fn biquad(&self, rate: f64) -> ([f64; 3], [f64; 2]) {
        let wn = 2.0 * std::f64::consts::PI * self.natural_hz;
        let k = wn / (wn / (2.0 * rate)).tan();
        let a0 = k * k + 2.0 * self.damping * wn * k + wn * wn;
        let b0 = wn * wn / a0;
        let a1 = (2.0 * wn * wn - 2.0 * k * k) / a0;
        let a2 = (k * k - 2.0 * self.damping * wn * k + wn * wn) / a0;
        ([b0, 2.0 * b0, b0], [a1, a2])
    }

    pub fn apply(&self, x: &[f64], rate: f64) -> Vec<f64> {
        let ([b0, b1, b2], [a1, a2]) = self.biquad(rate);
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = b0 * x0 + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubjectModel {
    /// Response cents per heard cent; negative is compensatory.
    pub gain: f64,
    pub latency: f64,
    pub kernel: Kernel,
    pub drift_sd: f64,
    pub jitter_sd: f64,
    /// Upper band edge of the jitter, Hz.
    pub jitter_bandwidth_hz: f64,
    pub voice: CarrierSpec,
}

impl Default for SubjectModel {
    fn default() -> Self {
        Self {
            gain: -0.1,
            latency: 0.1,
            kernel: Kernel::default(),
            drift_sd: 0.0,
            jitter_sd: 0.0,
            jitter_bandwidth_hz: 20.0,
            voice: CarrierSpec::harmonic_complex(130.0, (1..=20).collect(), PhaseMode::Sine),
        }
    }
}

impl SubjectModel {
    pub fn validate(&self) -> Result<()> {
        if !self.gain.is_finite() {
            return Err(Error::param("gain must be finite"));
        }
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return Err(Error::param("latency must be non-negative"));
        }
        if !(self.kernel.damping.is_finite() && self.kernel.damping > 0.0) {
            return Err(Error::param("kernel damping must be positive"));
        }
        if !(self.kernel.natural_hz.is_finite() && self.kernel.natural_hz > 0.0) {
            return Err(Error::param("kernel natural frequency must be positive"));
        }
        if !(self.drift_sd >= 0.0 && self.jitter_sd >= 0.0) {
            return Err(Error::param("drift and jitter SD must be non-negative"));
        }
        if !(self.jitter_bandwidth_hz > 0.0 && self.jitter_bandwidth_hz < CONTROL_RATE / 2.0) {
            return Err(Error::param(format!(
                "jitter bandwidth must lie in (0, {} Hz)",
                CONTROL_RATE / 2.0
            )));
        }
        Ok(())
    }
}

/// Produced cents trajectory at audio rate.
pub fn produced_cents(stimulus: &TestStimulus, model: &SubjectModel, seed: u64) -> Result<Vec<f64>> {
    model.validate()?;
    let rate = stimulus.audio.rate();
    let heard = &stimulus.modulation.cents;
    let smoothed = model.kernel.apply(heard, rate);
    let mut out = fft::fractional_delay(&smoothed, model.latency * rate);
    out.iter_mut().for_each(|v| *v *= model.gain);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_ctrl = (heard.len() as f64 / rate * CONTROL_RATE).ceil() as usize + 2;
    if model.drift_sd > 0.0 {
        // Integrated white noise, then a one-pole low-pass at 1 Hz.
        let mut walk = 0.0;
        let steps: Vec<f64> = (0..n_ctrl)
            .map(|_| {
                let step: f64 = StandardNormal.sample(&mut rng);
                walk += step;
                walk
            })
            .collect();
        let drift = scaled(one_pole(&steps, 1.0), model.drift_sd);
        add_interpolated(&mut out, &drift, rate);
    }
    if model.jitter_sd > 0.0 {
        let white: Vec<f64> = (0..n_ctrl).map(|_| StandardNormal.sample(&mut rng)).collect();
        let jitter = scaled(one_pole(&white, model.jitter_bandwidth_hz), model.jitter_sd);
        add_interpolated(&mut out, &jitter, rate);
    }
    Ok(out)
}

pub fn simulate_subject(stimulus: &TestStimulus, model: &SubjectModel, seed: u64) -> Result<AudioBuffer> {
    let rate = stimulus.audio.rate();
    let cents = produced_cents(stimulus, model, seed)?;
    let max_cents = cents.iter().cloned().fold(f64::MIN, f64::max);
    model.voice.validate(rate, max_cents)?;
    let mut audio = render_carrier(&cents, &model.voice, rate);
    normalize_peak(&mut audio);
    AudioBuffer::new(audio, rate)
}

/// Stimulus audio delayed by `delay` seconds (fractional samples allowed).
pub fn loopback_channel(stimulus: &TestStimulus, delay: f64) -> Result<AudioBuffer> {
    if !(delay.is_finite() && delay >= 0.0) {
        return Err(Error::param(format!("delay must be non-negative, got {delay}")));
    }
    if delay == 0.0 {
        return Ok(stimulus.audio.clone());
    }
    let rate = stimulus.audio.rate();
    AudioBuffer::new(fft::fractional_delay(stimulus.audio.samples(), delay * rate), rate)
}

fn one_pole(x: &[f64], cutoff_hz: f64) -> Vec<f64> {
    let a = (-2.0 * std::f64::consts::PI * cutoff_hz / CONTROL_RATE).exp();
    let mut y = 0.0;
    x.iter()
        .map(|&v| {
            y = a * y + (1.0 - a) * v;
            y
        })
        .collect()
}

fn scaled(mut x: Vec<f64>, sd: f64) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let s = population_sd(&x);
    if s > 0.0 {
        x.iter_mut().for_each(|v| *v *= sd / s);
    }
    x
}

fn add_interpolated(out: &mut [f64], ctrl: &[f64], rate: f64) {
    for (n, o) in out.iter_mut().enumerate() {
        let pos = n as f64 / rate * CONTROL_RATE;
        let i = (pos.floor() as usize).min(ctrl.len() - 2);
        let t = pos - i as f64;
        *o += ctrl[i] * (1.0 - t) + ctrl[i + 1] * t;
    }
}
