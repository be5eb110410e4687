#![allow(dead_code)]

use std::sync::OnceLock;

use pitchprobe_core::{generate_stimulus, GeneratedStimulus, StimulusConfig};

pub const RATE: f64 = 44100.0;
pub const F_TARGET: f64 = 130.0;

pub fn default_stimulus() -> &'static GeneratedStimulus {
    static CELL: OnceLock<GeneratedStimulus> = OnceLock::new();
    CELL.get_or_init(|| generate_stimulus(&StimulusConfig::default()).expect("default stimulus"))
}

pub fn sine_stimulus() -> &'static GeneratedStimulus {
    static CELL: OnceLock<GeneratedStimulus> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut cfg = StimulusConfig::default();
        cfg.carrier.harmonics = vec![1];
        generate_stimulus(&cfg).expect("sine stimulus")
    })
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

pub fn rms_diff(a: &[f64], b: &[f64]) -> f64 {
    (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

/// Direct (non-FFT) DFT magnitude at frequency `f` of a Hann-windowed segment.
pub fn tone_level(x: &[f64], rate: f64, f: f64) -> f64 {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
        let a = 2.0 * std::f64::consts::PI * f * i as f64 / rate;
        re += w * v * a.cos();
        im -= w * v * a.sin();
    }
    (re * re + im * im).sqrt()
}

/// Closed-form critically damped second-order impulse response
/// `wn^2 t exp(-wn t)`, sampled and scaled to unit DC gain, for the subject
/// oracle.
pub fn critical_kernel(natural_hz: f64, rate: f64, len: usize) -> Vec<f64> {
    let wn = 2.0 * std::f64::consts::PI * natural_hz;
    (0..len)
        .map(|n| {
            let t = n as f64 / rate;
            wn * wn * t * (-wn * t).exp() / rate
        })
        .collect()
}

/// `gain * (kernel (*) pulse)` delayed by `latency`, circular over the pulse
/// window (the recovered projections are periodic in lag).
pub fn subject_oracle(pulse: &[f64], rate: f64, gain: f64, latency: f64, natural_hz: f64) -> Vec<f64> {
    let n = pulse.len();
    let h = critical_kernel(natural_hz, rate, n);
    let shift = (latency * rate).round() as usize;
    let floor = 1e-18 * h.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0; n];
    for (j, hj) in h.iter().enumerate().filter(|(_, v)| **v > floor) {
        for (i, p) in pulse.iter().enumerate() {
            out[(i + j + shift) % n] += gain * hj * p;
        }
    }
    out
}
