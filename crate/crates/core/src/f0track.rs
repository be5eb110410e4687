//! Instantaneous-frequency tracking of a signal with known target pitch.
//!
//! The signal is filtered with a complex band-pass (a six-term cosine
//! envelope times a complex exponential at the tracked harmonic), which
//! leaves a single-component analytic signal `y`. The frequency at `n` is the
//! phase advance `arg(y[n+1] conj(y[n])) * rate / 2 pi`.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{same_rate, AudioBuffer};
use crate::error::{Error, Result};
use crate::fft;
use crate::modgen::{design_window_with, SIX_TERM_COEFFICIENTS};

/// Default rejection of neighbouring harmonics, DC and the mirror image.
pub const DEFAULT_REJECTION_DB: f64 = 110.0;
/// Analytic amplitude below which a sample is marked invalid, dBFS.
pub const SILENCE_FLOOR_DBFS: f64 = -70.0;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticFilter {
    h: Vec<Complex64>,
    center: f64,
    f_target: f64,
    harmonic: u32,
    rate: f64,
    rejection_db: f64,
}

impl AnalyticFilter {
    pub fn taps(&self) -> &[Complex64] {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    /// Centre frequency in Hz (`harmonic * f_target`).
    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn f_target(&self) -> f64 {
        self.f_target
    }

    pub fn harmonic(&self) -> u32 {
        self.harmonic
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn rejection_db(&self) -> f64 {
        self.rejection_db
    }

    pub fn group_delay(&self) -> usize {
        (self.h.len() - 1) / 2
    }

    /// Magnitude response at `freq` Hz (unity at the centre).
    pub fn gain(&self, freq: f64) -> f64 {
        let om = 2.0 * PI * freq / self.rate;
        self.h
            .iter()
            .enumerate()
            .map(|(n, c)| c * Complex64::from_polar(1.0, -om * n as f64))
            .sum::<Complex64>()
            .norm()
    }

    pub fn gain_db(&self, freq: f64) -> f64 {
        20.0 * self.gain(freq).log10()
    }
}

pub fn design_analytic_filter(f_target: f64, rate: f64) -> Result<AnalyticFilter> {
    design_harmonic_filter(f_target, 1, rate, DEFAULT_REJECTION_DB)
}

/// Filter tuned to harmonic `k` of `f_target`, rejecting everything at least
/// `f_target` away from the centre by `rejection_db`. The frequency read
/// from its output is divided by `k`.
pub fn design_harmonic_filter(
    f_target: f64,
    harmonic: u32,
    rate: f64,
    rejection_db: f64,
) -> Result<AnalyticFilter> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::param(format!("sampling rate must be positive, got {rate}")));
    }
    if harmonic == 0 {
        return Err(Error::param("harmonic index must be at least 1"));
    }
    let center = f_target * harmonic as f64;
    if !(f_target.is_finite() && f_target > 0.0 && center < rate / 4.0) {
        return Err(Error::param(format!(
            "centre {center} Hz must lie in (0, rate/4 = {} Hz)",
            rate / 4.0
        )));
    }
    if !(rejection_db.is_finite() && rejection_db > 0.0) {
        return Err(Error::param("rejection must be a positive number of dB"));
    }
    let length = rejection_length(f_target / rate, rejection_db);
    let env = envelope(length);
    let gd = (length - 1) as f64 / 2.0;
    let om = 2.0 * PI * center / rate;
    let h = env
        .iter()
        .enumerate()
        .map(|(n, e)| Complex64::from_polar(*e, om * (n as f64 - gd)))
        .collect();
    Ok(AnalyticFilter { h, center, f_target, harmonic, rate, rejection_db })
}

fn envelope(length: usize) -> Vec<f64> {
    let w = design_window_with(SIX_TERM_COEFFICIENTS, length).expect("length above window minimum");
    w.unit_area()
}

/// Envelope response at normalized frequency offset `nu` (cycles/sample),
/// relative to DC.
fn envelope_response(env: &[f64], nu: f64) -> f64 {
    let c = (env.len() - 1) as f64 / 2.0;
    let om = 2.0 * PI * nu;
    env.iter().enumerate().map(|(n, e)| e * (om * (n as f64 - c)).cos()).sum::<f64>().abs()
}

/// Smallest odd length whose envelope attenuates offset `nu` by `rejection_db`.
fn rejection_length(nu: f64, rejection_db: f64) -> usize {
    let limit = 10f64.powf(-rejection_db / 20.0);
    let ok = |len: usize| envelope_response(&envelope(len), nu) <= limit;
    let mut lo = 65usize;
    if ok(lo) {
        return lo;
    }
    let mut hi = 2 * lo + 1;
    while !ok(hi) {
        lo = hi;
        hi = 2 * hi + 1;
    }
    // invariant: !ok(lo), ok(hi), both odd
    while hi - lo > 2 {
        let mid = ((lo + hi) / 2) | 1;
        let mid = if mid == hi { mid - 2 } else { mid };
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Trajectory {
    pub hz: Vec<f64>,
    pub cents: Vec<f64>,
    /// Samples inside `valid_range` with analytic amplitude above the floor.
    pub valid: Vec<bool>,
    pub f_target: f64,
    pub rate: f64,
    /// Half-open sample range clear of filter edge transients.
    pub valid_range: (usize, usize),
    pub harmonic: u32,
}

impl F0Trajectory {
    pub fn len(&self) -> usize {
        self.hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hz.is_empty()
    }

    /// Fraction of samples inside `valid_range` that are valid.
    pub fn valid_fraction(&self) -> f64 {
        let (a, b) = self.valid_range;
        if b <= a {
            return 0.0;
        }
        self.valid[a..b].iter().filter(|v| **v).count() as f64 / (b - a) as f64
    }
}

pub fn hz_to_cents(f: f64, f_ref: f64) -> Result<f64> {
    if !(f > 0.0 && f_ref > 0.0) || !f.is_finite() || !f_ref.is_finite() {
        return Err(Error::param(format!("frequencies must be positive, got {f} and {f_ref}")));
    }
    Ok(1200.0 * (f / f_ref).log2())
}

/// Complex filter output aligned to input time.
pub fn analytic_signal(signal: &AudioBuffer, filter: &AnalyticFilter) -> Result<Vec<Complex64>> {
    if !same_rate(signal.rate(), filter.rate()) {
        return Err(Error::param(format!(
            "signal rate {} Hz differs from filter design rate {} Hz",
            signal.rate(),
            filter.rate()
        )));
    }
    Ok(fft::convolve_complex_centred(signal.samples(), filter.taps(), filter.group_delay()))
}

/// Phase advance of each adjacent sample pair in Hz:
/// `arg(y[n+1] conj(y[n])) * rate / 2 pi`. One element shorter than `y`.
pub fn instantaneous_frequency(y: &[Complex64], rate: f64) -> Vec<f64> {
    y.windows(2).map(|w| (w[1] * w[0].conj()).arg() * rate / (2.0 * PI)).collect()
}

pub fn extract_f0(signal: &AudioBuffer, filter: &AnalyticFilter) -> Result<F0Trajectory> {
    let y = analytic_signal(signal, filter)?;
    let n = y.len();
    let edge = filter.len();
    if n <= 2 * edge + 1 {
        return Err(Error::param(format!(
            "signal of {n} samples is too short for a {edge}-tap analysis filter"
        )));
    }
    let rate = signal.rate();
    let k = filter.harmonic() as f64;
    let floor = 10f64.powf(SILENCE_FLOOR_DBFS / 20.0);
    let f_target = filter.f_target();
    let valid_range = (edge, n - edge);
    let mut hz = vec![f_target; n];
    let mut valid = vec![false; n];
    let inst = instantaneous_frequency(&y, rate);
    for (i, f) in inst.iter().enumerate() {
        let f = f / k;
        let loud = 2.0 * y[i].norm() >= floor && 2.0 * y[i + 1].norm() >= floor;
        if loud && f > 0.0 && f.is_finite() {
            hz[i] = f;
            valid[i] = i >= valid_range.0 && i < valid_range.1;
        }
    }
    hz[n - 1] = hz[n - 2];
    let cents = hz.iter().map(|f| 1200.0 * (f / f_target).log2()).collect();
    Ok(F0Trajectory { hz, cents, valid, f_target, rate, valid_range, harmonic: filter.harmonic() })
}
