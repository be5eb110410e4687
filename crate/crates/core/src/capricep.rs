//! Unit-TSP generator.
//!
//! A unit-TSP is an all-pass pulse: unit magnitude at every frequency, with
//! its energy spread over roughly the nominal duration. The phase is built in
//! the frequency domain:
//!
//! 1. A cascade of second-order all-pass sections with random centre
//!    frequencies and random phase polarity gives a smooth, signed
//!    group-delay profile `u(w)` (each section's delay bump is normalised to
//!    unit height before the signs are applied).
//! 2. `u` is mapped through its own smoothed distribution function and then
//!    through the raised-cosine quantile function. The resulting group delay
//!    `tau(w)` is distributed over frequency like a raised cosine in time, so
//!    the pulse's power envelope follows that shape.
//! 3. The phase is `-integral tau dw`, corrected by a sub-sample delay so the
//!    Nyquist bin is real. An inverse FFT, circular centring and truncation to
//!    the nominal support finish the pulse.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::audio::{same_rate, AudioBuffer};
use crate::error::{Error, Result};
use crate::fft;

pub const DEFAULT_STAGE_COUNT: usize = 300;

/// Allowed deviation of the magnitude response from flat, in dB.
pub const FLATNESS_LIMIT_DB: f64 = 0.1;
/// Minimum correlation of the 10 ms power envelope with a raised cosine.
pub const ENVELOPE_CORRELATION_LIMIT: f64 = 0.95;
/// Largest energy fraction allowed outside the nominal support, in dB.
pub const TAIL_LIMIT_DB: f64 = -80.0;

/// Tuning constants of the construction. The invariant checks are the
/// contract; these values are simply ones that meet them with margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TspDesign {
    pub stage_count: usize,
    /// Bandwidth of each all-pass section's group-delay bump; `None` picks
    /// [`default_section_bandwidth`].
    pub section_bandwidth_hz: Option<f64>,
    /// Fraction of the nominal duration covered by the group-delay range.
    pub envelope_fraction: f64,
    /// Kernel width (in units of the profile SD) of the smoothed rank map.
    pub rank_smoothing: f64,
}

impl Default for TspDesign {
    fn default() -> Self {
        Self {
            stage_count: DEFAULT_STAGE_COUNT,
            section_bandwidth_hz: None,
            envelope_fraction: 0.9,
            rank_smoothing: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTsp {
    samples: Vec<f64>,
    rate: f64,
    nominal_duration: f64,
    seed: u64,
    stage_count: usize,
    truncation_loss_db: f64,
}

impl UnitTsp {
    /// Unit-energy pulse samples.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn nominal_duration(&self) -> f64 {
        self.nominal_duration
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stage_count(&self) -> usize {
        self.stage_count
    }

    /// Energy discarded by truncation to the nominal support, dB re total.
    pub fn truncation_loss_db(&self) -> f64 {
        self.truncation_loss_db
    }

    pub fn to_buffer(&self) -> AudioBuffer {
        AudioBuffer::new(self.samples.clone(), self.rate).expect("unit-TSP samples are finite")
    }
}

/// Geometric mean of two limits: sections must be wide compared with
/// `1 / nominal_duration` to keep the tails short, and narrow compared with
/// `rate / 2` so enough of them shape the envelope. About 700 Hz at
/// 44.1 kHz and 0.4 s.
pub fn default_section_bandwidth(nominal_duration: f64, rate: f64) -> f64 {
    (4.5 * rate / nominal_duration).sqrt()
}

pub fn nominal_length(nominal_duration: f64, rate: f64) -> usize {
    (nominal_duration * rate).round() as usize
}

pub fn generate_unit_tsp(
    seed: u64,
    nominal_duration: f64,
    rate: f64,
    stage_count: usize,
) -> Result<UnitTsp> {
    let design = TspDesign { stage_count, ..TspDesign::default() };
    generate_unit_tsp_with(seed, nominal_duration, rate, &design)
}

pub fn generate_unit_tsp_with(
    seed: u64,
    nominal_duration: f64,
    rate: f64,
    design: &TspDesign,
) -> Result<UnitTsp> {
    if !(nominal_duration.is_finite() && nominal_duration > 0.0) {
        return Err(Error::param(format!("nominal duration must be positive, got {nominal_duration}")));
    }
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::param(format!("sampling rate must be positive, got {rate}")));
    }
    if design.stage_count < 1 {
        return Err(Error::param("stage count must be at least 1"));
    }
    if !(design.envelope_fraction > 0.0 && design.envelope_fraction <= 1.0) {
        return Err(Error::param("envelope fraction must lie in (0, 1]"));
    }
    let len = nominal_length(nominal_duration, rate);
    if len < 16 {
        return Err(Error::param(format!("nominal support of {len} samples is too short")));
    }
    let lower = 2.0 / nominal_duration;
    let upper = 0.95 * rate / 2.0;
    if lower >= upper {
        return Err(Error::param("nominal duration too short for the sampling rate"));
    }

    let n_fft = fft::fft_len_for(4 * len);
    let half = n_fft / 2;
    let d_omega = 2.0 * PI / n_fft as f64;

    let bandwidth =
        design.section_bandwidth_hz.unwrap_or_else(|| default_section_bandwidth(nominal_duration, rate));
    if !(bandwidth.is_finite() && bandwidth > 0.0) {
        return Err(Error::param("section bandwidth must be positive"));
    }
    let profile = section_profile(seed, design, bandwidth, (lower, upper), rate, half);
    let ranks = smoothed_rank(&profile, design.rank_smoothing);
    let reach = design.envelope_fraction * len as f64 / 2.0;
    let delay: Vec<f64> = ranks.iter().map(|&p| reach * raised_cosine_quantile(p)).collect();

    // phase = -integral of group delay (trapezoid), then a sub-sample linear
    // term makes the Nyquist phase a multiple of pi.
    let mut phase = vec![0.0; half + 1];
    for k in 1..=half {
        phase[k] = phase[k - 1] - 0.5 * (delay[k - 1] + delay[k]) * d_omega;
    }
    let target = (phase[half] / PI).round() * PI;
    let shift = (target - phase[half]) / PI;
    for (k, p) in phase.iter_mut().enumerate() {
        *p += k as f64 * d_omega * shift;
    }

    let mut spec = vec![Complex64::new(0.0, 0.0); n_fft];
    for k in 0..=half {
        spec[k] = Complex64::from_polar(1.0, phase[k]);
    }
    spec[half] = Complex64::new(phase[half].cos(), 0.0);
    for k in 1..half {
        spec[n_fft - k] = spec[k].conj();
    }
    let impulse: Vec<f64> = fft::inverse_spectrum(spec).into_iter().map(|c| c.re).collect();

    let total: f64 = impulse.iter().map(|v| v * v).sum();
    let start = half - len / 2;
    let mut samples: Vec<f64> = (0..len).map(|i| impulse[(start + i + half) % n_fft]).collect();
    let kept: f64 = samples.iter().map(|v| v * v).sum();
    let loss = ((total - kept) / total).max(1e-300);
    let loss_db = 10.0 * loss.log10();
    let norm = kept.sqrt();
    samples.iter_mut().for_each(|v| *v /= norm);

    if loss_db >= TAIL_LIMIT_DB {
        return Err(Error::Generation(format!(
            "seed {seed}: {loss_db:.1} dB of energy outside the nominal support"
        )));
    }
    let flatness = magnitude_deviation_db(&samples, n_fft);
    if flatness >= FLATNESS_LIMIT_DB {
        return Err(Error::Generation(format!(
            "seed {seed}: magnitude deviates {flatness:.3} dB from flat"
        )));
    }
    let corr = envelope_correlation(&samples, rate);
    if corr <= ENVELOPE_CORRELATION_LIMIT {
        return Err(Error::Generation(format!(
            "seed {seed}: power envelope correlation {corr:.4} with raised cosine"
        )));
    }

    Ok(UnitTsp {
        samples,
        rate,
        nominal_duration,
        seed,
        stage_count: design.stage_count,
        truncation_loss_db: loss_db,
    })
}

/// Signed sum of unit-height all-pass group-delay bumps on bins `0..=half`.
fn section_profile(
    seed: u64,
    design: &TspDesign,
    bandwidth: f64,
    (lower, upper): (f64, f64),
    rate: f64,
    half: usize,
) -> Vec<f64> {
    let d_omega = PI / half as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radius = (1.0 - PI * bandwidth / rate).clamp(0.0, 0.999_999);
    let r2 = radius * radius;
    let bump = |omega: f64, theta: f64| {
        (1.0 - r2) / (1.0 - 2.0 * radius * (omega - theta).cos() + r2)
            + (1.0 - r2) / (1.0 - 2.0 * radius * (omega + theta).cos() + r2)
    };
    let mut profile = vec![0.0; half + 1];
    for _ in 0..design.stage_count {
        let centre = rng.random_range(lower..upper);
        let polarity = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let theta = 2.0 * PI * centre / rate;
        let scale = polarity / bump(theta, theta);
        for (k, p) in profile.iter_mut().enumerate() {
            *p += scale * bump(k as f64 * d_omega, theta);
        }
    }
    profile
}

/// Maps each value to (approximately) its rank in `[0, 1]` through a
/// logistic-kernel estimate of the distribution function. The output is as
/// smooth as the input, which keeps the pulse compact in time.
fn smoothed_rank(values: &[f64], width: f64) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 {
        return vec![0.5; values.len()];
    }
    let z: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();
    let mut sorted = z.clone();
    sorted.sort_by(f64::total_cmp);
    let stride = (sorted.len() / 4096).max(1);
    let support: Vec<f64> = sorted.iter().step_by(stride).cloned().collect();
    let (lo, hi) = (sorted[0] - 1.0, sorted[sorted.len() - 1] + 1.0);
    const GRID: usize = 2001;
    let scale = width.max(1e-6) * 3f64.sqrt() / PI;
    let step = (hi - lo) / (GRID - 1) as f64;
    let mut cdf: Vec<f64> = (0..GRID)
        .map(|i| {
            let x = lo + i as f64 * step;
            support.iter().map(|s| logistic((x - s) / scale)).sum::<f64>() / support.len() as f64
        })
        .collect();
    let (c0, c1) = (cdf[0], cdf[GRID - 1]);
    cdf.iter_mut().for_each(|c| *c = (*c - c0) / (c1 - c0));
    z.iter()
        .map(|&v| {
            let pos = ((v - lo) / step).clamp(0.0, (GRID - 1) as f64);
            let i = (pos.floor() as usize).min(GRID - 2);
            let t = pos - i as f64;
            cdf[i] * (1.0 - t) + cdf[i + 1] * t
        })
        .collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of the raised-cosine distribution function on `[-1, 1]`
/// (density `(1 + cos(pi x)) / 2`), by bisection.
pub(crate) fn raised_cosine_quantile(p: f64) -> f64 {
    let p = p.clamp(0.0, 1.0);
    let (mut a, mut b) = (-1.0f64, 1.0f64);
    for _ in 0..60 {
        let x = 0.5 * (a + b);
        let cdf = 0.5 * (x + 1.0 + (PI * x).sin() / PI);
        if cdf < p {
            a = x;
        } else {
            b = x;
        }
    }
    0.5 * (a + b)
}

/// Max deviation of the magnitude spectrum from its mean, in dB, over the
/// bins strictly between DC and Nyquist.
pub fn magnitude_deviation_db(samples: &[f64], fft_len: usize) -> f64 {
    let n = fft::fft_len_for(fft_len.max(samples.len()));
    let spec = fft::spectrum(samples, n);
    let mags: Vec<f64> = spec[1..n / 2].iter().map(|c| c.norm()).collect();
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    let ref_db = 20.0 * mean.log10();
    mags.iter().map(|m| (20.0 * m.log10() - ref_db).abs()).fold(0.0, f64::max)
}

/// Pearson correlation between the 10 ms-smoothed power envelope and a
/// raised cosine spanning the buffer.
pub fn envelope_correlation(samples: &[f64], rate: f64) -> f64 {
    let n = samples.len();
    let frame = ((0.01 * rate).round() as usize).max(1);
    let power: Vec<f64> = samples.iter().map(|v| v * v).collect();
    let env = centred_moving_sum(&power, frame);
    let profile: Vec<f64> = (0..n)
        .map(|i| 0.5 * (1.0 + (2.0 * PI * (i as f64 - n as f64 / 2.0) / n as f64).cos()))
        .collect();
    pearson(&env, &profile)
}

fn centred_moving_sum(x: &[f64], width: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    let back = (width - 1) / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + width - back).min(x.len());
            prefix[hi] - prefix[lo]
        })
        .collect()
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len()) as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Correlates `signal` with `tsp`, i.e. convolves with its time reversal,
/// so an occurrence of the pulse starting at sample `d` compresses to an
/// impulse at `d`. Output has the signal's length.
pub fn matched_filter(signal: &AudioBuffer, tsp: &UnitTsp) -> Result<AudioBuffer> {
    if !same_rate(signal.rate(), tsp.rate()) {
        return Err(Error::param(format!(
            "signal rate {} Hz differs from unit-TSP rate {} Hz",
            signal.rate(),
            tsp.rate()
        )));
    }
    let out = fft::correlate(signal.samples(), tsp.samples());
    AudioBuffer::new(out, signal.rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_inverts_distribution() {
        for &x in &[-0.9, -0.5, 0.0, 0.3, 0.77] {
            let p = 0.5 * (x + 1.0 + (PI * x).sin() / PI);
            assert!((raised_cosine_quantile(p) - x).abs() < 1e-12);
        }
        assert!(raised_cosine_quantile(0.5).abs() < 1e-15);
    }

    #[test]
    fn parameter_errors() {
        assert!(matches!(generate_unit_tsp(1, 0.0, 44100.0, 10), Err(Error::Parameter(_))));
        assert!(matches!(generate_unit_tsp(1, 0.4, -1.0, 10), Err(Error::Parameter(_))));
        assert!(matches!(generate_unit_tsp(1, 0.4, 44100.0, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn rejected_design_reports_generation_error() {
        // A profile with a single very narrow section cannot spread energy
        // into a raised-cosine envelope.
        let design = TspDesign { stage_count: 1, section_bandwidth_hz: Some(5.0), ..TspDesign::default() };
        assert!(matches!(
            generate_unit_tsp_with(1, 0.4, 44100.0, &design),
            Err(Error::Generation(_))
        ));
    }

    #[test]
    fn short_pulse_at_low_rate() {
        let tsp = generate_unit_tsp(7, 0.1, 16000.0, DEFAULT_STAGE_COUNT).unwrap();
        assert_eq!(tsp.len(), 1600);
        let energy: f64 = tsp.samples().iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matched_filter_rate_mismatch() {
        let tsp = generate_unit_tsp(3, 0.1, 16000.0, DEFAULT_STAGE_COUNT).unwrap();
        let sig = AudioBuffer::zeros(4000, 8000.0).unwrap();
        assert!(matches!(matched_filter(&sig, &tsp), Err(Error::Parameter(_))));
    }

    #[test]
    fn matched_filter_of_silence_is_silence() {
        let tsp = generate_unit_tsp(3, 0.1, 16000.0, DEFAULT_STAGE_COUNT).unwrap();
        let sig = AudioBuffer::zeros(4000, 16000.0).unwrap();
        let out = matched_filter(&sig, &tsp).unwrap();
        assert!(out.samples().iter().all(|v| *v == 0.0));
    }
}
