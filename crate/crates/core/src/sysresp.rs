//! Perturbation-pulse and voice-response recovery from a session.

use serde::{Deserialize, Serialize};

use crate::audio::{same_rate, AudioBuffer};
use crate::error::{Error, Result};
use crate::f0track::{design_harmonic_filter, extract_f0, F0Trajectory, DEFAULT_REJECTION_DB};
use crate::fft;
use crate::orthoseq::{recover_pulses_guarded, OrthogonalSet, PulseRecovery};
use crate::pipeline::rebuild_set;
use crate::stimsynth::TestStimulus;

/// Latency search window, seconds after the pulse peak.
pub const LATENCY_SEARCH_S: f64 = 0.5;
/// Response extremum must exceed this multiple of the residual level.
pub const SIGNIFICANCE_FACTOR: f64 = 3.0;
/// Largest fraction of invalid recording samples tolerated.
pub const MAX_INVALID_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisParams {
    pub rejection_db: f64,
    /// Harmonic tracked in the stimulus; `None` uses the lowest carrier
    /// component.
    pub stimulus_harmonic: Option<u32>,
    /// Harmonic tracked in the recording; `None` picks the fundamental unless
    /// it is far weaker than the second harmonic.
    pub recording_harmonic: Option<u32>,
    /// Recording lag behind the stimulus clock, removed before analysis.
    pub clock_offset_s: f64,
    /// Extra settling time excluded after the start and before the end.
    pub settle_s: f64,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        Self {
            rejection_db: DEFAULT_REJECTION_DB,
            stimulus_harmonic: None,
            recording_harmonic: None,
            clock_offset_s: 0.0,
            settle_s: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Latency {
    Measured { ms: f64, extremum_cents: f64 },
    Indeterminate { reason: String },
}

impl Latency {
    pub fn ms(&self) -> Option<f64> {
        match self {
            Latency::Measured { ms, .. } => Some(*ms),
            Latency::Indeterminate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseEstimate {
    pub session_id: String,
    pub rate: f64,
    pub t_r: usize,
    pub f_target: f64,
    pub seeds: [u64; 3],
    /// Seconds relative to the perturbation pulse centre; spans `4 * t_r`.
    pub time_axis: Vec<f64>,
    pub perturbation_pulse: Vec<f64>,
    pub response: Vec<f64>,
    /// Own-polarity response of each sequence before averaging.
    pub per_sequence_response: [Vec<f64>; 3],
    /// Random-component projection.
    pub residual: Vec<f64>,
    pub residual_level: f64,
    pub perturbation_peak_cents: f64,
    /// Largest-magnitude response value, signed.
    pub peak_cents: f64,
    pub latency: Latency,
    pub latency_ms: Option<f64>,
    pub blocks_averaged: usize,
    pub recording_valid_fraction: f64,
    pub stimulus_harmonic: u32,
    pub recording_harmonic: u32,
}

pub fn analyze_session(stimulus: &TestStimulus, recording: &AudioBuffer, f_target: f64) -> Result<ResponseEstimate> {
    let set = rebuild_set(stimulus)?;
    analyze_session_with(stimulus, &set, recording, f_target, &AnalysisParams::default())
}

pub fn analyze_session_with(
    stimulus: &TestStimulus,
    set: &OrthogonalSet,
    recording: &AudioBuffer,
    f_target: f64,
    params: &AnalysisParams,
) -> Result<ResponseEstimate> {
    let rate = stimulus.audio.rate();
    if !same_rate(rate, recording.rate()) || !same_rate(rate, set.rate) {
        return Err(Error::param(format!(
            "rates differ: stimulus {rate} Hz, recording {} Hz, set {} Hz",
            recording.rate(),
            set.rate
        )));
    }
    let len = stimulus.audio.len();
    if recording.len() < len {
        return Err(Error::param(format!(
            "recording has {} samples, stimulus needs {len}",
            recording.len()
        )));
    }
    let mut rec = recording.samples()[..len].to_vec();
    if params.clock_offset_s != 0.0 {
        rec = fft::fractional_delay(&rec, -params.clock_offset_s * rate);
    }
    let rec = AudioBuffer::new(rec, rate)?;

    let stim_k = params.stimulus_harmonic.unwrap_or_else(|| stimulus.carrier.lowest_harmonic());
    let rec_k = match params.recording_harmonic {
        Some(k) => k,
        None => pick_recording_harmonic(&rec, f_target, params.rejection_db)?,
    };
    let stim_filter = design_harmonic_filter(f_target, stim_k, rate, params.rejection_db)?;
    let rec_filter = design_harmonic_filter(f_target, rec_k, rate, params.rejection_db)?;

    let (stim_traj, rec_traj) = std::thread::scope(|s| {
        let a = s.spawn(|| extract_f0(&stimulus.audio, &stim_filter));
        let b = s.spawn(|| extract_f0(&rec, &rec_filter));
        (a.join().expect("tracker thread panicked"), b.join().expect("tracker thread panicked"))
    });
    let (stim_traj, rec_traj) = (stim_traj?, rec_traj?);
    let valid_fraction = rec_traj.valid_fraction();
    if valid_fraction < 1.0 - MAX_INVALID_FRACTION {
        return Err(Error::DataQuality(format!(
            "only {:.1}% of recording f0 samples are valid",
            100.0 * valid_fraction
        )));
    }

    let cycle = set.cycle_len();
    let guard = stim_filter.len().max(rec_filter.len())
        + stimulus.modulation.window_length
        + (params.settle_s.max(0.0) * rate).round() as usize;
    let stim_cents = AudioBuffer::new(cycle_detrended(&stim_traj, cycle), rate)?;
    let rec_cents = AudioBuffer::new(cycle_detrended(&rec_traj, cycle), rate)?;
    let stim_rec = recover_pulses_guarded(&stim_cents, set, guard)?;
    let rec_rec = recover_pulses_guarded(&rec_cents, set, guard)?;

    Ok(assemble(set, f_target, &stim_rec, &rec_rec, valid_fraction, stim_k, rec_k))
}

fn assemble(
    set: &OrthogonalSet,
    f_target: f64,
    stim: &PulseRecovery,
    rec: &PulseRecovery,
    valid_fraction: f64,
    stim_k: u32,
    rec_k: u32,
) -> ResponseEstimate {
    let perturbation_pulse = stim.mean_own();
    let response = rec.mean_own();
    let residual = rec.mean_residual();
    let residual_level = rms(&residual);
    let per_sequence_response = std::array::from_fn(|k| rec.sequences[k].own().to_vec());
    let mut est = ResponseEstimate {
        session_id: String::new(),
        rate: set.rate,
        t_r: set.t_r,
        f_target,
        seeds: set.seeds(),
        time_axis: stim.lag_axis.clone(),
        perturbation_peak_cents: signed_peak(&perturbation_pulse),
        peak_cents: signed_peak(&response),
        perturbation_pulse,
        response,
        per_sequence_response,
        residual,
        residual_level,
        latency: Latency::Indeterminate { reason: "not measured".into() },
        latency_ms: None,
        blocks_averaged: stim.blocks.len(),
        recording_valid_fraction: valid_fraction,
        stimulus_harmonic: stim_k,
        recording_harmonic: rec_k,
    };
    est.latency = measure_latency(&est);
    est.latency_ms = est.latency.ms();
    est
}

/// Tracks the fundamental unless it sits more than 40 dB below the second
/// harmonic (missing-fundamental voices or stimuli).
fn pick_recording_harmonic(rec: &AudioBuffer, f_target: f64, rejection_db: f64) -> Result<u32> {
    if 2.0 * f_target >= rec.rate() / 4.0 {
        return Ok(1);
    }
    let level = |k| -> Result<f64> {
        let f = design_harmonic_filter(f_target, k, rec.rate(), rejection_db)?;
        let y = crate::f0track::analytic_signal(rec, &f)?;
        Ok(y.iter().map(|c| c.norm_sqr()).sum::<f64>())
    };
    let (p1, p2) = (level(1)?, level(2)?);
    Ok(if p1 * 1e4 < p2 { 2 } else { 1 })
}

/// Cents inside the valid mask with each `cycle`-long segment's mean removed;
/// zero elsewhere.
pub fn cycle_detrended(traj: &F0Trajectory, cycle: usize) -> Vec<f64> {
    let mut out = vec![0.0; traj.len()];
    for start in (0..traj.len()).step_by(cycle) {
        let end = (start + cycle).min(traj.len());
        let idx: Vec<usize> = (start..end).filter(|&i| traj.valid[i]).collect();
        if idx.is_empty() {
            continue;
        }
        let mean = idx.iter().map(|&i| traj.cents[i]).sum::<f64>() / idx.len() as f64;
        for i in idx {
            out[i] = traj.cents[i] - mean;
        }
    }
    out
}

pub(crate) fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn signed_peak(x: &[f64]) -> f64 {
    x.iter().copied().fold(0.0, |m, v| if v.abs() > m.abs() { v } else { m })
}

/// Vertex of the parabola through three neighbouring samples, as an offset in
/// `[-0.5, 0.5]` and the interpolated value.
fn parabolic(y0: f64, y1: f64, y2: f64) -> (f64, f64) {
    let den = y0 - 2.0 * y1 + y2;
    if den == 0.0 {
        return (0.0, y1);
    }
    let d = (0.5 * (y0 - y2) / den).clamp(-0.5, 0.5);
    (d, y1 - 0.25 * (y0 - y2) * d)
}

fn peak_position(x: &[f64], i: usize) -> (f64, f64) {
    if i == 0 || i + 1 >= x.len() {
        return (i as f64, x[i]);
    }
    let (d, v) = parabolic(x[i - 1], x[i], x[i + 1]);
    (i as f64 + d, v)
}

/// Time of the compensatory extremum: the response extremum of sign opposite
/// to the perturbation peak, in `(0, 500 ms]` after it.
pub fn measure_latency(est: &ResponseEstimate) -> Latency {
    compensatory_latency(&est.time_axis, &est.perturbation_pulse, &est.response, est.residual_level, est.rate)
}

pub fn compensatory_latency(
    time_axis: &[f64],
    pulse: &[f64],
    response: &[f64],
    residual_level: f64,
    rate: f64,
) -> Latency {
    let n = pulse.len().min(response.len()).min(time_axis.len());
    if n < 3 {
        return Latency::Indeterminate { reason: "response too short".into() };
    }
    let ip = argmax_abs(&pulse[..n]);
    let sign = pulse[ip].signum();
    if sign == 0.0 {
        return Latency::Indeterminate { reason: "perturbation pulse is zero".into() };
    }
    let (p_pos, _) = peak_position(pulse, ip);
    let t_pulse = time_axis[0] + p_pos / rate;
    let last = (ip + (LATENCY_SEARCH_S * rate).round() as usize).min(n - 1);
    if last <= ip {
        return Latency::Indeterminate { reason: "no room after the pulse peak".into() };
    }
    let mut best = ip + 1;
    for i in ip + 1..=last {
        if -sign * response[i] > -sign * response[best] {
            best = i;
        }
    }
    let value = response[best];
    if value * sign >= 0.0 {
        return Latency::Indeterminate { reason: "no compensatory deflection".into() };
    }
    if value.abs() <= SIGNIFICANCE_FACTOR * residual_level {
        return Latency::Indeterminate {
            reason: format!(
                "extremum {:.4} cents within {SIGNIFICANCE_FACTOR} x residual level {residual_level:.4}",
                value.abs()
            ),
        };
    }
    let (pos, v) = peak_position(response, best);
    let t = time_axis[0] + pos / rate;
    Latency::Measured { ms: 1000.0 * (t - t_pulse), extremum_cents: v }
}

fn argmax_abs(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate() {
        if v.abs() > x[best].abs() {
            best = i;
        }
    }
    best
}

/// Delay of the response peak (same sign as the perturbation peak) relative
/// to the perturbation peak, seconds. Used for loopback checks.
pub fn pulse_delay(est: &ResponseEstimate) -> f64 {
    let ip = argmax_abs(&est.perturbation_pulse);
    let sign = est.perturbation_pulse[ip].signum();
    let mut ir = 0;
    for (i, v) in est.response.iter().enumerate() {
        if sign * v > sign * est.response[ir] {
            ir = i;
        }
    }
    let (a, _) = peak_position(&est.perturbation_pulse, ip);
    let (b, _) = peak_position(&est.response, ir);
    (b - a) / est.rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedResponse {
    pub per_session: Vec<ResponseEstimate>,
    pub time_axis: Vec<f64>,
    pub mean_response: Vec<f64>,
    pub random_mean: Vec<f64>,
    pub perturbation_pulse: Vec<f64>,
    pub n_sessions: usize,
    pub residual_level: f64,
    pub latency: Latency,
}

pub fn average_sessions(estimates: &[ResponseEstimate]) -> Result<AveragedResponse> {
    let first = estimates.first().ok_or_else(|| Error::param("no sessions to average"))?;
    for e in &estimates[1..] {
        if e.t_r != first.t_r
            || !same_rate(e.rate, first.rate)
            || (e.f_target - first.f_target).abs() > 1e-9 * first.f_target
            || e.response.len() != first.response.len()
        {
            return Err(Error::param(format!(
                "session {:?} differs in t_r, rate or target from session {:?}",
                e.session_id, first.session_id
            )));
        }
    }
    let n = estimates.len() as f64;
    let mean_of = |get: fn(&ResponseEstimate) -> &Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; get(first).len()];
        for e in estimates {
            for (a, v) in acc.iter_mut().zip(get(e)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    };
    let mean_response = mean_of(|e| &e.response);
    let random_mean = mean_of(|e| &e.residual);
    let perturbation_pulse = mean_of(|e| &e.perturbation_pulse);
    let residual_level = rms(&random_mean);
    let latency =
        compensatory_latency(&first.time_axis, &perturbation_pulse, &mean_response, residual_level, first.rate);
    Ok(AveragedResponse {
        per_session: estimates.to_vec(),
        time_axis: first.time_axis.clone(),
        mean_response,
        random_mean,
        perturbation_pulse,
        n_sessions: estimates.len(),
        residual_level,
        latency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn estimate(pulse: Vec<f64>, response: Vec<f64>, rate: f64) -> ResponseEstimate {
        let n = pulse.len();
        let origin = n / 2;
        ResponseEstimate {
            session_id: "t".into(),
            rate,
            t_r: n / 4,
            f_target: 130.0,
            seeds: [1, 2, 3],
            time_axis: (0..n).map(|i| (i as f64 - origin as f64) / rate).collect(),
            per_sequence_response: [response.clone(), response.clone(), response.clone()],
            residual: vec![0.0; n],
            residual_level: 0.0,
            perturbation_peak_cents: signed_peak(&pulse),
            peak_cents: signed_peak(&response),
            perturbation_pulse: pulse,
            response,
            latency: Latency::Indeterminate { reason: String::new() },
            latency_ms: None,
            blocks_averaged: 8,
            recording_valid_fraction: 1.0,
            stimulus_harmonic: 1,
            recording_harmonic: 1,
        }
    }

    fn bump(n: usize, centre: f64, width: f64) -> Vec<f64> {
        (0..n).map(|i| (-((i as f64 - centre) / width).powi(2)).exp()).collect()
    }

    #[test]
    fn negated_delayed_pulse_latency() {
        let rate = 1000.0;
        let n = 2000;
        let pulse = bump(n, 1000.0, 20.0);
        let response: Vec<f64> = bump(n, 1087.0, 20.0).iter().map(|v| -0.1 * v).collect();
        let est = estimate(pulse, response, rate);
        let ms = measure_latency(&est).ms().unwrap();
        assert!((ms - 87.0).abs() <= 1.0, "{ms}");
    }

    #[test]
    fn following_response_is_indeterminate() {
        let pulse = bump(2000, 1000.0, 20.0);
        let est = estimate(pulse.clone(), pulse, 1000.0);
        assert!(measure_latency(&est).ms().is_none());
    }

    #[test]
    fn weak_response_is_indeterminate() {
        let pulse = bump(2000, 1000.0, 20.0);
        let response: Vec<f64> = bump(2000, 1100.0, 20.0).iter().map(|v| -0.01 * v).collect();
        let mut est = estimate(pulse, response, 1000.0);
        est.residual_level = 0.01;
        assert!(matches!(measure_latency(&est), Latency::Indeterminate { .. }));
    }

    #[test]
    fn averaging_identical_copies() {
        let est = estimate(bump(400, 200.0, 9.0), bump(400, 230.0, 9.0), 1000.0);
        let avg = average_sessions(&[est.clone(), est.clone(), est.clone()]).unwrap();
        assert_eq!(avg.n_sessions, 3);
        for (a, b) in avg.mean_response.iter().zip(&est.response) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn averaging_rejects_mismatch() {
        let a = estimate(bump(400, 200.0, 9.0), bump(400, 230.0, 9.0), 1000.0);
        let mut b = a.clone();
        b.t_r += 1;
        assert!(average_sessions(&[a, b]).is_err());
        assert!(average_sessions(&[]).is_err());
    }

    #[test]
    fn parabolic_vertex() {
        // y = -(x - 0.3)^2 sampled at -1, 0, 1
        let f = |x: f64| -(x - 0.3f64).powi(2);
        let (d, v) = parabolic(f(-1.0), f(0.0), f(1.0));
        assert!((d - 0.3).abs() < 1e-12);
        assert!(v.abs() < 1e-12);
    }
}
