//! Modulation signal generator: six-term cosine-series smoothing of the MIX
//! signal into a zero-mean log-frequency trajectory in cents.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::orthoseq::MixSignal;

/// Six-term cosine-series coefficients, `w(x) = sum_k a_k cos(k x)` with `x`
/// spanning `[-pi, pi]` over the window. The end samples are exactly zero and
/// the highest sidelobe sits near -150 dB.
pub const SIX_TERM_COEFFICIENTS: [f64; 6] = [
    0.290_970_798_804_712_16,
    0.450_115_359_231_529_6,
    0.203_599_357_572_682_16,
    0.049_726_408_258_657_09,
    0.005_429_843_622_605_701,
    0.000_158_232_509_813_279_66,
];

pub const MIN_WINDOW_LENGTH: usize = 64;

/// Sidelobe floor the smoother has to meet, in dB re the main-lobe peak.
pub const SIDELOBE_LIMIT_DB: f64 = -114.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CosineSeriesWindow {
    coefficients: [f64; 6],
    samples: Vec<f64>,
}

pub fn design_window(length: usize) -> Result<CosineSeriesWindow> {
    design_window_with(SIX_TERM_COEFFICIENTS, length)
}

pub fn design_window_with(coefficients: [f64; 6], length: usize) -> Result<CosineSeriesWindow> {
    if length < MIN_WINDOW_LENGTH {
        return Err(Error::param(format!(
            "window length {length} is below the minimum of {MIN_WINDOW_LENGTH}"
        )));
    }
    let half = (length - 1) as f64 / 2.0;
    let step = std::f64::consts::PI / half;
    let mut samples: Vec<f64> = (0..length)
        .map(|n| {
            let x = (n as f64 - half) * step;
            coefficients
                .iter()
                .enumerate()
                .map(|(k, a)| a * (k as f64 * x).cos())
                .sum::<f64>()
                .max(0.0)
        })
        .collect();
    // Exact mirror symmetry, independent of cos() rounding on either side.
    for n in 0..length / 2 {
        samples[length - 1 - n] = samples[n];
    }
    Ok(CosineSeriesWindow { coefficients, samples })
}

impl CosineSeriesWindow {
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn coefficients(&self) -> [f64; 6] {
        self.coefficients
    }

    /// Window scaled to unit sum.
    pub fn unit_area(&self) -> Vec<f64> {
        let s: f64 = self.samples.iter().sum();
        self.samples.iter().map(|v| v / s).collect()
    }

    /// Highest sidelobe in dB re the DC peak, measured on an FFT zero-padded
    /// to at least `oversample` times the window length.
    pub fn max_sidelobe_db(&self, oversample: usize) -> f64 {
        let n = fft::fft_len_for(self.len() * oversample.max(1));
        let spec = fft::spectrum(&self.samples, n);
        let mag: Vec<f64> = spec[..=n / 2].iter().map(|c| c.norm()).collect();
        let peak = mag[0];
        let mut i = 1;
        while i + 1 < mag.len() && mag[i + 1] < mag[i] {
            i += 1;
        }
        let worst = mag[i..].iter().cloned().fold(0.0, f64::max);
        20.0 * (worst / peak).log10()
    }
}

/// Smoothed, normalized perturbation trajectory in cents at audio rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationSignal {
    pub cents: Vec<f64>,
    pub rate: f64,
    pub target_sd: f64,
    pub t_r: usize,
    /// Length of the smoother that produced it.
    pub window_length: usize,
}

impl ModulationSignal {
    pub fn len(&self) -> usize {
        self.cents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cents.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.cents.iter().sum::<f64>() / self.cents.len().max(1) as f64
    }

    pub fn sd(&self) -> f64 {
        population_sd(&self.cents)
    }

    pub fn max_abs(&self) -> f64 {
        self.cents.iter().fold(0.0, |m, c| m.max(c.abs()))
    }
}

/// Parameters of the modulation generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulationParams {
    pub target_sd: f64,
    /// Smoother length in samples; `None` selects [`default_window_length`].
    pub window_length: Option<usize>,
    pub coefficients: [f64; 6],
}

impl Default for ModulationParams {
    fn default() -> Self {
        Self { target_sd: 25.0, window_length: None, coefficients: SIX_TERM_COEFFICIENTS }
    }
}

impl ModulationParams {
    pub fn window_length_for(&self, t_r: usize) -> usize {
        self.window_length.unwrap_or_else(|| default_window_length(t_r))
    }
}

/// Three quarters of the allocation interval, rounded to an odd length so the
/// smoother has an integer centre.
pub fn default_window_length(t_r: usize) -> usize {
    (3 * t_r / 4) | 1
}

pub(crate) fn population_sd(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Centred convolution with the unit-area window. For odd window lengths the
/// output is exactly delay-compensated; even lengths carry a half-sample lag.
pub fn smooth(signal: &[f64], window: &CosineSeriesWindow) -> Vec<f64> {
    let h = window.unit_area();
    let delay = (h.len() - 1) / 2;
    let full = fft::convolve(signal, &h);
    full.into_iter().skip(delay).take(signal.len()).collect()
}

pub fn make_modulation(
    mix: &MixSignal,
    window: &CosineSeriesWindow,
    target_sd: f64,
) -> Result<ModulationSignal> {
    if window.len() >= mix.t_r {
        return Err(Error::param(format!(
            "smoothing window ({} samples) must be shorter than t_r ({})",
            window.len(),
            mix.t_r
        )));
    }
    if !(target_sd.is_finite() && target_sd >= 0.0) {
        return Err(Error::param(format!("target SD must be non-negative, got {target_sd}")));
    }
    let mut cents = smooth(mix.mix.samples(), window);
    let n = cents.len() as f64;
    let mean = cents.iter().sum::<f64>() / n;
    cents.iter_mut().for_each(|c| *c -= mean);
    let sd = population_sd(&cents);
    if sd > 0.0 {
        let g = target_sd / sd;
        cents.iter_mut().for_each(|c| *c *= g);
    } else {
        cents.iter_mut().for_each(|c| *c = 0.0);
    }
    Ok(ModulationSignal {
        cents,
        rate: mix.mix.rate(),
        target_sd,
        t_r: mix.t_r,
        window_length: window.len(),
    })
}

/// Largest sample-to-sample change, in cents per second.
pub fn max_transition_rate(modulation: &ModulationSignal) -> f64 {
    modulation
        .cents
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
        * modulation.rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioBuffer;

    /// Sidelobe level from a direct DTFT on a dense grid, independent of the
    /// FFT path.
    fn dtft_sidelobe_db(w: &[f64]) -> f64 {
        let n = w.len();
        let half = (n - 1) as f64 / 2.0;
        let mag = |bins: f64| {
            let om = 2.0 * std::f64::consts::PI * bins / n as f64;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in w.iter().enumerate() {
                let a = om * (i as f64 - half);
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        };
        let dc = mag(0.0);
        let mut worst: f64 = 0.0;
        let mut b = 6.0;
        while b < n as f64 / 2.0 {
            worst = worst.max(mag(b));
            b += 1.0 / 16.0;
        }
        20.0 * (worst / dc).log10()
    }

    #[test]
    fn window_is_symmetric_and_nonnegative() {
        let w = design_window(4096).unwrap();
        let s = w.samples();
        assert!(s.iter().all(|v| *v >= 0.0));
        for n in 0..s.len() {
            assert_eq!(s[n], s[s.len() - 1 - n]);
        }
        assert!(s.iter().sum::<f64>() > 0.0);
    }

    #[test]
    fn sidelobes_below_limit_fft_and_dtft() {
        let w = design_window(4096).unwrap();
        assert!(w.max_sidelobe_db(32) <= SIDELOBE_LIMIT_DB);
        let short = design_window(256).unwrap();
        assert!(dtft_sidelobe_db(short.samples()) <= SIDELOBE_LIMIT_DB);
        assert!(short.max_sidelobe_db(32) <= SIDELOBE_LIMIT_DB);
    }

    #[test]
    fn short_windows_rejected() {
        assert!(matches!(design_window(63), Err(Error::Parameter(_))));
        assert!(design_window(64).is_ok());
    }

    fn mix_from(samples: Vec<f64>, t_r: usize) -> MixSignal {
        let b = AudioBuffer::new(samples, 1000.0).unwrap();
        MixSignal { mix: b.clone(), per_sequence: [b.clone(), b.clone(), b], allocation_count: 0, t_r }
    }

    #[test]
    fn zero_mix_gives_zero_modulation() {
        let w = design_window(65).unwrap();
        let m = make_modulation(&mix_from(vec![0.0; 1000], 100), &w, 25.0).unwrap();
        assert!(m.cents.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn impulse_train_becomes_window_train() {
        let t_r = 200;
        let w = design_window(101).unwrap();
        let mut x = vec![0.0; 2000];
        for k in 1..9 {
            x[k * t_r] = 1.0;
        }
        let smoothed = smooth(&x, &w);
        let unit = w.unit_area();
        // Direct check: around each impulse the output is the centred window.
        for k in 1..9 {
            for j in 0..101 {
                let got = smoothed[k * t_r + j - 50];
                assert!((got - unit[j]).abs() < 1e-12, "k={k} j={j}");
            }
        }
        let m = make_modulation(&mix_from(x, t_r), &w, 25.0).unwrap();
        assert!((m.sd() - 25.0).abs() < 25.0e-9);
        let peaks: Vec<usize> = (1..m.len() - 1)
            .filter(|&i| m.cents[i] > m.cents[i - 1] && m.cents[i] >= m.cents[i + 1] && m.cents[i] > 1.0)
            .collect();
        assert_eq!(peaks, (1..9).map(|k| k * t_r).collect::<Vec<_>>());
    }

    #[test]
    fn window_must_be_shorter_than_t_r() {
        let w = design_window(101).unwrap();
        assert!(make_modulation(&mix_from(vec![1.0; 500], 101), &w, 25.0).is_err());
    }

    #[test]
    fn transition_rate_examples() {
        let constant = ModulationSignal { cents: vec![3.0; 100], rate: 100.0, target_sd: 0.0, t_r: 10, window_length: 1 };
        assert_eq!(max_transition_rate(&constant), 0.0);
        let ramp = ModulationSignal {
            cents: (0..=1000).map(|i| i as f64 * 0.1).collect(),
            rate: 1000.0,
            target_sd: 0.0,
            t_r: 10,
            window_length: 1,
        };
        assert!((max_transition_rate(&ramp) - 100.0).abs() < 1e-9);
    }
}
