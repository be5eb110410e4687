//! FFT-backed convolution helpers shared by the signal modules.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub(crate) fn fft_len_for(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

fn forward(buf: &mut [Complex64]) {
    FftPlanner::<f64>::new().plan_fft_forward(buf.len()).process(buf);
}

fn inverse(buf: &mut [Complex64]) {
    FftPlanner::<f64>::new().plan_fft_inverse(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    for v in buf.iter_mut() {
        *v *= scale;
    }
}

fn padded(x: &[f64], n: usize) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf.iter_mut().zip(x) {
        b.re = v;
    }
    buf
}

/// Forward DFT of a zero-padded real sequence.
pub fn spectrum(x: &[f64], n: usize) -> Vec<Complex64> {
    assert!(n >= x.len(), "fft length shorter than input");
    let mut buf = padded(x, n);
    forward(&mut buf);
    buf
}

/// Inverse DFT of a full (two-sided) spectrum, normalized by `1/n`.
pub fn inverse_spectrum(mut spec: Vec<Complex64>) -> Vec<Complex64> {
    inverse(&mut spec);
    spec
}

/// Full linear convolution, length `x.len() + h.len() - 1`.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let n = fft_len_for(out_len);
    let mut a = padded(x, n);
    let mut b = padded(h, n);
    forward(&mut a);
    forward(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inverse(&mut a);
    a.truncate(out_len);
    a.into_iter().map(|c| c.re).collect()
}

/// `out[n] = sum_m x[n + m] * h[m]` for `n` in `0..x.len()`, with `x` zero
/// beyond its end. This is convolution with the time-reversed `h`, aligned so
/// that an occurrence of `h` starting at `d` produces a peak at `d`.
pub fn correlate(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    if h.is_empty() {
        return vec![0.0; x.len()];
    }
    let n = fft_len_for(x.len() + h.len());
    let mut a = padded(x, n);
    let mut b = padded(h, n);
    forward(&mut a);
    forward(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v.conj();
    }
    inverse(&mut a);
    a.truncate(x.len());
    a.into_iter().map(|c| c.re).collect()
}

/// Convolution of a real signal with a complex kernel, re-centred so that
/// `out[n]` refers to input time `n` (kernel assumed centred on `delay`).
pub fn convolve_complex_centred(x: &[f64], h: &[Complex64], delay: usize) -> Vec<Complex64> {
    if x.is_empty() || h.is_empty() {
        return vec![Complex64::new(0.0, 0.0); x.len()];
    }
    let n = fft_len_for(x.len() + h.len());
    let mut a = padded(x, n);
    let mut b = vec![Complex64::new(0.0, 0.0); n];
    b[..h.len()].copy_from_slice(h);
    forward(&mut a);
    forward(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inverse(&mut a);
    a.into_iter().skip(delay).take(x.len()).collect()
}

/// Delays `x` by `d` samples (fractional, either sign) with a frequency-domain
/// phase ramp on a zero-padded copy, so nothing wraps around. Output keeps
/// the input length.
pub fn fractional_delay(x: &[f64], d: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let pad = d.abs().ceil() as usize + 64;
    let n = fft_len_for(x.len() + 2 * pad);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (b, &v) in buf[pad..].iter_mut().zip(x) {
        b.re = v;
    }
    forward(&mut buf);
    let half = n / 2;
    for (k, b) in buf.iter_mut().enumerate() {
        let f = if k <= half { k as f64 } else { k as f64 - n as f64 };
        *b *= Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * d / n as f64);
    }
    // A fractional shift of the Nyquist bin is not real; keep its real part.
    buf[half] = Complex64::new(buf[half].re, 0.0);
    inverse(&mut buf);
    buf[pad..pad + x.len()].iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len() + h.len() - 1];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let x: Vec<f64> = (0..37).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let h: Vec<f64> = (0..11).map(|i| (i as f64 * 0.3).sin()).collect();
        let fast = convolve(&x, &h);
        for (a, b) in fast.iter().zip(direct_convolve(&x, &h)) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn integer_delay_is_a_shift() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = fractional_delay(&x, 5.0);
        for i in 0..50 {
            let expect = if i >= 5 { x[i - 5] } else { 0.0 };
            assert!((y[i] - expect).abs() < 1e-12);
        }
        let z = fractional_delay(&x, -3.0);
        for i in 0..47 {
            assert!((z[i] - x[i + 3]).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_peaks_at_embedding_offset() {
        let h = [1.0, -2.0, 0.5, 3.0];
        let mut x = vec![0.0; 20];
        x[7..11].copy_from_slice(&h);
        let y = correlate(&x, &h);
        let (imax, _) = y
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert_eq!(imax, 7);
        assert!((y[7] - h.iter().map(|v| v * v).sum::<f64>()).abs() < 1e-12);
    }
}
