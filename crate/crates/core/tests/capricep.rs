use pitchprobe_core::capricep::{
    envelope_correlation, generate_unit_tsp, magnitude_deviation_db, matched_filter, DEFAULT_STAGE_COUNT,
};
use pitchprobe_core::AudioBuffer;

const RATE: f64 = 44100.0;

fn direct_xcorr_peak(a: &[f64], b: &[f64]) -> f64 {
    // Normalized cross-correlation maximum over all lags, by direct sum on a
    // decimated lag grid refined around the best candidate.
    let n = a.len() as isize;
    let ea: f64 = a.iter().map(|v| v * v).sum();
    let eb: f64 = b.iter().map(|v| v * v).sum();
    let at = |lag: isize| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let j = i + lag;
            if j >= 0 && j < n {
                s += a[i as usize] * b[j as usize];
            }
        }
        s.abs()
    };
    let mut best = 0.0f64;
    for lag in -(n - 1)..n {
        best = best.max(at(lag));
    }
    best / (ea * eb).sqrt()
}

#[test]
fn seed_one_is_flat_and_raised_cosine() {
    let tsp = generate_unit_tsp(1, 0.4, RATE, DEFAULT_STAGE_COUNT).unwrap();
    assert_eq!(tsp.len(), 17640);
    let dev = magnitude_deviation_db(tsp.samples(), 1 << 17);
    let corr = envelope_correlation(tsp.samples(), RATE);
    println!("flatness {dev} dB, envelope corr {corr}, tail {} dB", tsp.truncation_loss_db());
    assert!(dev < 0.1);
    assert!(corr > 0.95);
    assert!(tsp.truncation_loss_db() < -80.0);
}

#[test]
fn deterministic() {
    let a = generate_unit_tsp(1, 0.4, RATE, DEFAULT_STAGE_COUNT).unwrap();
    let b = generate_unit_tsp(1, 0.4, RATE, DEFAULT_STAGE_COUNT).unwrap();
    assert_eq!(a.samples(), b.samples());
}

#[test]
fn distinct_seeds_are_uncorrelated() {
    let a = generate_unit_tsp(1, 0.4, RATE, DEFAULT_STAGE_COUNT).unwrap();
    let b = generate_unit_tsp(2, 0.4, RATE, DEFAULT_STAGE_COUNT).unwrap();
    let peak = direct_xcorr_peak(a.samples(), b.samples());
    println!("xcorr peak {peak}");
    assert!(peak < 0.1);
}

#[test]
fn self_matched_filter_compresses() {
    let tsp = generate_unit_tsp(1, 0.4, RATE, DEFAULT_STAGE_COUNT).unwrap();
    let d = 5000;
    let mut x = vec![0.0; tsp.len() * 3];
    x[d..d + tsp.len()].copy_from_slice(tsp.samples());
    let y = matched_filter(&AudioBuffer::new(x, RATE).unwrap(), &tsp).unwrap();
    let s = y.samples();
    let (imax, peak) = s.iter().enumerate().fold((0, 0.0f64), |m, (i, v)| if v.abs() > m.1 { (i, v.abs()) } else { m });
    assert_eq!(imax, d);
    let side = s.iter().enumerate().filter(|(i, _)| *i != imax).map(|(_, v)| v.abs()).fold(0.0, f64::max);
    let psl = 20.0 * (peak / side).log10();
    let half = (0.005 * RATE) as usize;
    let total: f64 = s.iter().map(|v| v * v).sum();
    let near: f64 = s[imax - half..=imax + half].iter().map(|v| v * v).sum();
    println!("psl {psl} dB, energy near {}", near / total);
    assert!(psl >= 40.0);
    assert!(near / total >= 0.99);
}
