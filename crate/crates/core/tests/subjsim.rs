mod common;

use std::f64::consts::PI;

use common::{default_stimulus, rms, rms_diff, subject_oracle, F_TARGET, RATE};
use pitchprobe_core::f0track::{design_analytic_filter, extract_f0};
use pitchprobe_core::modgen::ModulationSignal;
use pitchprobe_core::stimsynth::{CarrierSpec, TestStimulus};
use pitchprobe_core::subjsim::{loopback_channel, produced_cents, simulate_subject, Kernel, SubjectModel};
use pitchprobe_core::sysresp::analyze_session;
use pitchprobe_core::AudioBuffer;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

fn magnitude_db(x: &[f64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf.iter().map(|c| 20.0 * c.norm().log10()).collect()
}

/// Stimulus wrapper around an arbitrary waveform.
fn wrap(samples: Vec<f64>) -> TestStimulus {
    let n = samples.len();
    TestStimulus {
        audio: AudioBuffer::new(samples, RATE).unwrap(),
        modulation: ModulationSignal { cents: vec![0.0; n], rate: RATE, target_sd: 0.0, t_r: 4096, window_length: 3073 },
        carrier: CarrierSpec::sine(F_TARGET),
        set_metadata: None,
    }
}

#[test]
fn null_subject_holds_target() {
    let s = &default_stimulus().stimulus;
    let model = SubjectModel { gain: 0.0, ..SubjectModel::default() };
    let rec = simulate_subject(s, &model, 0).unwrap();
    let f = design_analytic_filter(F_TARGET, RATE).unwrap();
    let tr = extract_f0(&rec, &f).unwrap();
    let (a, b) = tr.valid_range;
    let worst = tr.hz[a..b].iter().map(|h| (h - F_TARGET).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "{worst}");
    let e = analyze_session(s, &rec, F_TARGET).unwrap();
    println!("null response rms {:.2e}", rms(&e.response));
    assert!(rms(&e.response) < 1e-3 * rms(&e.perturbation_pulse));
}

#[test]
fn same_seed_same_output() {
    let s = &default_stimulus().stimulus;
    let model = SubjectModel { drift_sd: 4.0, jitter_sd: 2.0, ..SubjectModel::default() };
    let a = simulate_subject(s, &model, 11).unwrap();
    let b = simulate_subject(s, &model, 11).unwrap();
    assert!(a.samples().iter().zip(b.samples()).all(|(x, y)| x.to_bits() == y.to_bits()));
    let c = simulate_subject(s, &model, 12).unwrap();
    assert_ne!(a.samples(), c.samples());
}

#[test]
fn produced_cents_follow_the_oracle() {
    let s = &default_stimulus().stimulus;
    let m = SubjectModel::default();
    let c = produced_cents(s, &m, 0).unwrap();
    // Linear (non-circular) oracle on the raw modulation, away from the start.
    let heard = &s.modulation.cents;
    let h = common::critical_kernel(m.kernel.natural_hz, RATE, 20000);
    let shift = (m.latency * RATE).round() as usize;
    let start = 40000;
    let oracle: Vec<f64> = (start..start + 50000)
        .map(|n| {
            let src = n - shift;
            m.gain * h.iter().enumerate().map(|(j, hj)| hj * heard[src - j]).sum::<f64>()
        })
        .collect();
    let rel = rms_diff(&c[start..start + 50000], &oracle) / rms(&oracle);
    println!("produced-cents oracle error {rel:.2e}");
    assert!(rel < 0.01);
}

#[test]
fn drift_and_jitter_reach_their_sd() {
    let s = &default_stimulus().stimulus;
    let base = produced_cents(s, &SubjectModel { gain: 0.0, ..SubjectModel::default() }, 0).unwrap();
    assert!(base.iter().all(|v| *v == 0.0));
    for (drift, jitter) in [(6.0, 0.0), (0.0, 3.0)] {
        let m = SubjectModel { gain: 0.0, drift_sd: drift, jitter_sd: jitter, ..SubjectModel::default() };
        let c = produced_cents(s, &m, 4).unwrap();
        let sd = rms(&c);
        let want = drift + jitter;
        println!("drift {drift} jitter {jitter}: sd {sd:.3}");
        assert!((sd / want - 1.0).abs() < 0.1);
    }
}

#[test]
fn invalid_models_rejected() {
    let s = &default_stimulus().stimulus;
    let bad = SubjectModel { latency: -0.01, ..SubjectModel::default() };
    assert!(simulate_subject(s, &bad, 0).is_err());
    let bad = SubjectModel { kernel: Kernel { natural_hz: 40.0, damping: -1.0 }, ..SubjectModel::default() };
    assert!(simulate_subject(s, &bad, 0).is_err());
    assert!(loopback_channel(s, -0.001).is_err());
}

#[test]
fn zero_delay_loopback_is_identity() {
    let s = &default_stimulus().stimulus;
    assert_eq!(loopback_channel(s, 0.0).unwrap().samples(), s.audio.samples());
}

#[test]
fn integer_delay_loopback_shifts() {
    let x: Vec<f64> = (0..5000).map(|n| (n as f64 * 0.37).sin() * (PI * n as f64 / 5000.0).sin()).collect();
    let y = loopback_channel(&wrap(x.clone()), 100.0 / RATE).unwrap();
    let y = y.samples();
    assert!(y[..100].iter().all(|v| v.abs() < 1e-9));
    assert!((100..5000).all(|n| (y[n] - x[n - 100]).abs() < 1e-9));
}

#[test]
fn half_sample_delay_preserves_magnitude() {
    // Noise burst with smooth edges and silent margins.
    let n = 16384;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let env = if (2048..n - 2048).contains(&i) {
                (PI * (i - 2048) as f64 / (n - 4096) as f64).sin().powi(2)
            } else {
                0.0
            };
            let v: f64 = StandardNormal.sample(&mut rng);
            env * v
        })
        .collect();
    let y = loopback_channel(&wrap(x.clone()), 0.5 / RATE).unwrap();
    let (mx, my) = (magnitude_db(&x), magnitude_db(y.samples()));
    let top = (10_000.0 / RATE * n as f64) as usize;
    let worst = (1..top).map(|k| (mx[k] - my[k]).abs()).fold(0.0, f64::max);
    println!("worst magnitude change below 10 kHz: {worst:.2e} dB");
    assert!(worst < 0.01);
    // The shift itself: a half sample of linear phase.
    let mut bx: Vec<Complex64> = x.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let mut by: Vec<Complex64> = y.samples().iter().map(|v| Complex64::new(*v, 0.0)).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    fft.process(&mut bx);
    fft.process(&mut by);
    let k = 1000;
    let dphi = (by[k] / bx[k]).arg();
    println!("phase at bin {k}: {dphi:.6e}, expected {:.6e}", -PI * k as f64 / n as f64);
    assert!((dphi + PI * k as f64 / n as f64).abs() < 1e-4);
}

#[test]
fn jitter_degrades_monotonically_and_sets_residual() {
    let s = &default_stimulus().stimulus;
    let clean = SubjectModel::default();
    let e0 = analyze_session(s, &simulate_subject(s, &clean, 0).unwrap(), F_TARGET).unwrap();
    let oracle = subject_oracle(&e0.perturbation_pulse, RATE, clean.gain, clean.latency, clean.kernel.natural_hz);
    let mut last_err = rms_diff(&e0.response, &oracle);
    let mut last_level = e0.residual_level;
    for jitter in [1.0, 3.0, 9.0] {
        let m = SubjectModel { jitter_sd: jitter, ..SubjectModel::default() };
        let e = analyze_session(s, &simulate_subject(s, &m, 21).unwrap(), F_TARGET).unwrap();
        let err = rms_diff(&e.response, &oracle);
        // Residual is a mean over the averaged blocks; rescale to one block.
        let per_block = e.residual_level * (e.blocks_averaged as f64).sqrt();
        println!(
            "jitter {jitter}: error {err:.4}, residual {:.4}, per block {per_block:.3}",
            e.residual_level
        );
        assert!(err > last_err);
        assert!(e.residual_level > last_level);
        assert!(per_block > jitter / 2.0 && per_block < jitter * 2.0);
        last_err = err;
        last_level = e.residual_level;
    }
}
