mod common;

use pitchprobe_core::stimsynth::{parse_harmonics, PhaseMode};
use pitchprobe_session::sidecar::{load_stimulus, read_sidecar, render, sidecar_path, write_stimulus, Sidecar};
use pitchprobe_session::wav::{decode, SampleFormat};
use pitchprobe_session::{sha256_hex, Error};

#[test]
fn written_files_match_the_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    let r = write_stimulus(&path, &common::small_config(), SampleFormat::Pcm24).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes, r.bytes);
    let side = read_sidecar(&path).unwrap();
    assert_eq!(side, r.sidecar);
    assert_eq!(side.wav.sha256, sha256_hex(&bytes));
    assert_eq!(side.wav.file, "a.wav");
    let w = decode(&bytes).unwrap();
    assert_eq!((w.rate, w.format, w.frames()), (16000, SampleFormat::Pcm24, 96000));
    assert_eq!(sidecar_path(&path), dir.path().join("a.json"));
}

#[test]
fn sidecar_json_regenerates_identical_bytes() {
    let mut config = common::small_config();
    config.seeds = [21, 22, 23];
    config.carrier.harmonics = parse_harmonics("2-12").unwrap();
    config.carrier.phase_mode = PhaseMode::Schroeder { ascending: false };
    let r = render(&config, SampleFormat::Pcm16, "x.wav").unwrap();
    let parsed = Sidecar::parse(&r.sidecar.to_json()).unwrap();
    assert_eq!(parsed, r.sidecar);
    assert_eq!(parsed.regenerate().unwrap().bytes, r.bytes);
}

#[test]
fn different_seeds_change_the_audio() {
    let a = render(&common::small_config(), SampleFormat::Pcm24, "a.wav").unwrap();
    let mut c = common::small_config();
    c.seeds = [21, 22, 23];
    let b = render(&c, SampleFormat::Pcm24, "b.wav").unwrap();
    assert_ne!(a.sidecar.wav.sha256, b.sidecar.wav.sha256);
}

#[test]
fn bad_sidecars_are_rejected() {
    let r = render(&common::small_config(), SampleFormat::Pcm24, "x.wav").unwrap();
    let good: serde_json::Value = serde_json::from_str(&r.sidecar.to_json()).unwrap();

    let mut v = good.clone();
    v["schema"] = "pitchprobe.stimulus/99".into();
    assert!(matches!(Sidecar::parse(&v.to_string()), Err(Error::Sidecar(_))));

    let mut v = good.clone();
    v.as_object_mut().unwrap().remove("schema");
    assert!(Sidecar::parse(&v.to_string()).is_err());

    let mut v = good.clone();
    v["wav"]["sha256"] = "abc".into();
    assert!(Sidecar::parse(&v.to_string()).is_err());

    let mut v = good.clone();
    v["config"]["seeds"][0] = 999.into();
    assert!(Sidecar::parse(&v.to_string()).is_err());

    let mut v = good;
    v["wav"]["sha256"] = "0".repeat(64).into();
    let s = Sidecar::parse(&v.to_string()).unwrap();
    assert!(matches!(s.regenerate(), Err(Error::Sidecar(_))));

    assert!(Sidecar::parse("{").is_err());
}

#[test]
fn missing_sidecar_demands_regeneration_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.wav");
    write_stimulus(&path, &common::small_config(), SampleFormat::Pcm24).unwrap();
    std::fs::remove_file(sidecar_path(&path)).unwrap();
    let err = load_stimulus(&path).err().expect("must fail");
    assert!(matches!(err, Error::Sidecar(_)));
    assert!(err.to_string().contains("generation metadata"), "{err}");
}

#[test]
fn edited_wav_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.wav");
    write_stimulus(&path, &common::small_config(), SampleFormat::Pcm24).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 2] ^= 1;
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_stimulus(&path), Err(Error::Sidecar(_))));
}

#[test]
fn loaded_stimulus_uses_file_audio() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.wav");
    let r = write_stimulus(&path, &common::small_config(), SampleFormat::Pcm16).unwrap();
    let loaded = load_stimulus(&path).unwrap();
    let exact = r.generated.stimulus.audio.samples();
    let file = loaded.stimulus.audio.samples();
    assert_ne!(exact, file);
    let err = exact.iter().zip(file).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 0.5 / 32768.0 + 1e-12);
    assert_eq!(loaded.stimulus.modulation, r.generated.stimulus.modulation);
}

#[test]
fn fractional_rate_is_invalid() {
    let mut c = common::small_config();
    c.rate = 16000.5;
    assert!(matches!(render(&c, SampleFormat::Pcm24, "x.wav"), Err(Error::Invalid(_))));
}
