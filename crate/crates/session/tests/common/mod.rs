#![allow(dead_code)]

use std::sync::Arc;

use pitchprobe_core::StimulusConfig;
use pitchprobe_session::{SessionManager, Store};

/// Short, low-rate stimulus that keeps generation and analysis around a
/// second.
pub fn small_config() -> StimulusConfig {
    StimulusConfig {
        rate: 16000.0,
        total_duration: 6.0,
        t_r: 4096,
        nominal_duration: 0.1,
        ..StimulusConfig::default()
    }
}

pub fn manager() -> (tempfile::TempDir, Arc<SessionManager>) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    (dir, Arc::new(SessionManager::new(store)))
}

pub fn sine(freq: f64, amp: f64, rate: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin()).collect()
}
