//! Input level metering.
//!
//! Levels are RMS re full scale: a sine with amplitude `a` reads
//! `20 log10(a / sqrt(2))` dBFS.

use serde::{Deserialize, Serialize};

/// Meter update rate, Hz.
pub const METER_RATE_HZ: f64 = 20.0;
/// Reported level for digital silence.
pub const FLOOR_DBFS: f64 = -150.0;

pub fn rms_dbfs(x: &[f64]) -> f64 {
    if x.is_empty() {
        return FLOOR_DBFS;
    }
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    if ms <= 0.0 {
        return FLOOR_DBFS;
    }
    (10.0 * ms.log10()).max(FLOOR_DBFS)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    /// Seconds on the session clock at the end of the block.
    pub t: f64,
    pub rms_dbfs: f64,
    pub peak_dbfs: f64,
}

pub fn reading(block: &[f64], end_sample: usize, rate: f64) -> MeterReading {
    let peak = block.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    MeterReading {
        t: end_sample as f64 / rate,
        rms_dbfs: rms_dbfs(block),
        peak_dbfs: if peak > 0.0 { (20.0 * peak.log10()).max(FLOOR_DBFS) } else { FLOOR_DBFS },
    }
}

/// Meter readings over consecutive blocks at [`METER_RATE_HZ`].
pub fn meter_blocks(x: &[f64], rate: f64) -> Vec<MeterReading> {
    let block = ((rate / METER_RATE_HZ).round() as usize).max(1);
    x.chunks(block)
        .enumerate()
        .map(|(i, b)| reading(b, i * block + b.len(), rate))
        .collect()
}
