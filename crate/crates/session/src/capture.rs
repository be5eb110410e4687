//! Streamed capture frames and the bounded buffer that assembles them.
//!
//! Frame layout, little-endian:
//!
//! | bytes | field                                   |
//! |-------|-----------------------------------------|
//! | 4     | magic `PPCF`                            |
//! | 1     | version, 1                              |
//! | 1     | encoding: 1 = f32, 2 = s16, 3 = s24     |
//! | 2     | channels (u16)                          |
//! | 8     | start sample on the session clock (u64) |
//! | 4     | frame count (u32)                       |
//! | n     | interleaved samples                     |
//!
//! A request body may carry several frames back to back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PPCF";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
/// Upper bound on samples in a single frame.
pub const MAX_FRAME_SAMPLES: usize = 1 << 20;
/// Buffering allowed past the expected capture length, seconds.
pub const SLACK_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    F32,
    S16,
    S24,
}

impl Encoding {
    fn code(self) -> u8 {
        match self {
            Encoding::F32 => 1,
            Encoding::S16 => 2,
            Encoding::S24 => 3,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            1 => Ok(Encoding::F32),
            2 => Ok(Encoding::S16),
            3 => Ok(Encoding::S24),
            _ => Err(Error::Frame(format!("unknown encoding {c}"))),
        }
    }

    fn width(self) -> usize {
        match self {
            Encoding::F32 => 4,
            Encoding::S16 => 2,
            Encoding::S24 => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub encoding: Encoding,
    pub channels: u16,
    pub start_sample: u64,
    /// Channel-averaged samples.
    pub samples: Vec<f64>,
}

pub fn encode_frame(encoding: Encoding, channels: u16, start_sample: u64, interleaved: &[f64]) -> Vec<u8> {
    let c = channels.max(1) as usize;
    let count = interleaved.len() / c;
    let mut out = Vec::with_capacity(HEADER_LEN + count * c * encoding.width());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(encoding.code());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&start_sample.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for &x in &interleaved[..count * c] {
        match encoding {
            Encoding::F32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            Encoding::S16 => {
                let v = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&v.to_le_bytes());
            }
            Encoding::S24 => {
                let v = (x * 8_388_608.0).round().clamp(-8_388_608.0, 8_388_607.0) as i32;
                out.extend_from_slice(&v.to_le_bytes()[..3]);
            }
        }
    }
    out
}

/// Decodes one frame from the front of `bytes`, returning it and the number
/// of bytes consumed.
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Frame(format!("{} bytes is shorter than a frame header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Frame("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Frame(format!("unsupported version {}", bytes[4])));
    }
    let encoding = Encoding::from_code(bytes[5])?;
    let channels = u16::from_le_bytes([bytes[6], bytes[7]]);
    if channels == 0 {
        return Err(Error::Frame("zero channels".into()));
    }
    let start_sample = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let count = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    let total = count
        .checked_mul(channels as usize)
        .filter(|&n| n <= MAX_FRAME_SAMPLES)
        .ok_or_else(|| Error::Frame(format!("{count} frames of {channels} channels exceeds the frame limit")))?;
    let len = HEADER_LEN + total * encoding.width();
    if bytes.len() < len {
        return Err(Error::Frame(format!("frame needs {len} bytes, {} present", bytes.len())));
    }
    if start_sample.checked_add(count as u64).is_none() {
        return Err(Error::Frame("start sample overflows".into()));
    }
    let payload = &bytes[HEADER_LEN..len];
    let raw: Vec<f64> = payload
        .chunks_exact(encoding.width())
        .map(|b| match encoding {
            Encoding::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Encoding::S16 => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
            Encoding::S24 => (i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8) as f64 / 8_388_608.0,
        })
        .collect();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Frame("non-finite sample".into()));
    }
    let c = channels as usize;
    let samples = if c == 1 { raw } else { raw.chunks_exact(c).map(|f| f.iter().sum::<f64>() / c as f64).collect() };
    Ok((Frame { encoding, channels, start_sample, samples }, len))
}

/// Decodes every frame in a request body.
pub fn decode_frames(mut bytes: &[u8]) -> Result<Vec<Frame>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (f, used) = decode_frame(bytes)?;
        out.push(f);
        bytes = &bytes[used..];
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CaptureStatus {
    pub rate: f64,
    pub expected_samples: usize,
    pub capacity_samples: usize,
    /// One past the highest sample written.
    pub high_water: usize,
    pub frames: usize,
    /// Samples skipped between frames and filled with silence.
    pub gap_samples: usize,
    pub gap_count: usize,
    /// Samples rejected because they fell past the buffer capacity.
    pub overrun_samples: usize,
    /// Samples rewritten by frames that overlapped earlier ones.
    pub overlap_samples: usize,
}

impl CaptureStatus {
    pub fn complete(&self) -> bool {
        self.high_water >= self.expected_samples
    }
}

/// Mono capture assembled from frames by their sample timestamps. Storage is
/// bounded to the expected length plus [`SLACK_S`].
#[derive(Debug, Clone)]
pub struct CaptureBuffer {
    samples: Vec<f64>,
    status: CaptureStatus,
}

impl CaptureBuffer {
    pub fn new(rate: f64, expected_samples: usize) -> Self {
        let capacity = expected_samples + (SLACK_S * rate).ceil() as usize;
        Self {
            samples: Vec::with_capacity(expected_samples),
            status: CaptureStatus {
                rate,
                expected_samples,
                capacity_samples: capacity,
                ..CaptureStatus::default()
            },
        }
    }

    pub fn push(&mut self, frame: &Frame) -> &CaptureStatus {
        let st = &mut self.status;
        st.frames += 1;
        let start = usize::try_from(frame.start_sample).unwrap_or(usize::MAX);
        let n = frame.samples.len();
        if start >= st.capacity_samples {
            st.overrun_samples += n;
            return &self.status;
        }
        let keep = n.min(st.capacity_samples - start);
        st.overrun_samples += n - keep;
        if start > st.high_water {
            st.gap_samples += start - st.high_water;
            st.gap_count += 1;
        }
        let end = start + keep;
        if self.samples.len() < end {
            self.samples.resize(end, 0.0);
        }
        st.overlap_samples += st.high_water.min(end).saturating_sub(start);
        self.samples[start..end].copy_from_slice(&frame.samples[..keep]);
        st.high_water = st.high_water.max(end);
        &self.status
    }

    pub fn status(&self) -> &CaptureStatus {
        &self.status
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Most recent `n` samples below the high-water mark.
    pub fn tail(&self, n: usize) -> &[f64] {
        let end = self.samples.len();
        &self.samples[end.saturating_sub(n)..end]
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}
