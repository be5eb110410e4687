//! RIFF/WAVE reading and writing.
//!
//! The reader accepts integer PCM at 8, 16, 24 and 32 bits, IEEE float at 32
//! and 64 bits, and `WAVE_FORMAT_EXTENSIBLE` carrying either of those.
//! Unknown chunks are skipped. The writer emits plain PCM or float headers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAG_PCM: u16 = 1;
const TAG_FLOAT: u16 = 3;
const TAG_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    Pcm8,
    Pcm16,
    Pcm24,
    Pcm32,
    Float32,
    Float64,
}

impl SampleFormat {
    pub fn bits(self) -> u16 {
        match self {
            SampleFormat::Pcm8 => 8,
            SampleFormat::Pcm16 => 16,
            SampleFormat::Pcm24 => 24,
            SampleFormat::Pcm32 | SampleFormat::Float32 => 32,
            SampleFormat::Float64 => 64,
        }
    }

    pub fn bytes(self) -> usize {
        self.bits() as usize / 8
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Float32 | SampleFormat::Float64 => TAG_FLOAT,
            _ => TAG_PCM,
        }
    }

    fn from_tag(tag: u16, bits: u16) -> Result<Self> {
        match (tag, bits) {
            (TAG_PCM, 8) => Ok(SampleFormat::Pcm8),
            (TAG_PCM, 16) => Ok(SampleFormat::Pcm16),
            (TAG_PCM, 24) => Ok(SampleFormat::Pcm24),
            (TAG_PCM, 32) => Ok(SampleFormat::Pcm32),
            (TAG_FLOAT, 32) => Ok(SampleFormat::Float32),
            (TAG_FLOAT, 64) => Ok(SampleFormat::Float64),
            _ => Err(Error::Wav(format!("unsupported format tag {tag} with {bits} bits"))),
        }
    }

    /// Integer PCM depth from a bit count, as used on the command line.
    pub fn pcm(bits: u16) -> Result<Self> {
        Self::from_tag(TAG_PCM, bits)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WavData {
    pub rate: u32,
    pub channels: u16,
    pub format: SampleFormat,
    /// Interleaved samples scaled to [-1, 1).
    pub samples: Vec<f64>,
}

impl WavData {
    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    /// Average over channels.
    pub fn mono(&self) -> Vec<f64> {
        let c = self.channels as usize;
        if c == 1 {
            return self.samples.clone();
        }
        self.samples.chunks_exact(c).map(|f| f.iter().sum::<f64>() / c as f64).collect()
    }
}

fn quantize(x: f64, bits: u16) -> i64 {
    let full = (1i64 << (bits - 1)) as f64;
    (x * full).round().clamp(-full, full - 1.0) as i64
}

/// Encodes interleaved samples. Integer formats round to nearest and clip.
pub fn encode(samples: &[f64], channels: u16, rate: u32, format: SampleFormat) -> Result<Vec<u8>> {
    if channels == 0 {
        return Err(Error::Wav("channel count must be positive".into()));
    }
    if rate == 0 {
        return Err(Error::Wav("sampling rate must be positive".into()));
    }
    if !samples.len().is_multiple_of(channels as usize) {
        return Err(Error::Wav(format!("{} samples do not split into {channels} channels", samples.len())));
    }
    let width = format.bytes();
    let data_len = samples.len() * width;
    let riff_len = 4 + (8 + 16) + (8 + data_len + data_len % 2);
    if riff_len > u32::MAX as usize {
        return Err(Error::Wav("audio too long for a RIFF file".into()));
    }
    let block_align = channels
        .checked_mul(width as u16)
        .ok_or_else(|| Error::Wav(format!("{channels} channels overflow the block size")))?;
    let byte_rate = rate
        .checked_mul(block_align as u32)
        .ok_or_else(|| Error::Wav("byte rate overflows the header field".into()))?;
    let mut out = Vec::with_capacity(riff_len + 8);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &x in samples {
        match format {
            SampleFormat::Pcm8 => out.push((quantize(x, 8) + 128) as u8),
            SampleFormat::Pcm16 => out.extend_from_slice(&(quantize(x, 16) as i16).to_le_bytes()),
            SampleFormat::Pcm24 => out.extend_from_slice(&(quantize(x, 24) as i32).to_le_bytes()[..3]),
            SampleFormat::Pcm32 => out.extend_from_slice(&(quantize(x, 32) as i32).to_le_bytes()),
            SampleFormat::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
            SampleFormat::Float64 => out.extend_from_slice(&x.to_le_bytes()),
        }
    }
    if data_len % 2 == 1 {
        out.push(0);
    }
    Ok(out)
}

pub fn encode_mono(samples: &[f64], rate: u32, format: SampleFormat) -> Result<Vec<u8>> {
    encode(samples, 1, rate, format)
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

struct Fmt {
    format: SampleFormat,
    channels: u16,
    rate: u32,
    block_align: u16,
}

fn parse_fmt(body: &[u8]) -> Result<Fmt> {
    if body.len() < 16 {
        return Err(Error::Wav(format!("fmt chunk of {} bytes is too short", body.len())));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let rate = u32_at(body, 4);
    let block_align = u16_at(body, 12);
    let bits = u16_at(body, 14);
    if tag == TAG_EXTENSIBLE {
        if body.len() < 40 || u16_at(body, 16) < 22 {
            return Err(Error::Wav("extensible fmt chunk is too short".into()));
        }
        let valid_bits = u16_at(body, 18);
        if valid_bits > bits {
            return Err(Error::Wav(format!("{valid_bits} valid bits in a {bits}-bit container")));
        }
        // The sub-format GUID starts with the plain format tag.
        tag = u16_at(body, 24);
    }
    let format = SampleFormat::from_tag(tag, bits)?;
    if channels == 0 {
        return Err(Error::Wav("zero channels".into()));
    }
    if rate == 0 {
        return Err(Error::Wav("zero sampling rate".into()));
    }
    if block_align as usize != channels as usize * format.bytes() {
        return Err(Error::Wav(format!(
            "block align {block_align} does not match {channels} channels of {bits} bits"
        )));
    }
    Ok(Fmt { format, channels, rate, block_align })
}

fn decode_samples(data: &[u8], format: SampleFormat) -> Vec<f64> {
    let w = format.bytes();
    data.chunks_exact(w)
        .map(|b| match format {
            SampleFormat::Pcm8 => (b[0] as f64 - 128.0) / 128.0,
            SampleFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
            SampleFormat::Pcm24 => (i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8) as f64 / 8_388_608.0,
            SampleFormat::Pcm32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0,
            SampleFormat::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            SampleFormat::Float64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        })
        .collect()
}

pub fn decode(bytes: &[u8]) -> Result<WavData> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("not a RIFF/WAVE file".into()));
    }
    let mut fmt: Option<Fmt> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let start = pos + 8;
        let available = bytes.len() - start;
        if id == b"data" {
            let f = fmt.ok_or_else(|| Error::Wav("data chunk before fmt chunk".into()))?;
            if size > available {
                return Err(Error::Wav(format!("data chunk claims {size} bytes, {available} present")));
            }
            let usable = size - size % f.block_align as usize;
            let samples = decode_samples(&bytes[start..start + usable], f.format);
            return Ok(WavData { rate: f.rate, channels: f.channels, format: f.format, samples });
        }
        if size > available {
            return Err(Error::Wav(format!(
                "chunk {:?} claims {size} bytes, {available} present",
                String::from_utf8_lossy(id)
            )));
        }
        if id == b"fmt " {
            fmt = Some(parse_fmt(&bytes[start..start + size])?);
        }
        pos = start + size + size % 2;
    }
    Err(Error::Wav("no data chunk".into()))
}
