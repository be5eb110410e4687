//! Stimulus generation and response analysis for pitch-perturbation
//! measurements with orthogonal CAPRICEP sequences.
//!
//! The chain runs `capricep` (unit-TSPs) -> `orthoseq` (Walsh-signed
//! periodic sequences) -> `modgen` (smoothed cents trajectory) ->
//! `stimsynth` (FM carrier). Analysis runs `f0track` on stimulus and
//! recording and `sysresp` recovers and compares the periodic pulses.
//! `subjsim` closes the loop with a simulated speaker.

pub mod audio;
pub mod capricep;
pub mod error;
pub mod f0track;
pub(crate) mod fft;
pub mod modgen;
pub mod orthoseq;
pub mod pipeline;
pub mod stimsynth;
pub mod subjsim;
pub mod sysresp;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
pub use pipeline::{generate_stimulus, GeneratedStimulus, StimulusConfig};
