//! Audio clips, WAV files, active speech level and mel features.

mod mel;
mod p56;
mod wav;

pub use mel::{mel_filterbank, mel_spectrogram, read_melb, write_melb, MelConfig, MelSpectrogram};
pub use p56::{active_speech_level_p56, ActiveLevelResult};
pub use wav::{read_wav, wav_duration_s, write_wav};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("malformed WAV file {path}: {reason}")]
    MalformedWav { path: PathBuf, reason: String },
    #[error("unsupported WAV format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("signal too short: {got_s:.3} s, need at least {need_s:.3} s")]
    SignalTooShort { got_s: f64, need_s: f64 },
    #[error("signal is silent; active level is undefined")]
    SilentSignal,
    #[error("clip has {got} samples, fewer than the window length {need}")]
    ClipTooShort { got: usize, need: usize },
    #[error("bad mel configuration: {0}")]
    BadConfig(String),
    #[error("sample rate mismatch: clip is {clip} Hz, configuration expects {expected} Hz")]
    RateMismatch { clip: u32, expected: u32 },
    #[error("malformed mel file: {0}")]
    MalformedMel(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Mono PCM audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean power `mean(x²)`, 0 for an empty clip.
    pub fn mean_power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

pub(crate) fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Power ratio in dB, full scale (amplitude 1.0 square wave) is 0 dB.
pub fn power_db(power: f64) -> f64 {
    10.0 * power.log10()
}
