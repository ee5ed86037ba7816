//! Stationary augmentation noises and mixing at an exact active-speech SNR.

mod mix;
mod spectrum;

pub use mix::{measure_snr_db, mix_at_snr, MixOutput};
pub use spectrum::{
    default_sensor_table, read_psd_csv, shaped_noise, spectrum_gain, white_gaussian,
    write_psd_csv, SpectrumSpec, USASI_HIGHPASS_HZ, USASI_LOWPASS_HZ,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioError;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("bad spectrum: {0}")]
    BadSpectrum(String),
    #[error("need at least {need} samples for shaped noise, got {got}")]
    TooShort { got: usize, need: usize },
    #[error("bad PSD table {path}: {reason}")]
    BadPsdFile { path: String, reason: String },
    #[error(transparent)]
    Audio(#[from] AudioError),
}

/// One augmentation condition: a noise spectrum at a target SNR with its ID.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub name: String,
    pub spectrum: SpectrumSpec,
    pub snr_db: f64,
    pub aug_id: u32,
}

impl NoiseSpec {
    /// White noise at 25 dB, USASI at 15 dB and electret sensor noise at 20 dB,
    /// with augmentation IDs 1, 2 and 3.
    pub fn defaults() -> Vec<NoiseSpec> {
        vec![
            NoiseSpec {
                name: "white".into(),
                spectrum: SpectrumSpec::White,
                snr_db: 25.0,
                aug_id: 1,
            },
            NoiseSpec {
                name: "usasi".into(),
                spectrum: SpectrumSpec::Usasi,
                snr_db: 15.0,
                aug_id: 2,
            },
            NoiseSpec {
                name: "sensor".into(),
                spectrum: default_sensor_table(),
                snr_db: 20.0,
                aug_id: 3,
            },
        ]
    }
}
