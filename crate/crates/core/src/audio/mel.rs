use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{AudioClip, AudioError};

const MELB_MAGIC: &[u8; 4] = b"MELB";

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub sample_rate_hz: u32,
    pub n_fft: usize,
    pub hop_length: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 22050,
            n_fft: 1024,
            hop_length: 256,
            win_length: 1024,
            n_mels: 80,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<(), AudioError> {
        let bad = |m: &str| Err(AudioError::BadConfig(m.to_string()));
        if self.sample_rate_hz == 0 {
            return bad("sample_rate_hz must be positive");
        }
        if self.n_fft == 0 || self.hop_length == 0 || self.win_length == 0 || self.n_mels == 0 {
            return bad("n_fft, hop_length, win_length and n_mels must be positive");
        }
        if self.win_length > self.n_fft {
            return bad("win_length exceeds n_fft");
        }
        if self.hop_length > self.win_length {
            return bad("hop_length exceeds win_length");
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(self.fmin_hz >= 0.0 && self.fmin_hz < self.fmax_hz) {
            return bad("need 0 <= fmin < fmax");
        }
        if self.fmax_hz > nyquist {
            return Err(AudioError::BadConfig(format!(
                "fmax {} Hz exceeds Nyquist {} Hz",
                self.fmax_hz, nyquist
            )));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive");
        }
        Ok(())
    }

    /// Frame count under no-padding framing.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.win_length {
            0
        } else {
            1 + (n_samples - self.win_length) / self.hop_length
        }
    }
}

/// Log-mel frames, `frames[t][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Vec<Vec<f32>>,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

// Slaney mel scale: linear below 1 kHz, logarithmic above.
const F_SP: f64 = 200.0 / 3.0;
const MIN_LOG_HZ: f64 = 1000.0;
const MIN_LOG_MEL: f64 = MIN_LOG_HZ / F_SP;

fn logstep() -> f64 {
    6.4f64.ln() / 27.0
}

pub(crate) fn hz_to_mel(f: f64) -> f64 {
    if f < MIN_LOG_HZ {
        f / F_SP
    } else {
        MIN_LOG_MEL + (f / MIN_LOG_HZ).ln() / logstep()
    }
}

pub(crate) fn mel_to_hz(m: f64) -> f64 {
    if m < MIN_LOG_MEL {
        m * F_SP
    } else {
        MIN_LOG_HZ * ((m - MIN_LOG_MEL) * logstep()).exp()
    }
}

/// Band edge frequencies: `n_mels + 2` points equally spaced in mel.
pub(crate) fn mel_points_hz(cfg: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz));
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Area-normalized triangular filters, `n_mels` rows of `n_fft/2 + 1` weights.
pub fn mel_filterbank(cfg: &MelConfig) -> Vec<Vec<f64>> {
    let n_bins = cfg.n_fft / 2 + 1;
    let points = mel_points_hz(cfg);
    let bin_hz = |k: usize| k as f64 * cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
    (0..cfg.n_mels)
        .map(|m| {
            let (left, center, right) = (points[m], points[m + 1], points[m + 2]);
            let norm = 2.0 / (right - left);
            (0..n_bins)
                .map(|k| {
                    let f = bin_hz(k);
                    let up = (f - left) / (center - left);
                    let down = (right - f) / (right - center);
                    norm * up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

fn periodic_hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed magnitude STFT, mel filterbank, natural log with a floor.
pub fn mel_spectrogram(clip: &AudioClip, cfg: &MelConfig) -> Result<MelSpectrogram, AudioError> {
    cfg.validate()?;
    if clip.sample_rate_hz != cfg.sample_rate_hz {
        return Err(AudioError::RateMismatch {
            clip: clip.sample_rate_hz,
            expected: cfg.sample_rate_hz,
        });
    }
    if clip.len() < cfg.win_length {
        return Err(AudioError::ClipTooShort {
            got: clip.len(),
            need: cfg.win_length,
        });
    }
    let bank = mel_filterbank(cfg);
    let window = periodic_hann(cfg.win_length);
    let offset = (cfg.n_fft - cfg.win_length) / 2;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.n_fft);
    let n_bins = cfg.n_fft / 2 + 1;
    let floor_ln = cfg.log_floor.ln();

    let mut buf = vec![Complex::new(0.0, 0.0); cfg.n_fft];
    let mut mag = vec![0.0; n_bins];
    let frames = (0..cfg.n_frames(clip.len()))
        .map(|t| {
            buf.fill(Complex::new(0.0, 0.0));
            let start = t * cfg.hop_length;
            for (i, (&x, &w)) in clip.samples[start..start + cfg.win_length]
                .iter()
                .zip(&window)
                .enumerate()
            {
                buf[offset + i] = Complex::new(x * w, 0.0);
            }
            fft.process(&mut buf);
            for (m, c) in mag.iter_mut().zip(&buf) {
                *m = c.norm();
            }
            bank.iter()
                .map(|row| {
                    let e: f64 = row.iter().zip(&mag).map(|(w, m)| w * m).sum();
                    if e > cfg.log_floor {
                        e.ln() as f32
                    } else {
                        floor_ln as f32
                    }
                })
                .collect()
        })
        .collect();
    Ok(MelSpectrogram {
        frames,
        config: cfg.clone(),
    })
}

/// Writes the `MELB` container: magic, u32 T, u32 n_mels, u32 0, then f32 data.
pub fn write_melb(mel: &MelSpectrogram, path: impl AsRef<Path>) -> Result<(), AudioError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MELB_MAGIC)?;
    w.write_all(&(mel.frames.len() as u32).to_le_bytes())?;
    w.write_all(&(mel.config.n_mels as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for row in &mel.frames {
        for v in row {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a `MELB` file as `frames[t][m]`.
pub fn read_melb(path: impl AsRef<Path>) -> Result<Vec<Vec<f32>>, AudioError> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MELB_MAGIC {
        return Err(AudioError::MalformedMel("missing MELB header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let (t, m) = (u32_at(4), u32_at(8));
    if bytes.len() != 16 + 4 * t * m {
        return Err(AudioError::MalformedMel(format!(
            "header says {t}x{m} but payload has {} bytes",
            bytes.len() - 16
        )));
    }
    Ok(bytes[16..]
        .chunks_exact(4 * m.max(1))
        .take(t)
        .map(|row| {
            row.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_hits_the_floor_everywhere() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&AudioClip::new(vec![0.0; 4096], 22050), &cfg).unwrap();
        let floor = (cfg.log_floor.ln()) as f32;
        assert!(mel.frames.iter().flatten().all(|&v| v == floor));
    }

    #[test]
    fn window_length_input_gives_one_frame() {
        let cfg = MelConfig::default();
        let mel = mel_spectrogram(&AudioClip::new(vec![0.1; 1024], 22050), &cfg).unwrap();
        assert_eq!(mel.n_frames(), 1);
        assert_eq!(mel.frames[0].len(), 80);
    }

    #[test]
    fn tone_at_band_center_peaks_in_that_band() {
        let cfg = MelConfig::default();
        let points = mel_points_hz(&cfg);
        for &k in &[30usize, 45, 60, 75] {
            // Snap the tone to the FFT bin closest to the band center.
            let bin_hz = cfg.sample_rate_hz as f64 / cfg.n_fft as f64;
            let f = (points[k + 1] / bin_hz).round() * bin_hz;
            let clip = AudioClip::new(
                (0..8192)
                    .map(|i| 0.5 * (2.0 * std::f64::consts::PI * f * i as f64 / 22050.0).sin())
                    .collect(),
                22050,
            );
            let mel = mel_spectrogram(&clip, &cfg).unwrap();
            for frame in &mel.frames[1..mel.n_frames() - 1] {
                let argmax = frame
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .unwrap()
                    .0;
                assert_eq!(argmax, k);
            }
        }
    }

    #[test]
    fn filterbank_rows_are_positive_and_tile_range() {
        let cfg = MelConfig::default();
        let bank = mel_filterbank(&cfg);
        assert_eq!(bank.len(), 80);
        assert!(bank.iter().all(|row| row.iter().sum::<f64>() > 0.0));
        let points = mel_points_hz(&cfg);
        assert!((points[0] - cfg.fmin_hz).abs() < 1e-9);
        assert!((points[81] - cfg.fmax_hz).abs() < 1e-6);
        assert!((mel_to_hz(hz_to_mel(3456.0)) - 3456.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_configs_and_short_clips() {
        let cfg = MelConfig {
            fmax_hz: 12000.0,
            ..MelConfig::default()
        };
        assert!(matches!(
            mel_spectrogram(&AudioClip::new(vec![0.0; 2048], 22050), &cfg),
            Err(AudioError::BadConfig(_))
        ));
        assert!(matches!(
            mel_spectrogram(&AudioClip::new(vec![0.0; 1000], 22050), &MelConfig::default()),
            Err(AudioError::ClipTooShort { .. })
        ));
        assert!(matches!(
            mel_spectrogram(&AudioClip::new(vec![0.0; 2048], 16000), &MelConfig::default()),
            Err(AudioError::RateMismatch { .. })
        ));
    }

    #[test]
    fn melb_round_trip() {
        let cfg = MelConfig {
            n_mels: 8,
            ..MelConfig::default()
        };
        let clip = AudioClip::new((0..3000).map(|i| (i as f64 * 0.01).sin() * 0.3).collect(), 22050);
        let mel = mel_spectrogram(&clip, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.melb");
        write_melb(&mel, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"MELB");
        assert_eq!(bytes.len(), 16 + 4 * mel.n_frames() * 8);
        assert_eq!(read_melb(&path).unwrap(), mel.frames);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn frame_count_formula(len in 64usize..3000, hop in 1usize..64) {
            let cfg = MelConfig { n_fft: 64, win_length: 64, hop_length: hop, n_mels: 4,
                fmax_hz: 4000.0, sample_rate_hz: 8000, ..MelConfig::default() };
            let clip = AudioClip::new(vec![0.01; len], 8000);
            let mel = mel_spectrogram(&clip, &cfg).unwrap();
            proptest::prop_assert_eq!(mel.n_frames(), 1 + (len - 64) / hop);
            let floor = cfg.log_floor.ln() as f32;
            proptest::prop_assert!(mel.frames.iter().flatten().all(|&v| v >= floor));
        }
    }
}
