//! ITU-T P.56 Method B active speech level.
//!
//! The envelope is the rectified signal passed through two cascaded one-pole
//! smoothers with a 30 ms time constant. For each rung of a factor-of-two
//! threshold ladder (0 dBFS down to 2⁻³⁰), a sample counts as active while the
//! envelope is at or above the rung, or for up to 200 ms of hangover after it
//! drops below. The active level is the rung-wise level `Σx² / active_count`
//! interpolated (in dB) to the point where it sits 15.9 dB above the
//! threshold.

use super::{AudioClip, AudioError};

pub const TIME_CONSTANT_S: f64 = 0.03;
pub const HANGOVER_S: f64 = 0.2;
pub const MARGIN_DB: f64 = 15.9;
pub const LADDER_RUNGS: usize = 31;
pub const MIN_DURATION_S: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ActiveLevelResult {
    /// Active speech level, dBFS.
    pub active_level_db: f64,
    /// Fraction of time the signal is active, `mean power / active power`.
    pub activity_factor: f64,
    /// Long-term level `10·log10(mean(x²))`, dBFS.
    pub long_term_level_db: f64,
}

impl ActiveLevelResult {
    /// Active power as a linear power ratio.
    pub fn active_power(&self) -> f64 {
        10f64.powf(self.active_level_db / 10.0)
    }
}

/// Measures the active speech level of `clip`.
pub fn active_speech_level_p56(clip: &AudioClip) -> Result<ActiveLevelResult, AudioError> {
    let fs = clip.sample_rate_hz as f64;
    if clip.duration_s() < MIN_DURATION_S {
        return Err(AudioError::SignalTooShort {
            got_s: clip.duration_s(),
            need_s: MIN_DURATION_S,
        });
    }
    let x = &clip.samples;
    let n = x.len();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy <= 0.0 {
        return Err(AudioError::SilentSignal);
    }

    let g = (-1.0 / (TIME_CONSTANT_S * fs)).exp();
    let hangover = (HANGOVER_S * fs).round() as u64;
    let thresholds: Vec<f64> = (0..LADDER_RUNGS).map(|j| 0.5f64.powi(j as i32)).collect();

    let mut active = [0u64; LADDER_RUNGS];
    let mut hang = [hangover; LADDER_RUNGS];
    let (mut p, mut q) = (0.0f64, 0.0f64);
    for &v in x {
        p = g * p + (1.0 - g) * v.abs();
        q = g * q + (1.0 - g) * p;
        for j in 0..LADDER_RUNGS {
            if q >= thresholds[j] {
                active[j] += 1;
                hang[j] = 0;
            } else if hang[j] < hangover {
                active[j] += 1;
                hang[j] += 1;
            }
        }
    }

    let long_term_level_db = 10.0 * (energy / n as f64).log10();
    // Rung-wise active level and its distance to the threshold level.
    let level = |j: usize| 10.0 * (energy / active[j] as f64).log10();
    let delta = |j: usize| level(j) - 20.0 * thresholds[j].log10();

    // Walk up from the lowest threshold: the distance shrinks as the
    // threshold rises; find the first rung at or inside the margin.
    let mut active_level_db = None;
    for j in (0..LADDER_RUNGS).rev() {
        let inside = active[j] == 0 || delta(j) <= MARGIN_DB;
        if !inside {
            continue;
        }
        if j == LADDER_RUNGS - 1 {
            active_level_db = Some(level(j));
        } else if active[j] == 0 {
            active_level_db = Some(level(j + 1));
        } else {
            let (lo, hi) = (j + 1, j);
            let (d_lo, d_hi) = (delta(lo), delta(hi));
            let frac = if d_lo > d_hi {
                (d_lo - MARGIN_DB) / (d_lo - d_hi)
            } else {
                1.0
            };
            active_level_db = Some(level(lo) + frac * (level(hi) - level(lo)));
        }
        break;
    }
    // Every rung outside the margin: the envelope never got close to the
    // ladder top, so the highest rung with activity is the best estimate.
    let active_level_db = match active_level_db {
        Some(v) => v,
        None => (0..LADDER_RUNGS)
            .find(|&j| active[j] > 0)
            .map(level)
            .ok_or(AudioError::SilentSignal)?,
    };

    let active_level_db = active_level_db.max(long_term_level_db);
    let activity_factor = 10f64
        .powf((long_term_level_db - active_level_db) / 10.0)
        .clamp(f64::MIN_POSITIVE, 1.0);
    Ok(ActiveLevelResult {
        active_level_db,
        activity_factor,
        long_term_level_db,
    })
}
