//! Synthetic signals for fixtures, examples and tests.

use crate::audio::AudioClip;
use crate::rng::SeededRng;
use std::f64::consts::PI;

/// Constant-amplitude sine.
pub fn tone(freq_hz: f64, amplitude: f64, secs: f64, sample_rate_hz: u32) -> AudioClip {
    let n = (secs * sample_rate_hz as f64).round() as usize;
    let fs = sample_rate_hz as f64;
    AudioClip::new(
        (0..n).map(|i| amplitude * (2.0 * PI * freq_hz * i as f64 / fs).sin()).collect(),
        sample_rate_hz,
    )
}

/// Speech-like test signal: harmonic "syllables" with a 4 Hz envelope
/// separated by random pauses. Fundamental, level and timing come from `seed`.
pub fn speech_like(seed: u64, secs: f64, sample_rate_hz: u32) -> AudioClip {
    let mut rng = SeededRng::new(seed);
    let fs = sample_rate_hz as f64;
    let f0 = rng.uniform_range(90.0, 220.0);
    let level = rng.uniform_range(0.05, 0.3);
    let n = (secs * fs) as usize;
    let mut samples = vec![0.0; n];
    let mut t = (rng.uniform_range(0.05, 0.3) * fs) as usize;
    while t < n {
        let len = (rng.uniform_range(0.2, 0.8) * fs) as usize;
        for (i, s) in samples.iter_mut().enumerate().take((t + len).min(n)).skip(t) {
            let tt = (i - t) as f64 / fs;
            let env = (PI * (i - t) as f64 / len as f64).sin() * (0.6 + 0.4 * (2.0 * PI * 4.0 * tt).sin());
            let ph = 2.0 * PI * f0 * i as f64 / fs;
            let voiced: f64 = (1..=8).map(|h| (h as f64 * ph).sin() / h as f64).sum();
            *s = level * env * voiced;
        }
        t += len + (rng.uniform_range(0.1, 0.6) * fs) as usize;
    }
    AudioClip::new(samples, sample_rate_hz)
}
