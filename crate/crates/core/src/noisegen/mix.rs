use super::{shaped_noise, white_gaussian, NoiseError, SpectrumSpec};
use crate::audio::{active_speech_level_p56, mean_power, AudioClip, AudioError};

/// Result of mixing noise into speech.
#[derive(Debug, Clone, PartialEq)]
pub struct MixOutput {
    pub mixture: AudioClip,
    /// Gain applied to the unit-power noise before adding it to the speech.
    pub noise_gain: f64,
    /// Gain applied to the whole mixture to avoid clipping (1.0 if none).
    pub mixture_gain: f64,
}

/// Peak the rescued mixture is scaled to.
const RESCUE_PEAK: f64 = 0.99;

fn unit_noise(n: usize, spectrum: &SpectrumSpec, rate: u32, seed: u64) -> Result<Vec<f64>, NoiseError> {
    let mut noise = match spectrum {
        SpectrumSpec::White => white_gaussian(n, seed),
        // Shaping needs a second of noise; shorter requests are truncated.
        _ => shaped_noise(n.max(rate as usize), spectrum, rate, seed)?,
    };
    noise.truncate(n);
    let p = mean_power(&noise);
    noise.iter_mut().for_each(|v| *v /= p.sqrt());
    Ok(noise)
}

/// Adds noise so that active speech power over noise power is `snr_db`.
///
/// If the mixture peak would exceed 1.0 the whole mixture is scaled to a
/// peak of 0.99, which leaves the SNR untouched; the scale is returned as
/// `mixture_gain`.
pub fn mix_at_snr(
    speech: &AudioClip,
    spectrum: &SpectrumSpec,
    snr_db: f64,
    seed: u64,
) -> Result<MixOutput, NoiseError> {
    let level = active_speech_level_p56(speech)?;
    let noise = unit_noise(speech.len(), spectrum, speech.sample_rate_hz, seed)?;
    let noise_gain = (level.active_power() / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut samples: Vec<f64> = speech
        .samples
        .iter()
        .zip(&noise)
        .map(|(s, n)| s + noise_gain * n)
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mixture_gain = if peak > 1.0 { RESCUE_PEAK / peak } else { 1.0 };
    if mixture_gain != 1.0 {
        samples.iter_mut().for_each(|v| *v *= mixture_gain);
    }
    Ok(MixOutput {
        mixture: AudioClip::new(samples, speech.sample_rate_hz),
        noise_gain,
        mixture_gain,
    })
}

/// Achieved SNR of `mixture` against its clean source: active level of the
/// clean speech over the power of `mixture / mixture_gain − clean`.
pub fn measure_snr_db(clean: &AudioClip, mixture: &AudioClip, mixture_gain: f64) -> Result<f64, AudioError> {
    let level = active_speech_level_p56(clean)?;
    let n = clean.len().min(mixture.len());
    let residual: Vec<f64> = (0..n)
        .map(|i| mixture.samples[i] / mixture_gain - clean.samples[i])
        .collect();
    let p = mean_power(&residual);
    if p <= 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(level.active_level_db - 10.0 * p.log10())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noisegen::default_sensor_table;
    use crate::testsignals::speech_like;

    fn tone(rms: f64, secs: f64, rate: u32) -> AudioClip {
        let amp = rms * 2f64.sqrt();
        let n = (secs * rate as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| amp * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
    }

    #[test]
    fn steady_tone_at_20_db_uses_tenth_gain() {
        let out = mix_at_snr(&tone(1.0, 2.0, 16000), &SpectrumSpec::White, 20.0, 3).unwrap();
        // Unit-RMS tone scaled to stay inside full scale: RMS 1/sqrt(2).
        let expected = 0.1;
        assert!((out.noise_gain / expected - 1.0).abs() < 0.01, "{}", out.noise_gain);
    }

    #[test]
    fn default_targets_are_hit_on_speech_like_input() {
        for seed in 0..3 {
            let speech = speech_like(seed, 3.0, 16000);
            for (spec, snr) in [
                (SpectrumSpec::White, 25.0),
                (SpectrumSpec::Usasi, 15.0),
                (default_sensor_table(), 20.0),
            ] {
                let out = mix_at_snr(&speech, &spec, snr, seed + 100).unwrap();
                let got = measure_snr_db(&speech, &out.mixture, out.mixture_gain).unwrap();
                assert!((got - snr).abs() < 0.3, "{spec:?} {snr}: {got}");
            }
        }
    }

    #[test]
    fn overflow_is_rescued_without_changing_snr() {
        let loud = tone(0.7, 1.0, 8000);
        let out = mix_at_snr(&loud, &SpectrumSpec::White, 0.0, 9).unwrap();
        assert!(out.mixture_gain < 1.0);
        assert!(out.mixture.peak() <= 0.99 + 1e-12);
        let got = measure_snr_db(&loud, &out.mixture, out.mixture_gain).unwrap();
        assert!(got.abs() < 0.3, "{got}");
    }

    #[test]
    fn silent_speech_is_rejected() {
        let silent = AudioClip::new(vec![0.0; 16000], 16000);
        assert!(matches!(
            mix_at_snr(&silent, &SpectrumSpec::White, 20.0, 0),
            Err(NoiseError::Audio(AudioError::SilentSignal))
        ));
    }

    #[test]
    fn noise_gain_scales_with_speech() {
        let speech = speech_like(4, 2.0, 8000);
        let base = mix_at_snr(&speech, &SpectrumSpec::Usasi, 15.0, 1).unwrap();
        let louder = mix_at_snr(&speech.scaled(2.5), &SpectrumSpec::Usasi, 15.0, 1).unwrap();
        assert!((louder.noise_gain / (2.5 * base.noise_gain) - 1.0).abs() < 0.01);
        let again = mix_at_snr(&speech, &SpectrumSpec::Usasi, 15.0, 1).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn short_speech_still_gets_shaped_noise() {
        let speech = speech_like(8, 0.6, 16000);
        let out = mix_at_snr(&speech, &SpectrumSpec::Usasi, 15.0, 2).unwrap();
        assert_eq!(out.mixture.len(), speech.len());
    }
}
