//! Active speech level and log-mel features of a synthetic utterance.

use augtts::audio::{active_speech_level_p56, mel_spectrogram, MelConfig};
use augtts::testsignals::speech_like;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let clip = speech_like(11, 3.0, 22050);
    let level = active_speech_level_p56(&clip)?;
    println!(
        "active level {:.2} dBFS, long-term {:.2} dBFS, activity {:.2}",
        level.active_level_db, level.long_term_level_db, level.activity_factor
    );

    let mel = mel_spectrogram(&clip, &MelConfig::default())?;
    let loudest = mel
        .frames
        .iter()
        .map(|f| f.iter().copied().fold(f32::MIN, f32::max))
        .fold(f32::MIN, f32::max);
    println!("{} mel frames of {} bands, peak log energy {loudest:.2}", mel.n_frames(), mel.config.n_mels);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
