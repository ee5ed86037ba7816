//! Mixes each default augmentation noise into speech and remeasures the SNR.

use augtts::noisegen::{measure_snr_db, mix_at_snr, NoiseSpec};
use augtts::testsignals::speech_like;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let speech = speech_like(5, 2.5, 22050);
    for spec in NoiseSpec::defaults() {
        let out = mix_at_snr(&speech, &spec.spectrum, spec.snr_db, 100 + spec.aug_id as u64)?;
        let measured = measure_snr_db(&speech, &out.mixture, out.mixture_gain)?;
        println!(
            "aug {} {:<7} target {:>4.1} dB  measured {:>6.3} dB  noise gain {:.5}",
            spec.aug_id, spec.name, spec.snr_db, measured, out.noise_gain
        );
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
