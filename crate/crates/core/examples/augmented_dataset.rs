//! Builds a noise-augmented dataset from three synthetic utterances and
//! verifies every mixture.

use augtts::audio::write_wav;
use augtts::augment::{build_augmented_dataset, build_summary, verify_augmented_dataset};
use augtts::curation::CorpusEntry;
use augtts::noisegen::NoiseSpec;
use augtts::testsignals::speech_like;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut subset = Vec::new();
    for i in 0..3u64 {
        let id = format!("utt{i}");
        let clip = speech_like(i, 1.0 + 0.5 * i as f64, 16000);
        write_wav(&clip, dir.path().join(format!("{id}.wav")))?;
        subset.push(CorpusEntry {
            id: id.clone(),
            audio_path: format!("{id}.wav").into(),
            text: format!("sentence {i}"),
            raw_text: String::new(),
            duration_s: clip.duration_s(),
        });
    }
    let out = dir.path().join("aug");
    let specs = NoiseSpec::defaults();
    let manifest = build_augmented_dataset(&subset, dir.path(), &specs, &out, 42, 1)?;
    let report = verify_augmented_dataset(&manifest, &out, 1)?;
    let summary = build_summary(&manifest, &specs, 42, Some(&report));
    println!("{}", serde_json::to_string_pretty(&summary)?);
    for e in manifest.iter().take(4) {
        println!("{} aug_id {} {}", e.id, e.aug_id, e.noise_name);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
