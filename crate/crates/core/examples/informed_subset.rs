//! Informed versus random subset selection and the padding each batching
//! mode leaves, on a synthetic corpus of 500 utterances.

use augtts::curation::{
    check_informed_invariants, padding_stats, plan_batches, select_informed_subset, select_random_subset,
    BatchMode, CorpusEntry,
};
use augtts::rng::SeededRng;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SeededRng::new(1);
    let corpus: Vec<CorpusEntry> = (0..500)
        .map(|i| CorpusEntry {
            id: format!("utt{i:03}"),
            audio_path: format!("wavs/utt{i:03}.wav").into(),
            text: "some words".into(),
            raw_text: String::new(),
            duration_s: rng.uniform_range(1.0, 10.0),
        })
        .collect();

    let informed = select_informed_subset(&corpus, 600.0)?;
    check_informed_invariants(&informed, &corpus)?;
    let random = select_random_subset(&corpus, 600.0, 7)?;
    println!("informed: {} utterances, {:.1} s", informed.len(), informed.total_duration_s);
    println!("random:   {} utterances, {:.1} s", random.len(), random.total_duration_s);

    for mode in [BatchMode::Bucketed, BatchMode::RandomShuffle] {
        let plan = plan_batches(&corpus, 16, mode, 3);
        let report = padding_stats(&plan, &corpus)?;
        println!("{mode:?}: mean padding ratio {:.3}", report.mean_padding_ratio);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
