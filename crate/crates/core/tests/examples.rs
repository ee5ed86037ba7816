//! Runs every example end to end.

#[allow(dead_code)]
#[path = "../examples/speech_level.rs"]
mod speech_level;

#[test]
fn speech_level_runs() {
    speech_level::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/noise_mixing.rs"]
mod noise_mixing;

#[test]
fn noise_mixing_runs() {
    noise_mixing::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/informed_subset.rs"]
mod informed_subset;

#[test]
fn informed_subset_runs() {
    informed_subset::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/augmented_dataset.rs"]
mod augmented_dataset;

#[test]
fn augmented_dataset_runs() {
    augmented_dataset::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/alignment_sharpness.rs"]
mod alignment_sharpness;

#[test]
fn alignment_sharpness_runs() {
    alignment_sharpness::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/sus_wer.rs"]
mod sus_wer;

#[test]
fn sus_wer_runs() {
    sus_wer::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/toy_training.rs"]
mod toy_training;

#[test]
fn toy_training_runs() {
    toy_training::run_example().unwrap();
}

#[allow(dead_code)]
#[path = "../examples/toy_study.rs"]
mod toy_study;

#[test]
fn toy_study_runs() {
    toy_study::run_example().unwrap();
}
