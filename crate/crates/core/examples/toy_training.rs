//! Trains the toy attention model on short clean sequences, checkpoints it
//! and decodes a held-out utterance.

use augtts::curation::BatchMode;
use augtts::toytrain::{
    evaluate_heldout, gen_synthetic_corpus, load_checkpoint, save_checkpoint, train, ToyConfig, ToyModel,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = gen_synthetic_corpus(12, 16, 120, (3, 8), &[], 9)?;
    let (train_set, heldout) = corpus.split(0.1);
    let config = ToyConfig {
        n_aug_ids: 1,
        steps: 400,
        ..ToyConfig::default()
    };
    let mut model = ToyModel::new(config)?;
    let report = train(&mut model, &train_set, BatchMode::Bucketed)?;
    println!(
        "loss {:.4} -> {:.4} in {} steps ({:.1} s)",
        report.initial_loss, report.final_loss, report.steps, report.wall_clock_s
    );

    let held = evaluate_heldout(&model, &corpus.task, &heldout, &[0])?;
    println!(
        "held-out median sharpness {:.3}, length accuracy {:.2}, RMSE {:.4}",
        held.sharpness_median, held.length_accuracy, held.rmse_by_aug_id[&0]
    );

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("toy.toym");
    save_checkpoint(&model, &path)?;
    let reloaded = load_checkpoint(&path)?;
    let tokens = &heldout[0].tokens;
    let inf = reloaded.infer(tokens, 0)?;
    println!(
        "tokens {tokens:?}: {} frames decoded, {} expected",
        inf.frames.len(),
        corpus.task.n_frames(tokens)
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
