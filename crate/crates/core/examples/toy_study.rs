//! A small three-seed augmentation-embedding study. The full-size studies
//! are run with `augtts study`.

use augtts::toytrain::{run_study, StudyConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = StudyConfig::aug_embedding(vec![1, 2, 3]);
    cfg.n_utts = 40;
    cfg.len_range = (3, 6);
    cfg.toy.steps = 150;
    cfg.toy.max_decode_frames = 40;
    let result = run_study(&cfg, 2)?;
    for arm in cfg.study.arms() {
        let clean = result.median(arm, "rmse_aug0").unwrap_or(f64::NAN);
        let sharp = result.median(arm, "median_sharpness").unwrap_or(f64::NAN);
        println!("{arm:<13} clean RMSE {clean:.4}  sharpness {sharp:.3}");
    }
    for a in 1..=3 {
        if let Some(v) = result.median("embedding", &format!("rmse_aug{a}")) {
            println!("embedding arm decoded with aug id {a}: RMSE {v:.4}");
        }
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
