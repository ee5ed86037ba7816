//! Sharpness of a diagonal, a blurred and a uniform alignment.

use std::collections::BTreeMap;

use augtts::evalkit::{sharpness_report, sharpness_score, AttentionMatrix};

fn blurred(frames: usize, tokens: usize, width: f64) -> AttentionMatrix {
    let rows = (0..frames)
        .map(|t| {
            let centre = t as f64 * (tokens - 1) as f64 / (frames - 1) as f64;
            let w: Vec<f64> = (0..tokens).map(|n| (-((n as f64 - centre) / width).powi(2)).exp()).collect();
            let sum: f64 = w.iter().sum();
            w.into_iter().map(|v| v / sum).collect()
        })
        .collect();
    AttentionMatrix::new(rows, None).expect("rows are normalized")
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut by_label = BTreeMap::new();
    for (label, width) in [("sharp", 0.2), ("blurred", 1.5), ("flat", 1e6)] {
        let ms: Vec<AttentionMatrix> = (8..12).map(|n| blurred(3 * n, n, width)).collect();
        println!("{label}: first matrix sharpness {:.3}", sharpness_score(&ms[0])?);
        by_label.insert(label.to_string(), ms);
    }
    for (label, s) in sharpness_report(&by_label)? {
        println!("{label:<8} median {:.3}  [{:.3}, {:.3}]", s.median, s.min, s.max);
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
