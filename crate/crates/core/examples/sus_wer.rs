//! Word error rates for a handful of transcripts, including one above 100%.

use augtts::evalkit::{normalize_text, sus_report, wer};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let pairs = [
        ("The green table sings loudly.", "the green table sings loudly"),
        ("A wall eats the quiet number.", "a wall beats the quiet number"),
        ("Why does the cloud walk?", "why does a loud cloud walk away"),
        ("No door!", "the old door is now open"),
    ];
    for (r, h) in &pairs {
        let b = wer(&normalize_text(r), &normalize_text(h))?;
        println!(
            "{:>6.1}%  S{} D{} I{}  {r:?}",
            b.wer_percent, b.substitutions, b.deletions, b.insertions
        );
    }
    let report = sus_report(&pairs)?;
    println!(
        "pooled {:.1}% over {} reference words",
        report.pooled_wer_percent, report.total_ref_words
    );
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
