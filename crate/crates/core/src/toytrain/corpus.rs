use serde::{Deserialize, Serialize};

use super::ToyError;
use crate::rng::SeededRng;

pub const MAX_TOKENS: usize = 64;

/// Feature-domain stand-in for one noise type: every element of every
/// frame gets `mean_shift + N(0, noise_std²)` added.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugProfile {
    pub mean_shift: f64,
    pub noise_std: f64,
}

impl AugProfile {
    pub const fn new(mean_shift: f64, noise_std: f64) -> Self {
        Self { mean_shift, noise_std }
    }

    pub fn defaults() -> Vec<AugProfile> {
        vec![
            AugProfile::new(0.0, 0.1),
            AugProfile::new(0.2, 0.05),
            AugProfile::new(-0.15, 0.08),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyExample {
    /// Symbols in `1..=K`; 0 is reserved for padding.
    pub tokens: Vec<usize>,
    pub aug_id: usize,
    pub target_frames: Vec<Vec<f64>>,
    /// True only at the last frame.
    pub gate_targets: Vec<bool>,
    /// Index of the generating utterance; noisy copies share it.
    pub utterance: usize,
}

impl ToyExample {
    pub fn n_frames(&self) -> usize {
        self.target_frames.len()
    }
}

/// Hidden generating process: one template frame and one emission count
/// per symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub templates: Vec<Vec<f64>>,
    pub emissions: Vec<usize>,
}

impl SyntheticTask {
    pub fn vocab_size(&self) -> usize {
        self.templates.len()
    }

    pub fn feat_dim(&self) -> usize {
        self.templates.first().map_or(0, Vec::len)
    }

    /// Σ emission counts over the tokens.
    pub fn n_frames(&self, tokens: &[usize]) -> usize {
        tokens.iter().map(|&t| self.emissions[t - 1]).sum()
    }

    /// Clean target: each token's template repeated by its emission count.
    pub fn render(&self, tokens: &[usize]) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .flat_map(|&t| std::iter::repeat_n(self.templates[t - 1].clone(), self.emissions[t - 1]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpus {
    pub task: SyntheticTask,
    pub examples: Vec<ToyExample>,
    pub n_utterances: usize,
}

impl ToyCorpus {
    /// Splits by utterance so every copy of a held-out utterance is held
    /// out. The last `ceil(fraction · n)` utterances are held out.
    pub fn split(&self, heldout_fraction: f64) -> (Vec<ToyExample>, Vec<ToyExample>) {
        let n_held = ((self.n_utterances as f64) * heldout_fraction).ceil() as usize;
        let first_held = self.n_utterances.saturating_sub(n_held);
        self.examples.iter().cloned().partition(|e| e.utterance < first_held)
    }
}

fn gate_targets(n: usize) -> Vec<bool> {
    (0..n).map(|t| t + 1 == n).collect()
}

/// Draws templates and emission counts, then `n_utts` token sequences with
/// a clean copy (aug_id 0) and one perturbed copy per profile
/// (aug_id 1, 2, ...).
pub fn gen_synthetic_corpus(
    k: usize,
    m: usize,
    n_utts: usize,
    len_range: (usize, usize),
    profiles: &[AugProfile],
    seed: u64,
) -> Result<ToyCorpus, ToyError> {
    let (lo, hi) = len_range;
    if k < 2 {
        return Err(ToyError::BadRange(format!("vocabulary needs at least 2 symbols, got {k}")));
    }
    if m == 0 {
        return Err(ToyError::BadRange("feature dimension must be at least 1".into()));
    }
    if lo < 1 || hi > MAX_TOKENS || lo > hi {
        return Err(ToyError::BadRange(format!(
            "length range ({lo}, {hi}) must satisfy 1 <= min <= max <= {MAX_TOKENS}"
        )));
    }
    if let Some(p) = profiles.iter().find(|p| !p.mean_shift.is_finite() || !(p.noise_std >= 0.0)) {
        return Err(ToyError::BadRange(format!("invalid aug profile {p:?}")));
    }
    let mut rng = SeededRng::new(seed);
    let templates: Vec<Vec<f64>> = (0..k).map(|_| (0..m).map(|_| rng.uniform_range(-1.0, 1.0)).collect()).collect();
    let emissions: Vec<usize> = (0..k).map(|_| 2 + rng.below(3) as usize).collect();
    let task = SyntheticTask { templates, emissions };

    let mut examples = Vec::with_capacity(n_utts * (profiles.len() + 1));
    for utterance in 0..n_utts {
        let len = lo + rng.below((hi - lo + 1) as u64) as usize;
        let tokens: Vec<usize> = (0..len).map(|_| 1 + rng.below(k as u64) as usize).collect();
        let clean = task.render(&tokens);
        let n = clean.len();
        for (a, p) in profiles.iter().enumerate() {
            let frames = clean
                .iter()
                .map(|f| f.iter().map(|v| v + p.mean_shift + p.noise_std * rng.standard_normal()).collect())
                .collect();
            examples.push(ToyExample {
                tokens: tokens.clone(),
                aug_id: a + 1,
                target_frames: frames,
                gate_targets: gate_targets(n),
                utterance,
            });
        }
        examples.push(ToyExample {
            tokens,
            aug_id: 0,
            target_frames: clean,
            gate_targets: gate_targets(n),
            utterance,
        });
    }
    // Clean copy first within each utterance.
    examples.sort_by_key(|e| (e.utterance, e.aug_id));
    Ok(ToyCorpus {
        task,
        examples,
        n_utterances: n_utts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_only_matches_templates() {
        let c = gen_synthetic_corpus(6, 4, 20, (2, 9), &[], 3).unwrap();
        assert_eq!(c.examples.len(), 20);
        for e in &c.examples {
            assert_eq!(e.aug_id, 0);
            assert_eq!(e.target_frames, c.task.render(&e.tokens));
            assert_eq!(e.n_frames(), c.task.n_frames(&e.tokens));
            assert!(e.tokens.iter().all(|&t| (1..=6).contains(&t)));
            assert_eq!(e.gate_targets.iter().filter(|&&g| g).count(), 1);
            assert!(*e.gate_targets.last().unwrap());
        }
        assert!(c.task.emissions.iter().all(|d| (2..=4).contains(d)));
        assert!(c.task.templates.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_noise_profile_copies_clean() {
        let c = gen_synthetic_corpus(5, 3, 10, (1, 5), &[AugProfile::new(0.0, 0.0)], 8).unwrap();
        assert_eq!(c.examples.len(), 20);
        for pair in c.examples.chunks(2) {
            assert_eq!((pair[0].aug_id, pair[1].aug_id), (0, 1));
            assert_eq!(pair[0].target_frames, pair[1].target_frames);
            assert_eq!(pair[0].tokens, pair[1].tokens);
        }
    }

    #[test]
    fn repeated_token_construction() {
        let task = SyntheticTask {
            templates: vec![vec![0.1, 0.2], vec![0.3, 0.4], vec![-0.5, 0.6]],
            emissions: vec![3, 4, 2],
        };
        let frames = task.render(&[3, 3]);
        assert_eq!(frames.len(), 4);
        assert!(frames.iter().all(|f| f == &task.templates[2]));
    }

    #[test]
    fn noisy_copies_have_profile_statistics() {
        let p = AugProfile::new(0.2, 0.05);
        let c = gen_synthetic_corpus(8, 16, 100, (10, 20), &[p], 1).unwrap();
        let diffs: Vec<f64> = c
            .examples
            .chunks(2)
            .flat_map(|pair| {
                pair[1]
                    .target_frames
                    .iter()
                    .flatten()
                    .zip(pair[0].target_frames.iter().flatten())
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>()
            })
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / diffs.len() as f64).sqrt();
        assert!((mean - 0.2).abs() < 0.002, "{mean}");
        assert!((std - 0.05).abs() < 0.002, "{std}");
    }

    #[test]
    fn bad_ranges() {
        assert!(matches!(gen_synthetic_corpus(1, 4, 5, (1, 3), &[], 0), Err(ToyError::BadRange(_))));
        assert!(matches!(gen_synthetic_corpus(4, 4, 5, (0, 3), &[], 0), Err(ToyError::BadRange(_))));
        assert!(matches!(gen_synthetic_corpus(4, 4, 5, (5, 3), &[], 0), Err(ToyError::BadRange(_))));
        assert!(matches!(gen_synthetic_corpus(4, 4, 5, (1, 65), &[], 0), Err(ToyError::BadRange(_))));
    }

    #[test]
    fn split_keeps_copies_together() {
        let c = gen_synthetic_corpus(4, 2, 10, (1, 3), &AugProfile::defaults(), 0).unwrap();
        let (train, held) = c.split(0.2);
        assert_eq!(held.len(), 8);
        assert_eq!(train.len(), 32);
        assert!(held.iter().all(|e| e.utterance >= 8));
    }

    #[test]
    fn deterministic() {
        let a = gen_synthetic_corpus(6, 4, 10, (2, 6), &AugProfile::defaults(), 42).unwrap();
        let b = gen_synthetic_corpus(6, 4, 10, (2, 6), &AugProfile::defaults(), 42).unwrap();
        assert_eq!(a, b);
    }
}
