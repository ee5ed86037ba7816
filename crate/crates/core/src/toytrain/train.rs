use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use super::corpus::{SyntheticTask, ToyExample};
use super::model::ToyModel;
use super::tape::Tensor;
use super::ToyError;
use crate::curation::{plan_batch_indices, BatchMode};
use crate::evalkit::{sharpness_score, AttentionMatrix, SummaryStats};
use crate::rng::derive_seed;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        Self {
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = ADAM_BETA1 * m.data[i] + (1.0 - ADAM_BETA1) * gi;
                v.data[i] = ADAM_BETA2 * v.data[i] + (1.0 - ADAM_BETA2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Rescales all gradients together so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| &g.data).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().flat_map(|g| &mut g.data).for_each(|v| *v *= k);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub mode: BatchMode,
    pub seed: u64,
    pub steps: usize,
    /// Teacher-forced loss over the whole training set before the first update.
    pub initial_loss: f64,
    /// Same measurement after the last update.
    pub final_loss: f64,
    /// Batch loss at every step, before that step's update.
    pub loss_curve: Vec<f64>,
    #[serde(skip)]
    pub wall_clock_s: f64,
    pub heldout: Option<HeldoutReport>,
}

/// Teacher-forced loss over all examples, frame-weighted so it equals the
/// masked mean over the whole set.
pub fn corpus_loss(model: &ToyModel, examples: &[ToyExample]) -> Result<f64, ToyError> {
    if examples.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let (mut sum, mut frames) = (0.0, 0usize);
    for chunk in examples.chunks(model.config.batch_size) {
        let refs: Vec<&ToyExample> = chunk.iter().collect();
        let n: usize = chunk.iter().map(ToyExample::n_frames).sum();
        sum += model.loss(&refs)? * n as f64;
        frames += n;
    }
    Ok(sum / frames as f64)
}

/// Adam with global-norm clipping and teacher forcing for
/// `model.config.steps` steps. Each pass over the data is planned with the
/// curation batch planner on frame counts, reseeded per epoch.
pub fn train(model: &mut ToyModel, corpus: &[ToyExample], mode: BatchMode) -> Result<TrainReport, ToyError> {
    if corpus.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let start = Instant::now();
    let cfg = model.config.clone();
    let lengths: Vec<f64> = corpus.iter().map(|e| e.n_frames() as f64).collect();
    let keys: Vec<usize> = (0..corpus.len()).collect();
    let initial_loss = corpus_loss(model, corpus)?;
    let mut adam = Adam::new(&model.params, cfg.learning_rate);
    let mut loss_curve = Vec::with_capacity(cfg.steps);
    let mut plan: Vec<Vec<usize>> = Vec::new();
    let mut epoch = 0u64;
    let mut cursor = 0;
    for step in 0..cfg.steps as u64 {
        if cursor == plan.len() {
            let seed = derive_seed(cfg.seed, &[b"toy-batches", &epoch.to_le_bytes()]);
            plan = plan_batch_indices(&lengths, &keys, cfg.batch_size, mode, seed);
            epoch += 1;
            cursor = 0;
        }
        let batch: Vec<&ToyExample> = plan[cursor].iter().map(|&i| &corpus[i]).collect();
        cursor += 1;
        let dropout_seed = derive_seed(cfg.seed, &[b"toy-dropout", &step.to_le_bytes()]);
        let (loss, mut grads) = model.training_gradients(&batch, Some(dropout_seed))?;
        clip_global_norm(&mut grads, cfg.grad_clip_norm);
        adam.update(&mut model.params, &grads);
        loss_curve.push(loss);
    }
    let final_loss = if cfg.steps == 0 {
        initial_loss
    } else {
        corpus_loss(model, corpus)?
    };
    Ok(TrainReport {
        mode,
        seed: cfg.seed,
        steps: cfg.steps,
        initial_loss,
        final_loss,
        loss_curve,
        wall_clock_s: start.elapsed().as_secs_f64(),
        heldout: None,
    })
}

/// Root-mean-square distance between an inferred frame sequence and a
/// reference. A length mismatch is scored by repeating the shorter
/// sequence's last frame, so stopping early or late costs error.
pub fn sequence_rmse(pred: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    let n = pred.len().max(reference.len());
    if n == 0 {
        return 0.0;
    }
    fn pick(s: &[Vec<f64>], t: usize) -> Option<&Vec<f64>> {
        s.get(t).or_else(|| s.last())
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for t in 0..n {
        match (pick(pred, t), pick(reference, t)) {
            (Some(p), Some(r)) => {
                for (a, b) in p.iter().zip(r) {
                    sum += (a - b) * (a - b);
                    count += 1;
                }
            }
            (None, Some(r)) => {
                sum += r.iter().map(|v| v * v).sum::<f64>();
                count += r.len();
            }
            _ => {}
        }
    }
    (sum / count.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeldoutReport {
    /// Sharpness of free-running inference attention, one per utterance.
    pub sharpness: Vec<f64>,
    pub sharpness_median: f64,
    /// Inference RMSE to the clean rendering, by the aug id used at inference.
    pub rmse_by_aug_id: BTreeMap<usize, f64>,
    /// Fraction of utterances whose inferred length is within ±2 frames.
    pub length_accuracy: f64,
    /// Clean inference attention, keyed by utterance index.
    #[serde(skip)]
    pub attention: Vec<(usize, AttentionMatrix)>,
}

/// Runs inference once per distinct held-out utterance and aug id.
/// Sharpness and length accuracy use the clean (aug id 0) inference.
pub fn evaluate_heldout(
    model: &ToyModel,
    task: &SyntheticTask,
    heldout: &[ToyExample],
    aug_ids: &[usize],
) -> Result<HeldoutReport, ToyError> {
    let mut utterances: BTreeMap<usize, &[usize]> = BTreeMap::new();
    for e in heldout {
        utterances.entry(e.utterance).or_insert(&e.tokens);
    }
    if utterances.is_empty() {
        return Err(ToyError::EmptyCorpus);
    }
    let mut sharpness = Vec::new();
    let mut attention = Vec::new();
    let mut within = 0usize;
    let mut rmse_sum: BTreeMap<usize, f64> = BTreeMap::new();
    for (&utt, tokens) in &utterances {
        let clean = task.render(tokens);
        for &a in aug_ids {
            let inf = model.infer(tokens, a)?;
            *rmse_sum.entry(a).or_default() += sequence_rmse(&inf.frames, &clean);
            if a == 0 {
                sharpness.push(sharpness_score(&inf.attention)?);
                if inf.frames.len().abs_diff(clean.len()) <= 2 {
                    within += 1;
                }
                attention.push((utt, inf.attention));
            }
        }
    }
    let n = utterances.len() as f64;
    let sharpness_median = SummaryStats::from_values(&sharpness).map_or(f64::NAN, |s| s.median);
    Ok(HeldoutReport {
        sharpness,
        sharpness_median,
        rmse_by_aug_id: rmse_sum.into_iter().map(|(a, s)| (a, s / n)).collect(),
        length_accuracy: within as f64 / n,
        attention,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toytrain::corpus::gen_synthetic_corpus;
    use crate::toytrain::ToyConfig;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::from_vec(1, 3, vec![1.0, 1.0, 1.0])];
        let g = vec![Tensor::from_vec(1, 3, vec![0.5, -2.0, 0.0])];
        let mut adam = Adam::new(&p, 0.01);
        adam.update(&mut p, &g);
        assert!((p[0].data[0] - 0.99).abs() < 1e-9);
        assert!((p[0].data[1] - 1.01).abs() < 1e-9);
        assert_eq!(p[0].data[2], 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Tensor::from_vec(1, 2, vec![3.0, 0.0]), Tensor::from_vec(1, 1, vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data[0] - 0.6).abs() < 1e-12 && (g[1].data[0] - 0.8).abs() < 1e-12);
        let mut small = vec![Tensor::from_vec(1, 1, vec![0.5])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data[0], 0.5);
    }

    #[test]
    fn rmse_penalizes_length_errors() {
        let r = vec![vec![1.0], vec![2.0], vec![3.0]];
        assert_eq!(sequence_rmse(&r, &r), 0.0);
        let short = vec![vec![1.0], vec![2.0]];
        assert!((sequence_rmse(&short, &r) - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((sequence_rmse(&[], &[vec![3.0, 4.0]]) - (12.5f64).sqrt()).abs() < 1e-12);
    }

    fn small_run(steps: usize) -> (ToyModel, TrainReport) {
        let corpus = gen_synthetic_corpus(4, 3, 12, (2, 5), &[], 2).unwrap();
        let cfg = ToyConfig {
            steps,
            batch_size: 4,
            learning_rate: 1e-2,
            ..ToyConfig::tiny()
        };
        let mut model = ToyModel::new(cfg).unwrap();
        let report = train(&mut model, &corpus.examples, BatchMode::Bucketed).unwrap();
        (model, report)
    }

    #[test]
    fn zero_steps_leaves_model_unchanged() {
        let (model, report) = small_run(0);
        assert_eq!(model, ToyModel::new(model.config.clone()).unwrap());
        assert!(report.loss_curve.is_empty());
        assert_eq!(report.initial_loss, report.final_loss);
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (m1, r1) = small_run(60);
        let (m2, r2) = small_run(60);
        assert_eq!(r1.loss_curve, r2.loss_curve);
        assert_eq!(m1, m2);
        assert!(r1.final_loss < r1.initial_loss);
    }
}
