use serde::{Deserialize, Serialize};

use super::corpus::ToyExample;
use super::tape::{Tape, Tensor, Var};
use super::ToyError;
use crate::evalkit::AttentionMatrix;
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub embed_dim: usize,
    pub enc_hidden: usize,
    /// 0 disables augmentation embeddings; aug ids are then ignored.
    pub aug_embed_dim: usize,
    pub dec_hidden: usize,
    pub attn_dim: usize,
    pub n_aug_ids: usize,
    pub max_decode_frames: usize,
    pub gate_loss_weight: f64,
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Dropout rate on the teacher-forced previous frame during training.
    /// At 1.0 the decoder never sees previous frames, in training or
    /// inference.
    #[serde(default)]
    pub feedback_dropout: f64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab_size: 12,
            feat_dim: 16,
            embed_dim: 16,
            enc_hidden: 32,
            aug_embed_dim: 4,
            dec_hidden: 32,
            attn_dim: 16,
            n_aug_ids: 4,
            max_decode_frames: 200,
            gate_loss_weight: 1.0,
            learning_rate: 3e-3,
            grad_clip_norm: 1.0,
            batch_size: 16,
            steps: 2000,
            seed: 0,
            feedback_dropout: 1.0,
        }
    }
}

impl ToyConfig {
    /// Small enough for exhaustive finite-difference checks.
    pub fn tiny() -> Self {
        Self {
            vocab_size: 4,
            feat_dim: 3,
            embed_dim: 3,
            enc_hidden: 4,
            aug_embed_dim: 2,
            dec_hidden: 4,
            attn_dim: 3,
            n_aug_ids: 3,
            max_decode_frames: 20,
            batch_size: 2,
            steps: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("feat_dim", self.feat_dim),
            ("embed_dim", self.embed_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("attn_dim", self.attn_dim),
            ("n_aug_ids", self.n_aug_ids),
            ("max_decode_frames", self.max_decode_frames),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ToyError::BadConfig(format!("{name} must be at least 1")));
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("grad_clip_norm", self.grad_clip_norm),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return Err(ToyError::BadConfig(format!("{name} must be positive, got {v}")));
        }
        if !(0.0..=1.0).contains(&self.feedback_dropout) {
            return Err(ToyError::BadConfig("feedback_dropout must lie in [0, 1]".into()));
        }
        if !(self.gate_loss_weight.is_finite() && self.gate_loss_weight >= 0.0) {
            return Err(ToyError::BadConfig("gate_loss_weight must be non-negative".into()));
        }
        Ok(())
    }

    /// Width of one encoder memory row: encoder state plus aug embedding.
    pub fn memory_dim(&self) -> usize {
        self.enc_hidden + self.aug_embed_dim
    }
}

pub const TOK_EMBED: usize = 0;
pub const ENC_W_IH: usize = 1;
pub const ENC_W_HH: usize = 2;
pub const ENC_B: usize = 3;
pub const AUG_EMBED: usize = 4;
pub const ATT_W_Q: usize = 5;
pub const ATT_W_M: usize = 6;
pub const ATT_B: usize = 7;
pub const ATT_V: usize = 8;
pub const DEC_W_IN: usize = 9;
pub const DEC_W_SS: usize = 10;
pub const DEC_B: usize = 11;
pub const OUT_W: usize = 12;
pub const OUT_B: usize = 13;
pub const GATE_W: usize = 14;
pub const GATE_B: usize = 15;

pub const PARAM_NAMES: [&str; 16] = [
    "tok_embed",
    "enc_w_ih",
    "enc_w_hh",
    "enc_b",
    "aug_embed",
    "att_w_q",
    "att_w_m",
    "att_b",
    "att_v",
    "dec_w_in",
    "dec_w_ss",
    "dec_b",
    "out_w",
    "out_b",
    "gate_w",
    "gate_b",
];

/// (rows, cols) of every parameter, in checkpoint order. Weights map
/// row vectors on the left: `y = x · W`.
pub fn param_shapes(c: &ToyConfig) -> Vec<(usize, usize)> {
    let mem = c.memory_dim();
    let dec_out = c.dec_hidden + mem;
    vec![
        (c.vocab_size, c.embed_dim),
        (c.embed_dim, c.enc_hidden),
        (c.enc_hidden, c.enc_hidden),
        (1, c.enc_hidden),
        (c.n_aug_ids, c.aug_embed_dim),
        (c.dec_hidden, c.attn_dim),
        (mem, c.attn_dim),
        (1, c.attn_dim),
        (c.attn_dim, 1),
        (c.feat_dim + mem, c.dec_hidden),
        (c.dec_hidden, c.dec_hidden),
        (1, c.dec_hidden),
        (dec_out, c.feat_dim),
        (1, c.feat_dim),
        (dec_out, 1),
        (1, 1),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub config: ToyConfig,
    pub params: Vec<Tensor>,
}

/// Result of one batched forward pass. Per-example vectors cover only that
/// example's own frames.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub frames: Vec<Vec<Vec<f64>>>,
    pub gates: Vec<Vec<f64>>,
    pub attention: Vec<AttentionMatrix>,
    pub loss: f64,
    pub mse: f64,
    pub bce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub frames: Vec<Vec<f64>>,
    pub gates: Vec<f64>,
    pub attention: AttentionMatrix,
}

struct Batch {
    size: usize,
    n_tokens: usize,
    n_frames: usize,
    token_rows: Vec<usize>,
    token_mask: Vec<bool>,
    aug_rows: Vec<usize>,
    token_lens: Vec<usize>,
    frame_lens: Vec<usize>,
}

struct Graph {
    tape: Tape,
    params: Vec<Var>,
    preds: Vec<Var>,
    gate_logits: Vec<Var>,
    alphas: Vec<Var>,
    loss: Var,
    mse: Var,
    bce: Var,
}

struct Encoded {
    memory: Var,
    keys: Var,
}

struct DecoderState {
    s: Var,
    c: Var,
}

impl ToyModel {
    /// Xavier-uniform weights, small aug embeddings, zero biases.
    pub fn new(config: ToyConfig) -> Result<Self, ToyError> {
        config.validate()?;
        let mut rng = SeededRng::new(derive_seed(config.seed, &[b"toy-init"]));
        let params = param_shapes(&config)
            .into_iter()
            .enumerate()
            .map(|(id, (r, c))| {
                let data = match id {
                    ENC_B | ATT_B | DEC_B | OUT_B | GATE_B => vec![0.0; r * c],
                    AUG_EMBED => (0..r * c).map(|_| rng.uniform_range(-0.1, 0.1)).collect(),
                    _ => {
                        let s = (6.0 / (r + c) as f64).sqrt();
                        (0..r * c).map(|_| rng.uniform_range(-s, s)).collect()
                    }
                };
                Tensor::from_vec(r, c, data)
            })
            .collect();
        Ok(Self { config, params })
    }

    pub fn from_params(config: ToyConfig, params: Vec<Tensor>) -> Result<Self, ToyError> {
        config.validate()?;
        let shapes = param_shapes(&config);
        if params.len() != shapes.len() {
            return Err(ToyError::ShapeMismatch(format!("expected {} parameter blocks", shapes.len())));
        }
        for ((p, (r, c)), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if (p.rows, p.cols) != (*r, *c) {
                return Err(ToyError::ShapeMismatch(format!(
                    "{name} is {}×{}, expected {r}×{c}",
                    p.rows, p.cols
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn batch(&self, examples: &[&ToyExample], extra_frames: usize, extra_tokens: usize) -> Result<Batch, ToyError> {
        let c = &self.config;
        if examples.is_empty() {
            return Err(ToyError::ShapeMismatch("empty batch".into()));
        }
        for e in examples {
            self.check_tokens(&e.tokens, e.aug_id)?;
            if e.target_frames.is_empty() || e.target_frames.iter().any(|f| f.len() != c.feat_dim) {
                return Err(ToyError::ShapeMismatch(format!(
                    "target frames must be non-empty rows of width {}",
                    c.feat_dim
                )));
            }
            if e.gate_targets.len() != e.target_frames.len() {
                return Err(ToyError::ShapeMismatch("gate targets and frames differ in length".into()));
            }
        }
        let n_tokens = examples.iter().map(|e| e.tokens.len()).max().unwrap_or(0) + extra_tokens;
        let n_frames = examples.iter().map(|e| e.n_frames()).max().unwrap_or(0) + extra_frames;
        let mut token_rows = Vec::with_capacity(examples.len() * n_tokens);
        let mut token_mask = Vec::with_capacity(examples.len() * n_tokens);
        let mut aug_rows = Vec::with_capacity(examples.len() * n_tokens);
        for e in examples {
            for n in 0..n_tokens {
                let tok = e.tokens.get(n).copied();
                token_rows.push(tok.map_or(0, |t| t - 1));
                token_mask.push(tok.is_some());
                aug_rows.push(e.aug_id);
            }
        }
        Ok(Batch {
            size: examples.len(),
            n_tokens,
            n_frames,
            token_rows,
            token_mask,
            aug_rows,
            token_lens: examples.iter().map(|e| e.tokens.len()).collect(),
            frame_lens: examples.iter().map(|e| e.n_frames()).collect(),
        })
    }

    fn check_tokens(&self, tokens: &[usize], aug_id: usize) -> Result<(), ToyError> {
        let c = &self.config;
        if tokens.is_empty() {
            return Err(ToyError::ShapeMismatch("token sequence is empty".into()));
        }
        if let Some(&t) = tokens.iter().find(|&&t| t == 0 || t > c.vocab_size) {
            return Err(ToyError::ShapeMismatch(format!("token {t} outside 1..={}", c.vocab_size)));
        }
        if aug_id >= c.n_aug_ids {
            return Err(ToyError::AugIdOutOfRange {
                aug_id,
                n_aug_ids: c.n_aug_ids,
            });
        }
        Ok(())
    }

    fn encode(&self, tape: &mut Tape, p: &[Var], b: &Batch) -> Encoded {
        let c = &self.config;
        let mut h = tape.leaf(Tensor::zeros(b.size, c.enc_hidden));
        let mut states = Vec::with_capacity(b.n_tokens);
        for n in 0..b.n_tokens {
            let idx: Vec<usize> = (0..b.size).map(|r| b.token_rows[r * b.n_tokens + n]).collect();
            let x = tape.gather_rows(p[TOK_EMBED], &idx);
            let xi = tape.matmul(x, p[ENC_W_IH]);
            let hh = tape.matmul(h, p[ENC_W_HH]);
            let pre = tape.add(xi, hh);
            let pre = tape.add_row(pre, p[ENC_B]);
            h = tape.tanh(pre);
            states.push(h);
        }
        let hs = tape.interleave(&states);
        let memory = if c.aug_embed_dim > 0 {
            let aug = tape.gather_rows(p[AUG_EMBED], &b.aug_rows);
            tape.concat_cols(&[hs, aug])
        } else {
            hs
        };
        let keys = tape.matmul(memory, p[ATT_W_M]);
        Encoded { memory, keys }
    }

    fn initial_state(&self, tape: &mut Tape, batch: usize) -> DecoderState {
        DecoderState {
            s: tape.leaf(Tensor::zeros(batch, self.config.dec_hidden)),
            c: tape.leaf(Tensor::zeros(batch, self.config.memory_dim())),
        }
    }

    /// One decoder step; returns the new state, the frame prediction, the
    /// gate logit, and the attention weights.
    fn step(
        &self,
        tape: &mut Tape,
        p: &[Var],
        enc: &Encoded,
        b: &Batch,
        state: &DecoderState,
        y_prev: Var,
    ) -> (DecoderState, Var, Var, Var) {
        let inp = tape.concat_cols(&[y_prev, state.c]);
        let a = tape.matmul(inp, p[DEC_W_IN]);
        let r = tape.matmul(state.s, p[DEC_W_SS]);
        let pre = tape.add(a, r);
        let pre = tape.add_row(pre, p[DEC_B]);
        let s = tape.tanh(pre);

        let q = tape.matmul(s, p[ATT_W_Q]);
        let e = tape.additive_energy(enc.keys, q, p[ATT_B], p[ATT_V], &b.token_mask);
        let alpha = tape.masked_softmax(e, &b.token_mask);
        let ctx = tape.weighted_sum(alpha, enc.memory);

        let sc = tape.concat_cols(&[s, ctx]);
        let y = tape.matmul(sc, p[OUT_W]);
        let y = tape.add_row(y, p[OUT_B]);
        let g = tape.matmul(sc, p[GATE_W]);
        let g = tape.add_row(g, p[GATE_B]);
        (DecoderState { s, c: ctx }, y, g, alpha)
    }

    fn build(
        &self,
        examples: &[&ToyExample],
        teacher_forcing: bool,
        extra_frames: usize,
        extra_tokens: usize,
        dropout_seed: Option<u64>,
    ) -> Result<(Graph, Batch), ToyError> {
        let b = self.batch(examples, extra_frames, extra_tokens)?;
        let m = self.config.feat_dim;
        let p = self.config.feedback_dropout;
        let mut dropout = dropout_seed.filter(|_| p > 0.0 && p < 1.0).map(SeededRng::new);
        let mut tape = Tape::new();
        let params: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
        let enc = self.encode(&mut tape, &params, &b);
        let mut state = self.initial_state(&mut tape, b.size);
        let mut y_prev = tape.leaf(Tensor::zeros(b.size, m));
        let (mut preds, mut gate_logits, mut alphas) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..b.n_frames {
            let (next, y, g, alpha) = self.step(&mut tape, &params, &enc, &b, &state, y_prev);
            state = next;
            preds.push(y);
            gate_logits.push(g);
            alphas.push(alpha);
            y_prev = if p >= 1.0 {
                tape.leaf(Tensor::zeros(b.size, m))
            } else if teacher_forcing {
                let mut data = Vec::with_capacity(b.size * m);
                for e in examples {
                    match e.target_frames.get(t) {
                        Some(f) => data.extend_from_slice(f),
                        None => data.extend(std::iter::repeat_n(0.0, m)),
                    }
                }
                if let Some(rng) = dropout.as_mut() {
                    for v in &mut data {
                        *v = if rng.uniform() < p { 0.0 } else { *v / (1.0 - p) };
                    }
                }
                tape.leaf(Tensor::from_vec(b.size, m, data))
            } else {
                y
            };
        }

        let mut target = Vec::with_capacity(b.n_frames * b.size * m);
        let mut gate_target = Vec::with_capacity(b.n_frames * b.size);
        let mut row_mask = Vec::with_capacity(b.n_frames * b.size);
        for t in 0..b.n_frames {
            for e in examples {
                let valid = t < e.n_frames();
                row_mask.push(valid);
                if valid {
                    target.extend_from_slice(&e.target_frames[t]);
                    gate_target.push(if e.gate_targets[t] { 1.0 } else { 0.0 });
                } else {
                    target.extend(std::iter::repeat_n(0.0, m));
                    gate_target.push(0.0);
                }
            }
        }
        let all_y = tape.vstack(&preds);
        let all_g = tape.vstack(&gate_logits);
        let target = Tensor::from_vec(b.n_frames * b.size, m, target);
        let mse = tape.masked_mse(all_y, target, &row_mask);
        let bce = tape.masked_bce_logits(all_g, &gate_target, &row_mask);
        let weighted = tape.scale(bce, self.config.gate_loss_weight);
        let loss = tape.add(mse, weighted);
        Ok((
            Graph {
                tape,
                params,
                preds,
                gate_logits,
                alphas,
                loss,
                mse,
                bce,
            },
            b,
        ))
    }

    /// Batched forward pass with loss. Padding is excluded from the loss and
    /// from the attention softmax.
    pub fn forward(&self, examples: &[&ToyExample], teacher_forcing: bool) -> Result<ForwardOutput, ToyError> {
        self.forward_padded(examples, teacher_forcing, 0, 0)
    }

    /// Like [`forward`](Self::forward) with extra padding frames and tokens
    /// appended to the whole batch.
    pub fn forward_padded(
        &self,
        examples: &[&ToyExample],
        teacher_forcing: bool,
        extra_frames: usize,
        extra_tokens: usize,
    ) -> Result<ForwardOutput, ToyError> {
        let (g, b) = self.build(examples, teacher_forcing, extra_frames, extra_tokens, None)?;
        let m = self.config.feat_dim;
        let mut frames = vec![Vec::new(); b.size];
        let mut gates = vec![Vec::new(); b.size];
        let mut rows = vec![Vec::new(); b.size];
        for t in 0..b.n_frames {
            let y = g.tape.value(g.preds[t]);
            let z = g.tape.value(g.gate_logits[t]);
            let a = g.tape.value(g.alphas[t]);
            for i in 0..b.size {
                if t < b.frame_lens[i] {
                    frames[i].push(y.data[i * m..(i + 1) * m].to_vec());
                    gates[i].push(logistic(z.data[i]));
                    rows[i].push(a.row(i)[..b.token_lens[i]].to_vec());
                }
            }
        }
        let attention = rows
            .into_iter()
            .map(|r| AttentionMatrix::new(r, None))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ForwardOutput {
            frames,
            gates,
            attention,
            loss: g.tape.value(g.loss).scalar(),
            mse: g.tape.value(g.mse).scalar(),
            bce: g.tape.value(g.bce).scalar(),
        })
    }

    /// Teacher-forced loss only.
    pub fn loss(&self, examples: &[&ToyExample]) -> Result<f64, ToyError> {
        let (g, _) = self.build(examples, true, 0, 0, None)?;
        Ok(g.tape.value(g.loss).scalar())
    }

    /// Teacher-forced loss and its gradient for every parameter block,
    /// without feedback dropout.
    pub fn gradients(&self, examples: &[&ToyExample]) -> Result<(f64, Vec<Tensor>), ToyError> {
        self.training_gradients(examples, None)
    }

    /// As [`gradients`](Self::gradients), with feedback dropout drawn from
    /// `dropout_seed` when one is given.
    pub fn training_gradients(
        &self,
        examples: &[&ToyExample],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<Tensor>), ToyError> {
        let (g, _) = self.build(examples, true, 0, 0, dropout_seed)?;
        let mut all = g.tape.backward(g.loss)?;
        let grads = g.params.iter().map(|&v| std::mem::replace(&mut all[v.0], Tensor::zeros(0, 0))).collect();
        Ok((g.tape.value(g.loss).scalar(), grads))
    }

    /// Autoregressive decoding from the model's own outputs. Stops after the
    /// first frame whose gate probability exceeds 0.5, or at
    /// `max_decode_frames`.
    pub fn infer(&self, tokens: &[usize], aug_id: usize) -> Result<Inference, ToyError> {
        self.check_tokens(tokens, aug_id)?;
        let c = &self.config;
        let n = tokens.len();
        let b = Batch {
            size: 1,
            n_tokens: n,
            n_frames: 0,
            token_rows: tokens.iter().map(|t| t - 1).collect(),
            token_mask: vec![true; n],
            aug_rows: vec![aug_id; n],
            token_lens: vec![n],
            frame_lens: vec![0],
        };
        let mut tape = Tape::new();
        let p: Vec<Var> = self.params.iter().map(|t| tape.leaf(t.clone())).collect();
        let enc = self.encode(&mut tape, &p, &b);
        let mut state = self.initial_state(&mut tape, 1);
        let mut y_prev = tape.leaf(Tensor::zeros(1, c.feat_dim));
        let (mut frames, mut gates, mut rows) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..c.max_decode_frames {
            let (next, y, g, alpha) = self.step(&mut tape, &p, &enc, &b, &state, y_prev);
            state = next;
            y_prev = if c.feedback_dropout >= 1.0 {
                tape.leaf(Tensor::zeros(1, c.feat_dim))
            } else {
                y
            };
            frames.push(tape.value(y).data.clone());
            rows.push(tape.value(alpha).data.clone());
            let gate = logistic(tape.value(g).scalar());
            gates.push(gate);
            if gate > 0.5 {
                break;
            }
        }
        Ok(Inference {
            frames,
            gates,
            attention: AttentionMatrix::new(rows, None)?,
        })
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Largest relative error between analytic gradients and central
/// differences over every parameter element.
pub fn grad_check(model: &ToyModel, examples: &[&ToyExample], eps: f64) -> Result<f64, ToyError> {
    let (_, grads) = model.gradients(examples)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (pi, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            let orig = probe.params[pi].data[e];
            probe.params[pi].data[e] = orig + eps;
            let plus = probe.loss(examples)?;
            probe.params[pi].data[e] = orig - eps;
            let minus = probe.loss(examples)?;
            probe.params[pi].data[e] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = g.data[e];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
