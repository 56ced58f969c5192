//! Sequence classifier: token embeddings, transformer blocks, mean pooling
//! over real tokens and an affine classifier, trained with Adam.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{
    sinusoidal_position_encoding, transformer_block_backward, transformer_block_forward,
    AdjustmentStrategy, AttentionInputs, BlockForward, Segment, TransformerBlockParams,
};
use crate::distance::{DistanceCache, HeadDistanceParams, MappingKind};
use crate::error::{argument, Error, Result};
use crate::params::{view, view_mut, ParamView, ParamViewMut, Parameters};
use crate::tasks::{Example, PAD_ID};
use crate::tensor::{gemm, matmul, matmul_nt, Matrix};

fn default_d_model() -> usize {
    256
}
fn default_heads() -> usize {
    16
}
fn default_head_dim() -> usize {
    16
}
fn default_d_ff() -> usize {
    512
}
fn default_layers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab: usize,
    #[serde(default = "default_d_model")]
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
    #[serde(default = "default_d_ff")]
    pub d_ff: usize,
    pub classes: usize,
    #[serde(default)]
    pub mapping: MappingKind,
    #[serde(default)]
    pub strategy: AdjustmentStrategy,
    pub max_len: usize,
    /// Adds sin/cos position encodings to the embeddings; vanilla only.
    #[serde(default)]
    pub use_sinusoidal_pos: bool,
    #[serde(default = "default_layers")]
    pub layers: usize,
}

impl ModelConfig {
    /// Default dimensions for the given vocabulary, class count and length.
    pub fn new(vocab: usize, classes: usize, max_len: usize) -> Self {
        Self {
            vocab,
            d_model: default_d_model(),
            heads: default_heads(),
            head_dim: default_head_dim(),
            d_ff: default_d_ff(),
            classes,
            mapping: MappingKind::default(),
            strategy: AdjustmentStrategy::default(),
            max_len,
            use_sinusoidal_pos: false,
            layers: default_layers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab < 2 {
            return fail(format!(
                "vocab must be at least 2 (padding and unknown), got {}",
                self.vocab
            ));
        }
        if self.classes < 2 {
            return fail(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.heads == 0 || self.head_dim == 0 || self.d_ff == 0 || self.layers == 0 {
            return fail("heads, head_dim, d_ff and layers must be positive".into());
        }
        if self.d_model != self.heads * self.head_dim {
            return fail(format!(
                "d_model ({}) must equal heads ({}) x head_dim ({})",
                self.d_model, self.heads, self.head_dim
            ));
        }
        if self.max_len == 0 {
            return fail("max_len must be at least 1".into());
        }
        if self.use_sinusoidal_pos {
            if self.strategy != AdjustmentStrategy::Vanilla {
                return fail(
                    "use_sinusoidal_pos is only available with the vanilla strategy".into(),
                );
            }
            if !self.d_model.is_multiple_of(2) {
                return fail("sinusoidal position encoding needs an even d_model".into());
            }
        }
        self.mapping
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embeddings: Matrix,
    pub blocks: Vec<TransformerBlockParams>,
    pub classifier_w: Matrix,
    pub classifier_b: Matrix,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let embeddings = Matrix::random_uniform(cfg.vocab, cfg.d_model, -0.05, 0.05, rng);
        let blocks = (0..cfg.layers)
            .map(|_| {
                TransformerBlockParams::init(
                    cfg.d_model,
                    cfg.heads,
                    cfg.head_dim,
                    cfg.d_ff,
                    &cfg.mapping,
                    rng,
                )
            })
            .collect();
        let limit = (6.0 / (cfg.d_model + cfg.classes) as f64).sqrt();
        Ok(Self {
            embeddings,
            blocks,
            classifier_w: Matrix::random_uniform(cfg.d_model, cfg.classes, -limit, limit, rng),
            classifier_b: Matrix::zeros(1, cfg.classes),
        })
    }

    /// Distance parameters of every head in `layer`.
    pub fn distance_params(&self, layer: usize) -> &[HeadDistanceParams] {
        &self.blocks[layer].attention.distance
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let mut expected = ModelParams::init(cfg, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        expected.assign_matrices(&self.to_matrices())
    }
}

impl Parameters for ModelParams {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = vec![view(
            "",
            "embeddings",
            self.embeddings.shape(),
            self.embeddings.as_slice(),
        )];
        for (i, b) in self.blocks.iter().enumerate() {
            b.params_with_prefix(&format!("block{i}."), &mut out);
        }
        out.push(view(
            "",
            "classifier_w",
            self.classifier_w.shape(),
            self.classifier_w.as_slice(),
        ));
        out.push(view(
            "",
            "classifier_b",
            self.classifier_b.shape(),
            self.classifier_b.as_slice(),
        ));
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let shape = self.embeddings.shape();
        let mut out = vec![view_mut(
            "",
            "embeddings",
            shape,
            self.embeddings.as_mut_slice(),
        )];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut_with_prefix(&format!("block{i}."), &mut out);
        }
        let shape = self.classifier_w.shape();
        out.push(view_mut(
            "",
            "classifier_w",
            shape,
            self.classifier_w.as_mut_slice(),
        ));
        let shape = self.classifier_b.shape();
        out.push(view_mut(
            "",
            "classifier_b",
            shape,
            self.classifier_b.as_mut_slice(),
        ));
        out
    }
}

/// Adam with bias correction. Moments share the parameter layout.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: ModelParams,
    pub second_moment: ModelParams,
}

impl AdamState {
    pub const DEFAULT_LR: f64 = 1e-3;

    pub fn new(params: &ModelParams, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    pub fn update(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let g = grads.params();
        let m = self.first_moment.params_mut();
        let v = self.second_moment.params_mut();
        for (((p, g), m), v) in params.params_mut().into_iter().zip(g).zip(m).zip(v) {
            for (((p, &g), m), v) in p
                .values
                .iter_mut()
                .zip(g.values)
                .zip(m.values.iter_mut())
                .zip(v.values.iter_mut())
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

fn check_tokens(cfg: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(argument("empty token sequence"));
    }
    if tokens.len() > cfg.max_len {
        return Err(argument(format!(
            "sequence length {} exceeds max_len {}",
            tokens.len(),
            cfg.max_len
        )));
    }
    if let Some(&t) = tokens.iter().find(|&&t| t >= cfg.vocab) {
        return Err(Error::Index {
            what: "token id",
            index: t,
            bound: cfg.vocab,
        });
    }
    if tokens.iter().all(|&t| t == PAD_ID) {
        return Err(argument("sequence consists only of padding"));
    }
    Ok(())
}

/// Forward state of a batch, kept for the backward pass.
pub struct ModelForward {
    tokens: Vec<usize>,
    segments: Vec<Segment>,
    mask: Vec<bool>,
    valid_counts: Vec<usize>,
    block_inputs: Vec<Matrix>,
    blocks: Vec<BlockForward>,
    pooled: Matrix,
    /// `batch × classes`.
    pub logits: Matrix,
}

impl ModelForward {
    pub fn block(&self, layer: usize) -> &BlockForward {
        &self.blocks[layer]
    }
}

fn attention_inputs<'a>(
    cfg: &'a ModelConfig,
    segments: &'a [Segment],
    mask: &'a [bool],
    distances: &'a DistanceCache,
) -> AttentionInputs<'a> {
    AttentionInputs {
        mapping: &cfg.mapping,
        strategy: cfg.strategy,
        segments,
        mask: Some(mask),
        distances,
    }
}

/// Runs a batch of sequences; the rows of all sequences are stacked.
pub fn forward_batch(
    params: &ModelParams,
    cfg: &ModelConfig,
    sequences: &[&[usize]],
    distances: &DistanceCache,
) -> Result<ModelForward> {
    if sequences.is_empty() {
        return Err(argument("empty batch"));
    }
    for s in sequences {
        check_tokens(cfg, s)?;
    }
    let segments = Segment::tile(sequences.iter().map(|s| s.len()));
    let tokens: Vec<usize> = sequences.iter().flat_map(|s| s.iter().copied()).collect();
    let mask: Vec<bool> = tokens.iter().map(|&t| t != PAD_ID).collect();
    let valid_counts: Vec<usize> = sequences
        .iter()
        .map(|s| s.iter().filter(|&&t| t != PAD_ID).count())
        .collect();

    let mut x = Matrix::zeros(tokens.len(), cfg.d_model);
    for (r, &t) in tokens.iter().enumerate() {
        x.row_mut(r).copy_from_slice(params.embeddings.row(t));
    }
    if cfg.use_sinusoidal_pos {
        let longest = segments.iter().map(|s| s.len).max().unwrap_or(1);
        let pe = sinusoidal_position_encoding(longest, cfg.d_model)?;
        for seg in &segments {
            for pos in 0..seg.len {
                for (o, p) in x.row_mut(seg.start + pos).iter_mut().zip(pe.row(pos)) {
                    *o += p;
                }
            }
        }
    }

    let inputs = attention_inputs(cfg, &segments, &mask, distances);
    let mut block_inputs = Vec::with_capacity(params.blocks.len());
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let fwd = transformer_block_forward(&x, block, &inputs)?;
        block_inputs.push(std::mem::replace(&mut x, fwd.output.clone()));
        blocks.push(fwd);
    }

    let mut pooled = Matrix::zeros(sequences.len(), cfg.d_model);
    for (b, seg) in segments.iter().enumerate() {
        let out = pooled.row_mut(b);
        let rows = seg.start..seg.start + seg.len;
        for r in rows.filter(|&r| mask[r]) {
            for (o, v) in out.iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        let inv = 1.0 / valid_counts[b] as f64;
        for o in out.iter_mut() {
            *o *= inv;
        }
    }
    let mut logits = matmul(&pooled, &params.classifier_w)?;
    for b in 0..logits.rows() {
        for (o, c) in logits
            .row_mut(b)
            .iter_mut()
            .zip(params.classifier_b.as_slice())
        {
            *o += c;
        }
    }
    Ok(ModelForward {
        tokens,
        segments,
        mask,
        valid_counts,
        block_inputs,
        blocks,
        pooled,
        logits,
    })
}

/// Gradients of a loss whose gradient w.r.t. the logits is `d_logits`.
pub fn backward_batch(
    params: &ModelParams,
    cfg: &ModelConfig,
    fwd: &ModelForward,
    d_logits: &Matrix,
    distances: &DistanceCache,
) -> Result<ModelParams> {
    if d_logits.shape() != fwd.logits.shape() {
        return Err(Error::Dimension {
            op: "backward_batch",
            left: fwd.logits.shape(),
            right: d_logits.shape(),
        });
    }
    let mut grads = params.zeros_like();
    gemm(
        1.0,
        fwd.pooled.view_t(),
        d_logits.view(),
        1.0,
        grads.classifier_w.view_mut(),
    );
    grads.classifier_b = crate::tensor::column_sums(d_logits);
    let d_pooled = matmul_nt(d_logits, &params.classifier_w)?;

    let mut dx = Matrix::zeros(fwd.tokens.len(), cfg.d_model);
    for (b, seg) in fwd.segments.iter().enumerate() {
        let inv = 1.0 / fwd.valid_counts[b] as f64;
        for r in seg.start..seg.start + seg.len {
            if fwd.mask[r] {
                for (o, g) in dx.row_mut(r).iter_mut().zip(d_pooled.row(b)) {
                    *o = g * inv;
                }
            }
        }
    }

    let inputs = attention_inputs(cfg, &fwd.segments, &fwd.mask, distances);
    for (layer, block) in params.blocks.iter().enumerate().rev() {
        dx = transformer_block_backward(
            &fwd.block_inputs[layer],
            block,
            &inputs,
            &fwd.blocks[layer],
            &dx,
            &mut grads.blocks[layer],
        )?;
    }
    for (r, &t) in fwd.tokens.iter().enumerate() {
        for (o, g) in grads.embeddings.row_mut(t).iter_mut().zip(dx.row(r)) {
            *o += g;
        }
    }
    Ok(grads)
}

fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean cross-entropy of a batch, its gradients and the number of correct
/// predictions.
pub fn loss_and_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[&Example],
    distances: &DistanceCache,
) -> Result<(f64, usize, ModelParams)> {
    let sequences: Vec<&[usize]> = batch.iter().map(|e| e.tokens.as_slice()).collect();
    let fwd = forward_batch(params, cfg, &sequences, distances)?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut correct = 0;
    let mut d_logits = Matrix::zeros(batch.len(), cfg.classes);
    for (b, ex) in batch.iter().enumerate() {
        if ex.label >= cfg.classes {
            return Err(Error::Index {
                what: "label",
                index: ex.label,
                bound: cfg.classes,
            });
        }
        let row = fwd.logits.row(b);
        let log_p = log_softmax_row(row);
        loss -= log_p[ex.label];
        correct += usize::from(argmax(row) == ex.label);
        for (o, lp) in d_logits.row_mut(b).iter_mut().zip(&log_p) {
            *o = lp.exp() / n;
        }
        d_logits.row_mut(b)[ex.label] -= 1.0 / n;
    }
    let grads = backward_batch(params, cfg, &fwd, &d_logits, distances)?;
    Ok((loss / n, correct, grads))
}

/// Logits (`1×C`) for one sequence.
pub fn model_forward(params: &ModelParams, cfg: &ModelConfig, tokens: &[usize]) -> Result<Matrix> {
    let fwd = forward_batch(params, cfg, &[tokens], &DistanceCache::new())?;
    Ok(fwd.logits)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// One pass over `examples` in an order drawn from `rng`, one Adam step per
/// mini-batch. Loss and accuracy are measured before each step.
pub fn train_epoch<R: Rng + ?Sized>(
    params: &mut ModelParams,
    cfg: &ModelConfig,
    examples: &[Example],
    adam: &mut AdamState,
    batch_size: usize,
    epoch: usize,
    rng: &mut R,
) -> Result<EpochMetrics> {
    if examples.is_empty() {
        return Err(argument("cannot train on an empty dataset"));
    }
    if batch_size == 0 {
        return Err(argument("batch_size must be positive"));
    }
    let distances = DistanceCache::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(rng);
    let mut total_loss = 0.0;
    let mut correct = 0;
    for (bi, chunk) in order.chunks(batch_size).enumerate() {
        let batch: Vec<&Example> = chunk.iter().map(|&i| &examples[i]).collect();
        let (loss, ok, grads) = loss_and_gradients(params, cfg, &batch, &distances)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: bi,
                loss,
            });
        }
        total_loss += loss * batch.len() as f64;
        correct += ok;
        adam.update(params, &grads);
    }
    let n = examples.len() as f64;
    Ok(EpochMetrics {
        loss: total_loss / n,
        accuracy: correct as f64 / n,
    })
}

const EVAL_BATCH: usize = 128;

pub fn predict(
    params: &ModelParams,
    cfg: &ModelConfig,
    examples: &[Example],
) -> Result<Vec<usize>> {
    let distances = DistanceCache::new();
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let seqs: Vec<&[usize]> = chunk.iter().map(|e| e.tokens.as_slice()).collect();
        let fwd = forward_batch(params, cfg, &seqs, &distances)?;
        out.extend((0..chunk.len()).map(|b| argmax(fwd.logits.row(b))));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub macro_f: f64,
}

/// Unweighted mean of per-class F1. A class with precision + recall = 0
/// scores 0; classes absent from both `labels` and `predictions` are left out.
pub fn macro_f1(labels: &[usize], predictions: &[usize], classes: usize) -> f64 {
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&y, &p) in labels.iter().zip(predictions) {
        if y == p {
            tp[y] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..classes {
        if tp[c] + fp[c] + fn_[c] == 0 {
            continue;
        }
        present += 1;
        let precision = if tp[c] + fp[c] > 0 {
            tp[c] as f64 / (tp[c] + fp[c]) as f64
        } else {
            0.0
        };
        let recall = if tp[c] + fn_[c] > 0 {
            tp[c] as f64 / (tp[c] + fn_[c]) as f64
        } else {
            0.0
        };
        if precision + recall > 0.0 {
            total += 2.0 * precision * recall / (precision + recall);
        }
    }
    if present == 0 {
        0.0
    } else {
        total / present as f64
    }
}

pub fn metrics_from_predictions(
    labels: &[usize],
    predictions: &[usize],
    classes: usize,
) -> EvalMetrics {
    let correct = labels
        .iter()
        .zip(predictions)
        .filter(|(a, b)| a == b)
        .count();
    EvalMetrics {
        accuracy: correct as f64 / labels.len().max(1) as f64,
        macro_f: macro_f1(labels, predictions, classes),
    }
}

pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    examples: &[Example],
) -> Result<EvalMetrics> {
    if examples.is_empty() {
        return Err(argument("cannot evaluate on an empty dataset"));
    }
    let predictions = predict(params, cfg, examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    Ok(metrics_from_predictions(&labels, &predictions, cfg.classes))
}

/// Post-softmax attention weights (`N×N`) of every head in `layer`.
pub fn attention_weights(
    params: &ModelParams,
    cfg: &ModelConfig,
    tokens: &[usize],
    layer: usize,
) -> Result<Vec<Matrix>> {
    if layer >= params.blocks.len() {
        return Err(Error::Index {
            what: "layer",
            index: layer,
            bound: params.blocks.len(),
        });
    }
    let fwd = forward_batch(params, cfg, &[tokens], &DistanceCache::new())?;
    Ok(fwd.blocks[layer].attention.heads[0]
        .iter()
        .map(|h| h.probs.clone())
        .collect())
}

/// Mean over rows of the Shannon entropy (nats), with `0·ln 0 = 0`.
pub fn mean_row_entropy(weights: &Matrix) -> f64 {
    let total: f64 = (0..weights.rows())
        .map(|i| {
            -weights
                .row(i)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>()
        })
        .sum();
    total / weights.rows() as f64
}
