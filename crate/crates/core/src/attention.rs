//! Multi-head self-attention with distance-aware adjustment, the
//! position-wise feed-forward network and the post-norm transformer block.
//!
//! Per head, with `S = QKᵀ` and coefficients `R̂`:
//!
//! | strategy         | mixing weights                      |
//! |------------------|-------------------------------------|
//! | `vanilla`        | `softmax(S/√d)`                     |
//! | `early_multiply` | `softmax((ReLU(S) ⊙ R̂)/√d)`         |
//! | `early_add`      | `softmax(S/√d + R̂)`                 |
//! | `late_add`       | `softmax(S/√d) + R̂`                 |
//! | `late_multiply`  | `softmax(S/√d) ⊙ R̂`                 |
//!
//! The late strategies are not renormalized. Batched entry points take the
//! rows of several sequences stacked into one matrix plus a list of
//! [`Segment`]s; position-wise work runs over all rows at once and attention
//! runs per segment.

use std::collections::hash_map::Entry;
use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{CoefficientTable, DistanceCache, HeadDistanceParams, MappingKind};
use crate::error::{argument, Error, Result};
use crate::params::{view, view_mut, ParamView, ParamViewMut, Parameters};
use crate::tensor::{
    column_sums, gemm, layer_norm_backward, layer_norm_forward, matmul, matmul_nt, matmul_tn,
    softmax_backward_row, LayerNormCache, Matrix,
};

/// Where and how the re-scaling coefficients enter a head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentStrategy {
    #[default]
    EarlyMultiply,
    EarlyAdd,
    LateAdd,
    LateMultiply,
    Vanilla,
}

impl AdjustmentStrategy {
    pub const ALL: [AdjustmentStrategy; 5] = [
        AdjustmentStrategy::EarlyMultiply,
        AdjustmentStrategy::EarlyAdd,
        AdjustmentStrategy::LateAdd,
        AdjustmentStrategy::LateMultiply,
        AdjustmentStrategy::Vanilla,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            AdjustmentStrategy::EarlyMultiply => "early_multiply",
            AdjustmentStrategy::EarlyAdd => "early_add",
            AdjustmentStrategy::LateAdd => "late_add",
            AdjustmentStrategy::LateMultiply => "late_multiply",
            AdjustmentStrategy::Vanilla => "vanilla",
        }
    }

    pub fn uses_distance(&self) -> bool {
        *self != AdjustmentStrategy::Vanilla
    }
}

impl fmt::Display for AdjustmentStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdjustmentStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AdjustmentStrategy::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                argument(format!(
                    "unknown adjustment strategy {s:?}; expected one of early_multiply, early_add, late_add, late_multiply, vanilla"
                ))
            })
    }
}

/// Projection weights of one head, each `d_model×d`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
}

/// Projections of all heads stored column-blocked: head `i` owns columns
/// `i*d..(i+1)*d` of `wq`, `wk` and `wv`, and rows `i*d..(i+1)*d` of `wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadAttentionParams {
    pub heads: usize,
    pub head_dim: usize,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
    pub distance: Vec<HeadDistanceParams>,
}

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::random_uniform(rows, cols, -limit, limit, rng)
}

impl MultiHeadAttentionParams {
    pub fn init<R: Rng + ?Sized>(
        d_model: usize,
        heads: usize,
        head_dim: usize,
        mapping: &MappingKind,
        rng: &mut R,
    ) -> Self {
        let inner = heads * head_dim;
        Self {
            heads,
            head_dim,
            wq: xavier(d_model, inner, rng),
            wk: xavier(d_model, inner, rng),
            wv: xavier(d_model, inner, rng),
            wo: xavier(inner, d_model, rng),
            distance: HeadDistanceParams::init_heads(heads, mapping, rng),
        }
    }

    /// Assembles the fused layout from per-head projections.
    pub fn from_heads(
        heads: &[HeadParams],
        wo: Matrix,
        distance: Vec<HeadDistanceParams>,
    ) -> Result<Self> {
        let first = heads
            .first()
            .ok_or_else(|| argument("need at least one head"))?;
        let (d_model, d) = first.wq.shape();
        let h = heads.len();
        if wo.rows() != h * d || distance.len() != h {
            return Err(Error::Dimension {
                op: "from_heads",
                left: (h * d, d_model),
                right: wo.shape(),
            });
        }
        let mut wq = Matrix::zeros(d_model, h * d);
        let mut wk = Matrix::zeros(d_model, h * d);
        let mut wv = Matrix::zeros(d_model, h * d);
        for (i, head) in heads.iter().enumerate() {
            for m in [&head.wq, &head.wk, &head.wv] {
                if m.shape() != (d_model, d) {
                    return Err(Error::Dimension {
                        op: "from_heads",
                        left: (d_model, d),
                        right: m.shape(),
                    });
                }
            }
            wq.set_block(0, i * d, &head.wq);
            wk.set_block(0, i * d, &head.wk);
            wv.set_block(0, i * d, &head.wv);
        }
        Ok(Self {
            heads: h,
            head_dim: d,
            wq,
            wk,
            wv,
            wo,
            distance,
        })
    }

    pub fn d_model(&self) -> usize {
        self.wq.rows()
    }

    pub fn head(&self, i: usize) -> HeadParams {
        let (dm, d) = (self.d_model(), self.head_dim);
        HeadParams {
            wq: self.wq.block(0, dm, i * d, d),
            wk: self.wk.block(0, dm, i * d, d),
            wv: self.wv.block(0, dm, i * d, d),
        }
    }

    fn params_with_prefix<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        for (name, m) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ] {
            out.push(view(prefix, name, m.shape(), m.as_slice()));
        }
        for (i, p) in self.distance.iter().enumerate() {
            out.push(view(
                prefix,
                &format!("head{i}.w"),
                (1, 1),
                std::slice::from_ref(&p.w),
            ));
            out.push(view(
                prefix,
                &format!("head{i}.v"),
                (1, 1),
                std::slice::from_ref(&p.v),
            ));
            out.push(view(
                prefix,
                &format!("head{i}.slope"),
                (1, 1),
                std::slice::from_ref(&p.slope),
            ));
            out.push(view(
                prefix,
                &format!("head{i}.intercept"),
                (1, 1),
                std::slice::from_ref(&p.intercept),
            ));
        }
    }

    fn params_mut_with_prefix<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamViewMut<'a>>) {
        for (name, m) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
        ] {
            let shape = m.shape();
            out.push(view_mut(prefix, name, shape, m.as_mut_slice()));
        }
        for (i, p) in self.distance.iter_mut().enumerate() {
            out.push(view_mut(
                prefix,
                &format!("head{i}.w"),
                (1, 1),
                std::slice::from_mut(&mut p.w),
            ));
            out.push(view_mut(
                prefix,
                &format!("head{i}.v"),
                (1, 1),
                std::slice::from_mut(&mut p.v),
            ));
            out.push(view_mut(
                prefix,
                &format!("head{i}.slope"),
                (1, 1),
                std::slice::from_mut(&mut p.slope),
            ));
            out.push(view_mut(
                prefix,
                &format!("head{i}.intercept"),
                (1, 1),
                std::slice::from_mut(&mut p.intercept),
            ));
        }
    }
}

impl Parameters for MultiHeadAttentionParams {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.params_with_prefix("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        self.params_mut_with_prefix("", &mut out);
        out
    }
}

/// Attention, feed-forward network and the two layer norms of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformerBlockParams {
    pub attention: MultiHeadAttentionParams,
    pub ffn_w1: Matrix,
    pub ffn_b1: Matrix,
    pub ffn_w2: Matrix,
    pub ffn_b2: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
}

impl TransformerBlockParams {
    pub fn init<R: Rng + ?Sized>(
        d_model: usize,
        heads: usize,
        head_dim: usize,
        d_ff: usize,
        mapping: &MappingKind,
        rng: &mut R,
    ) -> Self {
        Self {
            attention: MultiHeadAttentionParams::init(d_model, heads, head_dim, mapping, rng),
            ffn_w1: xavier(d_model, d_ff, rng),
            ffn_b1: Matrix::zeros(1, d_ff),
            ffn_w2: xavier(d_ff, d_model, rng),
            ffn_b2: Matrix::zeros(1, d_model),
            ln1_gain: Matrix::ones(1, d_model),
            ln1_bias: Matrix::zeros(1, d_model),
            ln2_gain: Matrix::ones(1, d_model),
            ln2_bias: Matrix::zeros(1, d_model),
        }
    }

    pub fn d_model(&self) -> usize {
        self.attention.d_model()
    }

    pub(crate) fn params_with_prefix<'a>(&'a self, prefix: &str, out: &mut Vec<ParamView<'a>>) {
        self.attention
            .params_with_prefix(&format!("{prefix}attention."), out);
        for (name, m) in self.dense() {
            out.push(view(prefix, name, m.shape(), m.as_slice()));
        }
    }

    pub(crate) fn params_mut_with_prefix<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<ParamViewMut<'a>>,
    ) {
        self.attention
            .params_mut_with_prefix(&format!("{prefix}attention."), out);
        for (name, m) in [
            ("ffn_w1", &mut self.ffn_w1),
            ("ffn_b1", &mut self.ffn_b1),
            ("ffn_w2", &mut self.ffn_w2),
            ("ffn_b2", &mut self.ffn_b2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ] {
            let shape = m.shape();
            out.push(view_mut(prefix, name, shape, m.as_mut_slice()));
        }
    }

    fn dense(&self) -> [(&'static str, &Matrix); 8] {
        [
            ("ffn_w1", &self.ffn_w1),
            ("ffn_b1", &self.ffn_b1),
            ("ffn_w2", &self.ffn_w2),
            ("ffn_b2", &self.ffn_b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }
}

impl Parameters for TransformerBlockParams {
    fn params(&self) -> Vec<ParamView<'_>> {
        let mut out = Vec::new();
        self.params_with_prefix("", &mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<ParamViewMut<'_>> {
        let mut out = Vec::new();
        self.params_mut_with_prefix("", &mut out);
        out
    }
}

/// `(Q, K, V) = (H·Wq, H·Wk, H·Wv)`.
pub fn project_qkv(h_in: &Matrix, head: &HeadParams) -> Result<(Matrix, Matrix, Matrix)> {
    Ok((
        matmul(h_in, &head.wq)?,
        matmul(h_in, &head.wk)?,
        matmul(h_in, &head.wv)?,
    ))
}

/// Returns `dH` and the projection gradients.
pub fn project_qkv_backward(
    h_in: &Matrix,
    head: &HeadParams,
    dq: &Matrix,
    dk: &Matrix,
    dv: &Matrix,
) -> Result<(Matrix, HeadParams)> {
    let mut dh = matmul_nt(dq, &head.wq)?;
    dh.add_assign(&matmul_nt(dk, &head.wk)?)?;
    dh.add_assign(&matmul_nt(dv, &head.wv)?)?;
    let grads = HeadParams {
        wq: matmul_tn(h_in, dq)?,
        wk: matmul_tn(h_in, dk)?,
        wv: matmul_tn(h_in, dv)?,
    };
    Ok((dh, grads))
}

/// Forward values of one head kept for the backward pass.
#[derive(Clone, Debug)]
pub struct HeadAttention {
    /// Raw dot products `QKᵀ`.
    pub scores: Matrix,
    /// Softmax output.
    pub probs: Matrix,
    /// Weights that multiply `V`; equal to `probs` except for late strategies.
    pub weights: Matrix,
    pub output: Matrix,
}

#[derive(Clone, Debug)]
pub struct HeadAttentionGrads {
    pub dq: Matrix,
    pub dk: Matrix,
    pub dv: Matrix,
    /// `None` for the vanilla strategy.
    pub dr_hat: Option<Matrix>,
}

fn check_head_inputs(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    r_hat: Option<&Matrix>,
    strategy: AdjustmentStrategy,
    key_mask: Option<&[bool]>,
) -> Result<()> {
    if q.cols() != k.cols() {
        return Err(Error::Dimension {
            op: "head_attention (q vs k)",
            left: q.shape(),
            right: k.shape(),
        });
    }
    if k.rows() != v.rows() || q.rows() != k.rows() {
        return Err(Error::Dimension {
            op: "head_attention (k vs v)",
            left: k.shape(),
            right: v.shape(),
        });
    }
    if strategy.uses_distance() {
        let r = r_hat.ok_or_else(|| argument(format!("strategy {strategy} needs coefficients")))?;
        if r.shape() != (q.rows(), k.rows()) {
            return Err(Error::Dimension {
                op: "head_attention (coefficients)",
                left: (q.rows(), k.rows()),
                right: r.shape(),
            });
        }
    }
    if let Some(mask) = key_mask {
        if mask.len() != k.rows() {
            return Err(argument("key mask length differs from sequence length"));
        }
        if !mask.iter().any(|&m| m) {
            return Err(argument("every key position is masked"));
        }
    }
    Ok(())
}

fn masked_softmax_row(row: &mut [f64], mask: Option<&[bool]>) {
    match mask {
        None => crate::tensor::softmax_in_place(row),
        Some(mask) => {
            let max = row
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(&x, _)| x)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (x, &m) in row.iter_mut().zip(mask) {
                *x = if m { (*x - max).exp() } else { 0.0 };
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
    }
}

/// One attention head under `strategy`. `key_mask[j] == false` gives key
/// `j` exactly zero weight.
pub fn head_attention_forward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    r_hat: Option<&Matrix>,
    strategy: AdjustmentStrategy,
    key_mask: Option<&[bool]>,
) -> Result<HeadAttention> {
    check_head_inputs(q, k, v, r_hat, strategy, key_mask)?;
    let sqrt_d = (q.cols() as f64).sqrt();
    let scores = matmul_nt(q, k)?;
    let mut probs = scores.clone();
    {
        let z = probs.as_mut_slice();
        match strategy {
            AdjustmentStrategy::EarlyMultiply => {
                let r = r_hat.expect("checked").as_slice();
                for (x, &c) in z.iter_mut().zip(r) {
                    let gated = if *x > 0.0 { *x } else { 0.0 };
                    *x = gated * c / sqrt_d;
                }
            }
            AdjustmentStrategy::EarlyAdd => {
                let r = r_hat.expect("checked").as_slice();
                for (x, &c) in z.iter_mut().zip(r) {
                    *x = *x / sqrt_d + c;
                }
            }
            _ => {
                for x in z.iter_mut() {
                    *x /= sqrt_d;
                }
            }
        }
    }
    for i in 0..probs.rows() {
        masked_softmax_row(probs.row_mut(i), key_mask);
    }
    let weights = match strategy {
        AdjustmentStrategy::LateAdd | AdjustmentStrategy::LateMultiply => {
            let r = r_hat.expect("checked");
            let mut w = probs.clone();
            let cols = w.cols();
            for (idx, (x, &c)) in w.as_mut_slice().iter_mut().zip(r.as_slice()).enumerate() {
                if key_mask.is_some_and(|m| !m[idx % cols]) {
                    *x = 0.0;
                } else if strategy == AdjustmentStrategy::LateAdd {
                    *x += c;
                } else {
                    *x *= c;
                }
            }
            w
        }
        _ => probs.clone(),
    };
    let output = matmul(&weights, v)?;
    Ok(HeadAttention {
        scores,
        probs,
        weights,
        output,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn head_attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    r_hat: Option<&Matrix>,
    strategy: AdjustmentStrategy,
    key_mask: Option<&[bool]>,
    fwd: &HeadAttention,
    grad_out: &Matrix,
) -> Result<HeadAttentionGrads> {
    if grad_out.shape() != fwd.output.shape() {
        return Err(Error::Dimension {
            op: "head_attention_backward",
            left: fwd.output.shape(),
            right: grad_out.shape(),
        });
    }
    let sqrt_d = (q.cols() as f64).sqrt();
    let d_weights = matmul_nt(grad_out, v)?;
    let dv = matmul_tn(&fwd.weights, grad_out)?;
    let n = fwd.probs.cols();

    // Gradient w.r.t. the softmax output, and the late-strategy dR̂.
    let (d_probs, mut dr_hat) = match strategy {
        AdjustmentStrategy::LateAdd => {
            let mut dr = d_weights.clone();
            if let Some(mask) = key_mask {
                for (idx, x) in dr.as_mut_slice().iter_mut().enumerate() {
                    if !mask[idx % n] {
                        *x = 0.0;
                    }
                }
            }
            (d_weights, Some(dr))
        }
        AdjustmentStrategy::LateMultiply => {
            let r = r_hat.expect("late strategy has coefficients");
            let dp = crate::tensor::elementwise_mul(&d_weights, r)?;
            let dr = crate::tensor::elementwise_mul(&d_weights, &fwd.probs)?;
            (dp, Some(dr))
        }
        _ => (d_weights, None),
    };

    let mut d_logits = Matrix::zeros(fwd.probs.rows(), n);
    for i in 0..fwd.probs.rows() {
        softmax_backward_row(fwd.probs.row(i), d_probs.row(i), d_logits.row_mut(i));
    }

    let mut d_scores = d_logits.clone();
    match strategy {
        AdjustmentStrategy::EarlyMultiply => {
            let r = r_hat.expect("early strategy has coefficients").as_slice();
            let mut dr = Matrix::zeros(fwd.probs.rows(), n);
            for (((ds, dr), &s), &c) in d_scores
                .as_mut_slice()
                .iter_mut()
                .zip(dr.as_mut_slice())
                .zip(fwd.scores.as_slice())
                .zip(r)
            {
                let dm = *ds / sqrt_d;
                let gated = if s > 0.0 { s } else { 0.0 };
                *dr = dm * gated;
                *ds = if s > 0.0 { dm * c } else { 0.0 };
            }
            dr_hat = Some(dr);
        }
        AdjustmentStrategy::EarlyAdd => {
            dr_hat = Some(d_logits);
            for x in d_scores.as_mut_slice() {
                *x /= sqrt_d;
            }
        }
        _ => {
            for x in d_scores.as_mut_slice() {
                *x /= sqrt_d;
            }
        }
    }
    Ok(HeadAttentionGrads {
        dq: matmul(&d_scores, k)?,
        dk: matmul_tn(&d_scores, q)?,
        dv,
        dr_hat,
    })
}

/// `softmax(QKᵀ/√d)·V`.
pub fn vanilla_head_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<Matrix> {
    Ok(head_attention_forward(q, k, v, None, AdjustmentStrategy::Vanilla, None)?.output)
}

/// `softmax((ReLU(QKᵀ) ⊙ R̂)/√d)·V`.
pub fn da_head_attention(q: &Matrix, k: &Matrix, v: &Matrix, r_hat: &Matrix) -> Result<Matrix> {
    Ok(head_attention_forward(
        q,
        k,
        v,
        Some(r_hat),
        AdjustmentStrategy::EarlyMultiply,
        None,
    )?
    .output)
}

pub fn adjusted_head_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    r_hat: &Matrix,
    strategy: AdjustmentStrategy,
) -> Result<Matrix> {
    Ok(head_attention_forward(q, k, v, Some(r_hat), strategy, None)?.output)
}

/// Rows `start..start + len` of a stacked batch belong to one sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

impl Segment {
    /// Consecutive segments for the given lengths.
    pub fn tile(lengths: impl IntoIterator<Item = usize>) -> Vec<Segment> {
        let mut start = 0;
        lengths
            .into_iter()
            .map(|len| {
                let s = Segment { start, len };
                start += len;
                s
            })
            .collect()
    }
}

/// Static inputs of a batched attention call.
#[derive(Clone, Copy)]
pub struct AttentionInputs<'a> {
    pub mapping: &'a MappingKind,
    pub strategy: AdjustmentStrategy,
    pub segments: &'a [Segment],
    /// Row validity; `None` means every row is a real token.
    pub mask: Option<&'a [bool]>,
    pub distances: &'a DistanceCache,
}

impl AttentionInputs<'_> {
    fn segment_mask(&self, seg: &Segment) -> Option<&[bool]> {
        self.mask.map(|m| &m[seg.start..seg.start + seg.len])
    }

    fn check(&self, rows: usize) -> Result<()> {
        let mut next = 0;
        for s in self.segments {
            if s.start != next || s.len == 0 {
                return Err(argument(
                    "segments must be non-empty and tile the rows in order",
                ));
            }
            next += s.len;
        }
        if next != rows {
            return Err(argument(format!(
                "segments cover {next} rows, input has {rows}"
            )));
        }
        if self.mask.is_some_and(|m| m.len() != rows) {
            return Err(argument("mask length differs from row count"));
        }
        Ok(())
    }
}

struct HeadCoefficients {
    table: CoefficientTable,
    by_len: HashMap<usize, Matrix>,
}

/// Forward state of a batched multi-head attention call.
pub struct MultiHeadForward {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    concat: Matrix,
    /// `[segment][head]`.
    pub heads: Vec<Vec<HeadAttention>>,
    coefficients: Vec<HeadCoefficients>,
    pub output: Matrix,
}

impl MultiHeadForward {
    /// Coefficient matrix used by `head` for sequences of length `len`.
    pub fn coefficients(&self, head: usize, len: usize) -> Option<&Matrix> {
        self.coefficients.get(head).and_then(|c| c.by_len.get(&len))
    }
}

fn run_segments<T, F>(count: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if rayon::current_num_threads() > 1 && count > 1 {
        (0..count).into_par_iter().map(&f).collect()
    } else {
        (0..count).map(f).collect()
    }
}

pub fn multi_head_attention_forward(
    x: &Matrix,
    params: &MultiHeadAttentionParams,
    inputs: &AttentionInputs<'_>,
) -> Result<MultiHeadForward> {
    if x.cols() != params.d_model() {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            left: x.shape(),
            right: params.wq.shape(),
        });
    }
    inputs.check(x.rows())?;
    let (h, d) = (params.heads, params.head_dim);
    let q = matmul(x, &params.wq)?;
    let k = matmul(x, &params.wk)?;
    let v = matmul(x, &params.wv)?;

    let mut coefficients = Vec::new();
    if inputs.strategy.uses_distance() {
        inputs.mapping.validate()?;
        let max_len = inputs.segments.iter().map(|s| s.len).max().unwrap_or(1);
        for p in &params.distance {
            let table = CoefficientTable::new(max_len, p, inputs.mapping);
            let mut by_len = HashMap::new();
            for s in inputs.segments {
                if let Entry::Vacant(slot) = by_len.entry(s.len) {
                    slot.insert(table.expand(&*inputs.distances.get(s.len)?));
                }
            }
            coefficients.push(HeadCoefficients { table, by_len });
        }
    }

    let heads = run_segments(inputs.segments.len(), |si| {
        let seg = inputs.segments[si];
        let mask = inputs.segment_mask(&seg);
        (0..h)
            .map(|hi| {
                let qh = q.block(seg.start, seg.len, hi * d, d);
                let kh = k.block(seg.start, seg.len, hi * d, d);
                let vh = v.block(seg.start, seg.len, hi * d, d);
                let r = coefficients.get(hi).map(|c| &c.by_len[&seg.len]);
                head_attention_forward(&qh, &kh, &vh, r, inputs.strategy, mask)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut concat = Matrix::zeros(x.rows(), h * d);
    for (seg, per_head) in inputs.segments.iter().zip(&heads) {
        for (hi, head) in per_head.iter().enumerate() {
            concat.set_block(seg.start, hi * d, &head.output);
        }
    }
    let output = matmul(&concat, &params.wo)?;
    Ok(MultiHeadForward {
        q,
        k,
        v,
        concat,
        heads,
        coefficients,
        output,
    })
}

/// Accumulates parameter gradients into `grads` and returns `dX`.
pub fn multi_head_attention_backward(
    x: &Matrix,
    params: &MultiHeadAttentionParams,
    inputs: &AttentionInputs<'_>,
    fwd: &MultiHeadForward,
    grad_out: &Matrix,
    grads: &mut MultiHeadAttentionParams,
) -> Result<Matrix> {
    let (h, d) = (params.heads, params.head_dim);
    gemm(
        1.0,
        fwd.concat.view_t(),
        grad_out.view(),
        1.0,
        grads.wo.view_mut(),
    );
    let d_concat = matmul_nt(grad_out, &params.wo)?;

    let per_segment = run_segments(inputs.segments.len(), |si| {
        let seg = inputs.segments[si];
        let mask = inputs.segment_mask(&seg);
        (0..h)
            .map(|hi| {
                let qh = fwd.q.block(seg.start, seg.len, hi * d, d);
                let kh = fwd.k.block(seg.start, seg.len, hi * d, d);
                let vh = fwd.v.block(seg.start, seg.len, hi * d, d);
                let g = d_concat.block(seg.start, seg.len, hi * d, d);
                let r = fwd.coefficients.get(hi).map(|c| &c.by_len[&seg.len]);
                head_attention_backward(
                    &qh,
                    &kh,
                    &vh,
                    r,
                    inputs.strategy,
                    mask,
                    &fwd.heads[si][hi],
                    &g,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let rows = x.rows();
    let mut dq = Matrix::zeros(rows, h * d);
    let mut dk = Matrix::zeros(rows, h * d);
    let mut dv = Matrix::zeros(rows, h * d);
    let max_len = inputs.segments.iter().map(|s| s.len).max().unwrap_or(1);
    let mut per_distance = vec![vec![0.0; max_len]; h];
    for (seg, head_grads) in inputs.segments.iter().zip(&per_segment) {
        for (hi, g) in head_grads.iter().enumerate() {
            dq.set_block(seg.start, hi * d, &g.dq);
            dk.set_block(seg.start, hi * d, &g.dk);
            dv.set_block(seg.start, hi * d, &g.dv);
            if let Some(dr) = &g.dr_hat {
                CoefficientTable::accumulate_distance_grads(dr, &mut per_distance[hi]);
            }
        }
    }
    for (hi, coeff) in fwd.coefficients.iter().enumerate() {
        let dp = coeff.table.param_grads(&per_distance[hi]);
        let acc = &mut grads.distance[hi];
        acc.w += dp.w;
        acc.v += dp.v;
        acc.slope += dp.slope;
        acc.intercept += dp.intercept;
    }

    gemm(1.0, x.view_t(), dq.view(), 1.0, grads.wq.view_mut());
    gemm(1.0, x.view_t(), dk.view(), 1.0, grads.wk.view_mut());
    gemm(1.0, x.view_t(), dv.view(), 1.0, grads.wv.view_mut());
    let mut dx = matmul_nt(&dq, &params.wq)?;
    gemm(1.0, dk.view(), params.wk.view_t(), 1.0, dx.view_mut());
    gemm(1.0, dv.view(), params.wv.view_t(), 1.0, dx.view_mut());
    Ok(dx)
}

/// Multi-head attention over one unmasked sequence.
pub fn multi_head_attention(
    h_in: &Matrix,
    params: &MultiHeadAttentionParams,
    kind: &MappingKind,
    strategy: AdjustmentStrategy,
) -> Result<Matrix> {
    let distances = DistanceCache::new();
    let segments = [Segment {
        start: 0,
        len: h_in.rows(),
    }];
    let inputs = AttentionInputs {
        mapping: kind,
        strategy,
        segments: &segments,
        mask: None,
        distances: &distances,
    };
    Ok(multi_head_attention_forward(h_in, params, &inputs)?.output)
}

/// Forward state of the feed-forward network.
pub struct FeedForwardCache {
    pre_activation: Matrix,
    hidden: Matrix,
}

fn add_bias(x: &mut Matrix, bias: &Matrix) {
    let b = bias.as_slice();
    for i in 0..x.rows() {
        for (o, bj) in x.row_mut(i).iter_mut().zip(b) {
            *o += bj;
        }
    }
}

pub fn feed_forward_forward(
    x: &Matrix,
    block: &TransformerBlockParams,
) -> Result<(Matrix, FeedForwardCache)> {
    if x.cols() != block.ffn_w1.rows() {
        return Err(Error::Dimension {
            op: "feed_forward",
            left: x.shape(),
            right: block.ffn_w1.shape(),
        });
    }
    let mut pre_activation = matmul(x, &block.ffn_w1)?;
    add_bias(&mut pre_activation, &block.ffn_b1);
    let hidden = crate::tensor::relu(&pre_activation);
    let mut out = matmul(&hidden, &block.ffn_w2)?;
    add_bias(&mut out, &block.ffn_b2);
    Ok((
        out,
        FeedForwardCache {
            pre_activation,
            hidden,
        },
    ))
}

/// `max(0, x·W₁ + b₁)·W₂ + b₂`, row-wise.
pub fn feed_forward(x: &Matrix, block: &TransformerBlockParams) -> Result<Matrix> {
    Ok(feed_forward_forward(x, block)?.0)
}

pub fn feed_forward_backward(
    x: &Matrix,
    block: &TransformerBlockParams,
    cache: &FeedForwardCache,
    grad_out: &Matrix,
    grads: &mut TransformerBlockParams,
) -> Result<Matrix> {
    gemm(
        1.0,
        cache.hidden.view_t(),
        grad_out.view(),
        1.0,
        grads.ffn_w2.view_mut(),
    );
    grads.ffn_b2.add_assign(&column_sums(grad_out))?;
    let mut d_pre = matmul_nt(grad_out, &block.ffn_w2)?;
    for (g, &p) in d_pre
        .as_mut_slice()
        .iter_mut()
        .zip(cache.pre_activation.as_slice())
    {
        if p <= 0.0 {
            *g = 0.0;
        }
    }
    gemm(1.0, x.view_t(), d_pre.view(), 1.0, grads.ffn_w1.view_mut());
    grads.ffn_b1.add_assign(&column_sums(&d_pre))?;
    matmul_nt(&d_pre, &block.ffn_w1)
}

/// Forward state of one transformer block.
pub struct BlockForward {
    pub attention: MultiHeadForward,
    ln1: LayerNormCache,
    mid: Matrix,
    ffn: FeedForwardCache,
    ln2: LayerNormCache,
    pub output: Matrix,
}

/// `y₁ = LN(x + MHA(x))`, `y₂ = LN(y₁ + FFN(y₁))`.
pub fn transformer_block_forward(
    x: &Matrix,
    block: &TransformerBlockParams,
    inputs: &AttentionInputs<'_>,
) -> Result<BlockForward> {
    let attention = multi_head_attention_forward(x, &block.attention, inputs)?;
    let residual = x.add(&attention.output)?;
    let (mid, ln1) = layer_norm_forward(&residual, &block.ln1_gain, &block.ln1_bias)?;
    let (ffn_out, ffn) = feed_forward_forward(&mid, block)?;
    let residual = mid.add(&ffn_out)?;
    let (output, ln2) = layer_norm_forward(&residual, &block.ln2_gain, &block.ln2_bias)?;
    Ok(BlockForward {
        attention,
        ln1,
        mid,
        ffn,
        ln2,
        output,
    })
}

pub fn transformer_block_backward(
    x: &Matrix,
    block: &TransformerBlockParams,
    inputs: &AttentionInputs<'_>,
    fwd: &BlockForward,
    grad_out: &Matrix,
    grads: &mut TransformerBlockParams,
) -> Result<Matrix> {
    let (d_res2, dg2, db2) = layer_norm_backward(&fwd.ln2, &block.ln2_gain, grad_out)?;
    grads.ln2_gain.add_assign(&dg2)?;
    grads.ln2_bias.add_assign(&db2)?;
    let mut d_mid = feed_forward_backward(&fwd.mid, block, &fwd.ffn, &d_res2, grads)?;
    d_mid.add_assign(&d_res2)?;
    let (d_res1, dg1, db1) = layer_norm_backward(&fwd.ln1, &block.ln1_gain, &d_mid)?;
    grads.ln1_gain.add_assign(&dg1)?;
    grads.ln1_bias.add_assign(&db1)?;
    let mut dx = multi_head_attention_backward(
        x,
        &block.attention,
        inputs,
        &fwd.attention,
        &d_res1,
        &mut grads.attention,
    )?;
    dx.add_assign(&d_res1)?;
    Ok(dx)
}

/// One post-norm block over one unmasked sequence.
pub fn transformer_block(
    h_in: &Matrix,
    block: &TransformerBlockParams,
    kind: &MappingKind,
    strategy: AdjustmentStrategy,
) -> Result<Matrix> {
    let distances = DistanceCache::new();
    let segments = [Segment {
        start: 0,
        len: h_in.rows(),
    }];
    let inputs = AttentionInputs {
        mapping: kind,
        strategy,
        segments: &segments,
        mask: None,
        distances: &distances,
    };
    Ok(transformer_block_forward(h_in, block, &inputs)?.output)
}

/// Standard sin/cos position encoding, `n×d_model`.
pub fn sinusoidal_position_encoding(n: usize, d_model: usize) -> Result<Matrix> {
    if d_model == 0 || !d_model.is_multiple_of(2) {
        return Err(argument(format!(
            "position encoding needs an even d_model, got {d_model}"
        )));
    }
    if n == 0 {
        return Err(argument("position encoding needs n >= 1"));
    }
    let mut pe = Matrix::zeros(n, d_model);
    for pos in 0..n {
        let row = pe.row_mut(pos);
        for k in 0..d_model / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
            row[2 * k] = angle.sin();
            row[2 * k + 1] = angle.cos();
        }
    }
    Ok(pe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::{build_distance_matrix, rescaled_coefficients};
    use crate::tensor::{gradient_check, relu, row_softmax, ClosureOp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in AdjustmentStrategy::ALL {
            assert_eq!(s.name().parse::<AdjustmentStrategy>().unwrap(), s);
            assert_eq!(
                serde_json::to_string(&s).unwrap(),
                format!("\"{}\"", s.name())
            );
        }
        assert!("early".parse::<AdjustmentStrategy>().is_err());
    }

    #[test]
    fn identity_projection_and_single_token() {
        let mut r = rng(1);
        let h = Matrix::random_normal(3, 4, &mut r);
        let head = HeadParams {
            wq: Matrix::identity(4),
            wk: Matrix::identity(4),
            wv: Matrix::identity(4),
        };
        let (q, k, v) = project_qkv(&h, &head).unwrap();
        assert_eq!((&q, &k, &v), (&h, &h, &h));

        let one = Matrix::random_normal(1, 4, &mut r);
        let head = HeadParams {
            wq: Matrix::random_normal(4, 2, &mut r),
            wk: Matrix::random_normal(4, 2, &mut r),
            wv: Matrix::random_normal(4, 2, &mut r),
        };
        let (q, k, v) = project_qkv(&one, &head).unwrap();
        assert_eq!(q.shape(), (1, 2));
        assert_eq!(vanilla_head_attention(&q, &k, &v).unwrap(), v);
        assert!(project_qkv(&Matrix::zeros(2, 3), &head).is_err());
    }

    #[test]
    fn zero_keys_give_column_means() {
        let mut r = rng(2);
        let q = Matrix::random_normal(4, 3, &mut r);
        let k = Matrix::zeros(4, 3);
        let v = Matrix::random_normal(4, 2, &mut r);
        let out = vanilla_head_attention(&q, &k, &v).unwrap();
        let means = crate::tensor::mean_pool_rows(&v);
        for i in 0..4 {
            for j in 0..2 {
                assert!((out.get(i, j) - means.get(0, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn negative_scores_are_gated_to_uniform() {
        // q·k <= 0 everywhere: q rows positive, k rows negative.
        let q = Matrix::from_rows(&[[1.0, 0.5], [0.2, 2.0], [1.0, 1.0]]).unwrap();
        let k = Matrix::from_rows(&[[-1.0, -0.5], [-0.3, -0.1], [-2.0, -1.0]]).unwrap();
        let v = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0], [-4.0, 0.5]]).unwrap();
        let r = rescaled_coefficients(
            &build_distance_matrix(3).unwrap(),
            &HeadDistanceParams::new(0.8, 0.5),
            &MappingKind::LearnableSigmoid,
        )
        .unwrap();
        let out = da_head_attention(&q, &k, &v, &r).unwrap();
        let means = crate::tensor::mean_pool_rows(&v);
        for i in 0..3 {
            for j in 0..2 {
                assert!((out.get(i, j) - means.get(0, j)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn neutral_coefficients_reduce_to_gated_attention() {
        let mut r = rng(3);
        let q = Matrix::random_normal(5, 4, &mut r);
        let k = Matrix::random_normal(5, 4, &mut r);
        let v = Matrix::random_normal(5, 3, &mut r);
        let ones = Matrix::ones(5, 5);
        let da = da_head_attention(&q, &k, &v, &ones).unwrap();
        let gated = relu(&matmul_nt(&q, &k).unwrap()).map(|x| x / 2.0);
        let reference = matmul(&row_softmax(&gated), &v).unwrap();
        assert_eq!(da, reference);

        let late =
            adjusted_head_attention(&q, &k, &v, &ones, AdjustmentStrategy::LateMultiply).unwrap();
        assert_eq!(late, vanilla_head_attention(&q, &k, &v).unwrap());
        let late_add = adjusted_head_attention(
            &q,
            &k,
            &v,
            &Matrix::zeros(5, 5),
            AdjustmentStrategy::LateAdd,
        )
        .unwrap();
        assert_eq!(late_add, vanilla_head_attention(&q, &k, &v).unwrap());
    }

    #[test]
    fn masked_keys_get_zero_weight() {
        let mut r = rng(4);
        let q = Matrix::random_normal(4, 2, &mut r);
        let k = Matrix::random_normal(4, 2, &mut r);
        let v = Matrix::random_normal(4, 2, &mut r);
        let coeff = Matrix::random_uniform(4, 4, 0.5, 2.0, &mut r);
        let mask = [true, true, false, true];
        for s in AdjustmentStrategy::ALL {
            let fwd = head_attention_forward(&q, &k, &v, Some(&coeff), s, Some(&mask)).unwrap();
            for i in 0..4 {
                assert_eq!(fwd.weights.get(i, 2), 0.0, "{s}");
            }
        }
        assert!(head_attention_forward(
            &q,
            &k,
            &v,
            None,
            AdjustmentStrategy::Vanilla,
            Some(&[false; 4])
        )
        .is_err());
    }

    fn head_op(
        strategy: AdjustmentStrategy,
        mask: Option<Vec<bool>>,
    ) -> impl crate::tensor::Differentiable {
        let mask_b = mask.clone();
        ClosureOp::new(
            format!("head_attention[{strategy}]"),
            move |x: &[Matrix]| {
                Ok(head_attention_forward(
                    &x[0],
                    &x[1],
                    &x[2],
                    Some(&x[3]),
                    strategy,
                    mask.as_deref(),
                )?
                .output)
            },
            move |x: &[Matrix], g: &Matrix| {
                let fwd = head_attention_forward(
                    &x[0],
                    &x[1],
                    &x[2],
                    Some(&x[3]),
                    strategy,
                    mask_b.as_deref(),
                )?;
                let gr = head_attention_backward(
                    &x[0],
                    &x[1],
                    &x[2],
                    Some(&x[3]),
                    strategy,
                    mask_b.as_deref(),
                    &fwd,
                    g,
                )?;
                let dr = gr
                    .dr_hat
                    .unwrap_or_else(|| Matrix::zeros(x[3].rows(), x[3].cols()));
                Ok(vec![gr.dq, gr.dk, gr.dv, dr])
            },
        )
    }

    #[test]
    fn head_gradients_for_every_strategy() {
        let mut r = rng(5);
        let q = Matrix::random_normal(5, 4, &mut r);
        let k = Matrix::random_normal(5, 4, &mut r);
        let v = Matrix::random_normal(5, 3, &mut r);
        let coeff = Matrix::random_uniform(5, 5, 0.3, 2.0, &mut r);
        for s in AdjustmentStrategy::ALL {
            for mask in [None, Some(vec![true, false, true, true, true])] {
                let report = gradient_check(
                    &head_op(s, mask),
                    &[q.clone(), k.clone(), v.clone(), coeff.clone()],
                    1e-5,
                )
                .unwrap();
                assert!(report.passed(), "{report:?}");
            }
        }
    }

    #[test]
    fn batched_matches_single_sequence_heads() {
        let mut r = rng(6);
        let params =
            MultiHeadAttentionParams::init(6, 2, 3, &MappingKind::LearnableSigmoid, &mut r);
        let x = Matrix::random_normal(7, 6, &mut r);
        let segments = Segment::tile([4, 3]);
        let cache = DistanceCache::new();
        let inputs = AttentionInputs {
            mapping: &MappingKind::LearnableSigmoid,
            strategy: AdjustmentStrategy::EarlyMultiply,
            segments: &segments,
            mask: None,
            distances: &cache,
        };
        let batched = multi_head_attention_forward(&x, &params, &inputs).unwrap();
        for seg in &segments {
            let xs = x.block(seg.start, seg.len, 0, 6);
            let single = multi_head_attention(
                &xs,
                &params,
                &MappingKind::LearnableSigmoid,
                AdjustmentStrategy::EarlyMultiply,
            )
            .unwrap();
            let part = batched.output.block(seg.start, seg.len, 0, 6);
            assert!(single.max_abs_diff(&part) < 1e-13);
        }
    }

    #[test]
    fn single_head_with_identity_output_equals_head() {
        let mut r = rng(7);
        let mut params =
            MultiHeadAttentionParams::init(4, 1, 4, &MappingKind::LearnableSigmoid, &mut r);
        params.wo = Matrix::identity(4);
        let x = Matrix::random_normal(5, 4, &mut r);
        let out = multi_head_attention(
            &x,
            &params,
            &MappingKind::LearnableSigmoid,
            AdjustmentStrategy::EarlyMultiply,
        )
        .unwrap();
        let (q, k, v) = project_qkv(&x, &params.head(0)).unwrap();
        let coeff = rescaled_coefficients(
            &build_distance_matrix(5).unwrap(),
            &params.distance[0],
            &MappingKind::LearnableSigmoid,
        )
        .unwrap();
        let head = da_head_attention(&q, &k, &v, &coeff).unwrap();
        assert!(out.max_abs_diff(&head) < 1e-14);
    }

    #[test]
    fn paper_sized_output_shape() {
        let mut r = rng(8);
        let params =
            MultiHeadAttentionParams::init(256, 16, 16, &MappingKind::LearnableSigmoid, &mut r);
        let x = Matrix::random_normal(10, 256, &mut r);
        let out = multi_head_attention(
            &x,
            &params,
            &MappingKind::LearnableSigmoid,
            AdjustmentStrategy::EarlyMultiply,
        )
        .unwrap();
        assert_eq!(out.shape(), (10, 256));
    }

    #[test]
    fn from_heads_round_trip() {
        let mut r = rng(9);
        let params =
            MultiHeadAttentionParams::init(6, 3, 2, &MappingKind::LearnableSigmoid, &mut r);
        let heads: Vec<_> = (0..3).map(|i| params.head(i)).collect();
        let rebuilt = MultiHeadAttentionParams::from_heads(
            &heads,
            params.wo.clone(),
            params.distance.clone(),
        )
        .unwrap();
        assert_eq!(rebuilt, params);
    }

    #[test]
    fn feed_forward_cases() {
        let mut r = rng(10);
        let mut block =
            TransformerBlockParams::init(4, 2, 2, 6, &MappingKind::LearnableSigmoid, &mut r);
        block.ffn_w1 = Matrix::zeros(4, 6);
        block.ffn_w2 = Matrix::zeros(6, 4);
        block.ffn_b2 = Matrix::from_rows(&[[1.0, -2.0, 0.5, 3.0]]).unwrap();
        let x = Matrix::random_normal(3, 4, &mut r);
        let y = feed_forward(&x, &block).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), block.ffn_b2.row(0));
        }

        // 1-wide hand instance: relu(2x - 1) * 3 + 0.5
        let mut tiny =
            TransformerBlockParams::init(1, 1, 1, 1, &MappingKind::LearnableSigmoid, &mut r);
        tiny.ffn_w1 = Matrix::scalar(2.0);
        tiny.ffn_b1 = Matrix::scalar(-1.0);
        tiny.ffn_w2 = Matrix::scalar(3.0);
        tiny.ffn_b2 = Matrix::scalar(0.5);
        let y = feed_forward(&Matrix::from_rows(&[[2.0], [0.25]]).unwrap(), &tiny).unwrap();
        assert_eq!(y.as_slice(), &[9.5, 0.5]);
    }

    #[test]
    fn block_shape_and_determinism() {
        let mut r = rng(11);
        let block =
            TransformerBlockParams::init(8, 2, 4, 16, &MappingKind::LearnableSigmoid, &mut r);
        let x = Matrix::random_normal(4, 8, &mut r);
        let a = transformer_block(
            &x,
            &block,
            &MappingKind::LearnableSigmoid,
            AdjustmentStrategy::EarlyMultiply,
        )
        .unwrap();
        let b = transformer_block(
            &x,
            &block,
            &MappingKind::LearnableSigmoid,
            AdjustmentStrategy::EarlyMultiply,
        )
        .unwrap();
        assert_eq!(a.shape(), x.shape());
        assert_eq!(a, b);
    }

    #[test]
    fn position_encoding_cases() {
        let pe = sinusoidal_position_encoding(50, 8).unwrap();
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        assert!(pe.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..50 {
            for j in 0..i {
                assert!(pe.row(i) != pe.row(j));
            }
        }
        assert!(sinusoidal_position_encoding(4, 7).is_err());
    }
}
