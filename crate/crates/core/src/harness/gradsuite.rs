//! Finite-difference checks of every differentiable operation and of the
//! full model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{
    feed_forward_backward, feed_forward_forward, head_attention_backward, head_attention_forward,
    multi_head_attention_backward, multi_head_attention_forward, project_qkv, project_qkv_backward,
    transformer_block_backward, transformer_block_forward, AdjustmentStrategy, AttentionInputs,
    HeadParams, MultiHeadAttentionParams, Segment, TransformerBlockParams,
};
use crate::distance::{
    build_distance_matrix, map_clip, map_clip_backward, map_exponent, map_exponent_backward,
    map_learnable_sigmoid, map_learnable_sigmoid_backward, map_linear, map_linear_backward,
    map_standard_sigmoid, map_standard_sigmoid_backward, rescaled_coefficients,
    rescaled_coefficients_backward, weight_distances, weight_distances_backward, DistanceCache,
    HeadDistanceParams, MappingKind,
};
use crate::error::Result;
use crate::model::{loss_and_gradients, ModelConfig, ModelParams};
use crate::params::Parameters;
use crate::tasks::{Example, PAD_ID};
use crate::tensor::{
    elementwise_mul, elementwise_mul_backward, gradient_check, layer_norm_backward,
    layer_norm_forward, matmul, matmul_backward, mean_pool_rows, mean_pool_rows_backward, relu,
    relu_backward, row_softmax, row_softmax_backward, softmax_cross_entropy,
    softmax_cross_entropy_backward, ClosureOp, Differentiable, Matrix,
};

/// Tolerance on the relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// One operation with the inputs it is checked at.
pub struct SuiteCase {
    pub op: Box<dyn Differentiable>,
    pub inputs: Vec<Matrix>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteLine {
    pub op: String,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub lines: Vec<SuiteLine>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.lines
            .iter()
            .filter(|l| !l.passed)
            .map(|l| l.op.as_str())
            .collect()
    }
}

fn case<F, B>(name: impl Into<String>, inputs: Vec<Matrix>, forward: F, backward: B) -> SuiteCase
where
    F: Fn(&[Matrix]) -> Result<Matrix> + 'static,
    B: Fn(&[Matrix], &Matrix) -> Result<Vec<Matrix>> + 'static,
{
    SuiteCase {
        op: Box::new(ClosureOp::new(name, forward, backward)),
        inputs,
    }
}

fn scalar_of(x: &Matrix) -> f64 {
    x.get(0, 0)
}

fn head_case(strategy: AdjustmentStrategy, rng: &mut ChaCha8Rng) -> SuiteCase {
    let n = 5;
    let inputs = vec![
        Matrix::random_normal(n, 4, rng),
        Matrix::random_normal(n, 4, rng),
        Matrix::random_normal(n, 3, rng),
        Matrix::random_uniform(n, n, 0.3, 2.0, rng),
    ];
    let mask = [true, true, true, false, true];
    case(
        format!("head_attention[{strategy}]"),
        inputs,
        move |x| {
            Ok(
                head_attention_forward(&x[0], &x[1], &x[2], Some(&x[3]), strategy, Some(&mask))?
                    .output,
            )
        },
        move |x, g| {
            let fwd =
                head_attention_forward(&x[0], &x[1], &x[2], Some(&x[3]), strategy, Some(&mask))?;
            let gr = head_attention_backward(
                &x[0],
                &x[1],
                &x[2],
                Some(&x[3]),
                strategy,
                Some(&mask),
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

/// Wraps a parameter structure so that its tensors, followed by `extra`
/// inputs, become the inputs of a checked operation.
fn param_case<P, F, B>(
    name: &str,
    template: P,
    extra: Vec<Matrix>,
    forward: F,
    backward: B,
) -> SuiteCase
where
    P: Parameters + 'static,
    F: Fn(&P, &[Matrix]) -> Result<Matrix> + 'static,
    B: Fn(&P, &[Matrix], &Matrix) -> Result<(P, Vec<Matrix>)> + 'static,
{
    let count = template.to_matrices().len();
    let mut inputs = template.to_matrices();
    inputs.extend(extra);
    let t2 = template.clone();
    case(
        name,
        inputs,
        move |x| {
            let mut p = template.clone();
            p.assign_matrices(&x[..count])?;
            forward(&p, &x[count..])
        },
        move |x, g| {
            let mut p = t2.clone();
            p.assign_matrices(&x[..count])?;
            let (gp, mut rest) = backward(&p, &x[count..], g)?;
            let mut out = gp.to_matrices();
            out.append(&mut rest);
            Ok(out)
        },
    )
}

/// Every operation of the suite, each exactly once.
pub fn suite_cases() -> Vec<SuiteCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let rng = &mut rng;
    let mut cases = Vec::new();

    cases.push(case(
        "matmul",
        vec![
            Matrix::random_normal(4, 3, rng),
            Matrix::random_normal(3, 5, rng),
        ],
        |x| matmul(&x[0], &x[1]),
        |x, g| {
            let (a, b) = matmul_backward(&x[0], &x[1], g)?;
            Ok(vec![a, b])
        },
    ));
    cases.push(case(
        "row_softmax",
        vec![Matrix::random_normal(4, 5, rng)],
        |x| Ok(row_softmax(&x[0])),
        |x, g| Ok(vec![row_softmax_backward(&row_softmax(&x[0]), g)?]),
    ));
    cases.push(case(
        "relu",
        vec![Matrix::random_normal(4, 5, rng)],
        |x| Ok(relu(&x[0])),
        |x, g| Ok(vec![relu_backward(&x[0], g)?]),
    ));
    cases.push(case(
        "elementwise_mul",
        vec![
            Matrix::random_normal(3, 4, rng),
            Matrix::random_normal(3, 4, rng),
        ],
        |x| elementwise_mul(&x[0], &x[1]),
        |x, g| {
            let (a, b) = elementwise_mul_backward(&x[0], &x[1], g)?;
            Ok(vec![a, b])
        },
    ));
    cases.push(case(
        "layer_norm",
        vec![
            Matrix::random_normal(3, 6, rng),
            Matrix::random_uniform(1, 6, 0.5, 1.5, rng),
            Matrix::random_normal(1, 6, rng),
        ],
        |x| Ok(layer_norm_forward(&x[0], &x[1], &x[2])?.0),
        |x, g| {
            let (_, cache) = layer_norm_forward(&x[0], &x[1], &x[2])?;
            let (a, b, c) = layer_norm_backward(&cache, &x[1], g)?;
            Ok(vec![a, b, c])
        },
    ));
    cases.push(case(
        "mean_pool_rows",
        vec![Matrix::random_normal(5, 4, rng)],
        |x| Ok(mean_pool_rows(&x[0])),
        |x, g| Ok(vec![mean_pool_rows_backward(x[0].rows(), g)]),
    ));
    cases.push(case(
        "softmax_cross_entropy",
        vec![Matrix::random_normal(1, 4, rng)],
        |x| Ok(Matrix::scalar(softmax_cross_entropy(&x[0], 2)?)),
        |x, g| {
            Ok(vec![
                softmax_cross_entropy_backward(&x[0], 2)?.scale(scalar_of(g))
            ])
        },
    ));

    let r6 = build_distance_matrix(6).expect("n > 0");
    let r = r6.clone();
    cases.push(case(
        "weight_distances",
        vec![Matrix::scalar(0.7)],
        move |x| Ok(weight_distances(&r, scalar_of(&x[0]))),
        {
            let r = r6.clone();
            move |_, g| Ok(vec![Matrix::scalar(weight_distances_backward(&r, g)?)])
        },
    ));
    cases.push(case(
        "map_learnable_sigmoid",
        vec![
            Matrix::random_uniform(4, 4, -4.0, 4.0, rng),
            Matrix::scalar(0.6),
        ],
        |x| Ok(map_learnable_sigmoid(&x[0], scalar_of(&x[1]))),
        |x, g| {
            let (dx, dv) = map_learnable_sigmoid_backward(&x[0], scalar_of(&x[1]), g)?;
            Ok(vec![dx, Matrix::scalar(dv)])
        },
    ));
    // Clip threshold 2.5 keeps inputs away from the kink.
    cases.push(case(
        "map_clip",
        vec![Matrix::from_rows(&[[0.3, 1.7, -2.0], [4.0, 2.2, 3.1]]).expect("rows")],
        |x| map_clip(&x[0], 2.5),
        |x, g| Ok(vec![map_clip_backward(&x[0], 2.5, g)?]),
    ));
    cases.push(case(
        "map_linear",
        vec![
            Matrix::random_normal(3, 3, rng),
            Matrix::scalar(1.3),
            Matrix::scalar(-0.4),
        ],
        |x| Ok(map_linear(&x[0], scalar_of(&x[1]), scalar_of(&x[2]))),
        |x, g| {
            let (dx, dk, db) = map_linear_backward(&x[0], scalar_of(&x[1]), g)?;
            Ok(vec![dx, Matrix::scalar(dk), Matrix::scalar(db)])
        },
    ));
    cases.push(case(
        "map_exponent",
        vec![Matrix::random_uniform(3, 3, -3.0, 3.0, rng)],
        |x| Ok(map_exponent(&x[0])),
        |x, g| Ok(vec![map_exponent_backward(&x[0], g)?]),
    ));
    cases.push(case(
        "map_standard_sigmoid",
        vec![Matrix::random_normal(3, 3, rng)],
        |x| Ok(map_standard_sigmoid(&x[0])),
        |x, g| Ok(vec![map_standard_sigmoid_backward(&x[0], g)?]),
    ));
    for kind in [
        MappingKind::LearnableSigmoid,
        MappingKind::Linear {
            slope: 0.8,
            intercept: 0.3,
        },
    ] {
        let r = r6.clone();
        let r2 = r6.clone();
        cases.push(case(
            format!("rescaled_coefficients[{}]", kind.name()),
            vec![Matrix::from_rows(&[[0.45, -0.3, 0.8, 0.3]]).expect("row")],
            move |x| {
                let p = x[0].row(0);
                let params = HeadDistanceParams {
                    w: p[0],
                    v: p[1],
                    slope: p[2],
                    intercept: p[3],
                };
                rescaled_coefficients(&r, &params, &kind)
            },
            move |x, g| {
                let p = x[0].row(0);
                let params = HeadDistanceParams {
                    w: p[0],
                    v: p[1],
                    slope: p[2],
                    intercept: p[3],
                };
                let d = rescaled_coefficients_backward(&r2, &params, &kind, g)?;
                Ok(vec![Matrix::from_rows(&[[
                    d.w,
                    d.v,
                    d.slope,
                    d.intercept,
                ]])?])
            },
        ));
    }

    let head = HeadParams {
        wq: Matrix::random_normal(6, 4, rng),
        wk: Matrix::random_normal(6, 4, rng),
        wv: Matrix::random_normal(6, 4, rng),
    };
    cases.push(case(
        "project_qkv",
        vec![Matrix::random_normal(5, 6, rng), head.wq, head.wk, head.wv],
        |x| {
            let head = HeadParams {
                wq: x[1].clone(),
                wk: x[2].clone(),
                wv: x[3].clone(),
            };
            let (q, k, v) = project_qkv(&x[0], &head)?;
            // Stack the three outputs side by side.
            let mut out = Matrix::zeros(q.rows(), 12);
            out.set_block(0, 0, &q);
            out.set_block(0, 4, &k);
            out.set_block(0, 8, &v);
            Ok(out)
        },
        |x, g| {
            let head = HeadParams {
                wq: x[1].clone(),
                wk: x[2].clone(),
                wv: x[3].clone(),
            };
            let n = g.rows();
            let (dh, grads) = project_qkv_backward(
                &x[0],
                &head,
                &g.block(0, n, 0, 4),
                &g.block(0, n, 4, 4),
                &g.block(0, n, 8, 4),
            )?;
            Ok(vec![dh, grads.wq, grads.wk, grads.wv])
        },
    ));

    for strategy in AdjustmentStrategy::ALL {
        cases.push(head_case(strategy, rng));
    }

    let mut attention =
        MultiHeadAttentionParams::init(8, 2, 4, &MappingKind::LearnableSigmoid, rng);
    attention.distance[0].v = 0.4;
    attention.distance[1].v = -0.3;
    for strategy in AdjustmentStrategy::ALL {
        let name = format!("multi_head_attention[{strategy}]");
        cases.push(param_case(
            &name,
            attention.clone(),
            vec![Matrix::random_normal(5, 8, rng)],
            move |p, x| {
                let cache = DistanceCache::new();
                let segments = Segment::tile([3, 2]);
                let inputs = mha_inputs(strategy, &segments, &cache);
                Ok(multi_head_attention_forward(&x[0], p, &inputs)?.output)
            },
            move |p, x, g| {
                let cache = DistanceCache::new();
                let segments = Segment::tile([3, 2]);
                let inputs = mha_inputs(strategy, &segments, &cache);
                let fwd = multi_head_attention_forward(&x[0], p, &inputs)?;
                let mut grads = p.zeros_like();
                let dx = multi_head_attention_backward(&x[0], p, &inputs, &fwd, g, &mut grads)?;
                Ok((grads, vec![dx]))
            },
        ));
    }

    let mut block = TransformerBlockParams::init(8, 2, 4, 10, &MappingKind::LearnableSigmoid, rng);
    block.ffn_b1 = Matrix::random_normal(1, 10, rng).scale(0.1);
    block.ln1_gain = Matrix::random_uniform(1, 8, 0.5, 1.5, rng);
    block.ln2_bias = Matrix::random_normal(1, 8, rng).scale(0.1);
    cases.push(param_case(
        "feed_forward",
        block.clone(),
        vec![Matrix::random_normal(4, 8, rng)],
        |p, x| Ok(feed_forward_forward(&x[0], p)?.0),
        |p, x, g| {
            let (_, cache) = feed_forward_forward(&x[0], p)?;
            let mut grads = p.zeros_like();
            let dx = feed_forward_backward(&x[0], p, &cache, g, &mut grads)?;
            Ok((grads, vec![dx]))
        },
    ));
    cases.push(param_case(
        "transformer_block",
        block,
        vec![Matrix::random_normal(4, 8, rng)],
        |p, x| {
            let cache = DistanceCache::new();
            let segments = Segment::tile([4]);
            let inputs = mha_inputs(AdjustmentStrategy::EarlyMultiply, &segments, &cache);
            Ok(transformer_block_forward(&x[0], p, &inputs)?.output)
        },
        |p, x, g| {
            let cache = DistanceCache::new();
            let segments = Segment::tile([4]);
            let inputs = mha_inputs(AdjustmentStrategy::EarlyMultiply, &segments, &cache);
            let fwd = transformer_block_forward(&x[0], p, &inputs)?;
            let mut grads = p.zeros_like();
            let dx = transformer_block_backward(&x[0], p, &inputs, &fwd, g, &mut grads)?;
            Ok((grads, vec![dx]))
        },
    ));

    cases.push(full_model_case(rng));
    cases
}

fn mha_inputs<'a>(
    strategy: AdjustmentStrategy,
    segments: &'a [Segment],
    cache: &'a DistanceCache,
) -> AttentionInputs<'a> {
    AttentionInputs {
        mapping: &MappingKind::LearnableSigmoid,
        strategy,
        segments,
        mask: None,
        distances: cache,
    }
}

fn full_model_case(rng: &mut ChaCha8Rng) -> SuiteCase {
    let cfg = ModelConfig {
        vocab: 10,
        d_model: 8,
        heads: 2,
        head_dim: 4,
        d_ff: 12,
        classes: 3,
        mapping: MappingKind::LearnableSigmoid,
        strategy: AdjustmentStrategy::EarlyMultiply,
        max_len: 6,
        use_sinusoidal_pos: false,
        layers: 1,
    };
    let mut params = ModelParams::init(&cfg, rng).expect("valid config");
    // Init-scale embeddings leave projection gradients below what central
    // differences resolve.
    params.embeddings = Matrix::random_uniform(cfg.vocab, cfg.d_model, -1.0, 1.0, rng);
    let batch = vec![
        Example {
            tokens: vec![2, 5, 7, 3, 9],
            label: 2,
        },
        Example {
            tokens: vec![4, 4, 8, PAD_ID],
            label: 0,
        },
    ];
    let cfg2 = cfg.clone();
    let batch2 = batch.clone();
    param_case(
        "full_model",
        params,
        Vec::new(),
        move |p, _| {
            let refs: Vec<&Example> = batch.iter().collect();
            Ok(Matrix::scalar(
                loss_and_gradients(p, &cfg, &refs, &DistanceCache::new())?.0,
            ))
        },
        move |p, _, g| {
            let refs: Vec<&Example> = batch2.iter().collect();
            let (_, _, mut grads) = loss_and_gradients(p, &cfg2, &refs, &DistanceCache::new())?;
            let s = scalar_of(g);
            for v in grads.params_mut() {
                v.values.iter_mut().for_each(|x| *x *= s);
            }
            Ok((grads, Vec::new()))
        },
    )
}

/// Checks every case and reports the worst relative error per operation.
pub fn run_suite(cases: &[SuiteCase], tolerance: f64) -> Result<SuiteReport> {
    let mut lines = Vec::with_capacity(cases.len());
    for c in cases {
        let report = gradient_check(c.op.as_ref(), &c.inputs, tolerance)?;
        lines.push(SuiteLine {
            op: report.op.clone(),
            max_rel_error: report.max_rel_error,
            checked: report.checked,
            skipped: report.skipped,
            passed: report.passed(),
        });
    }
    Ok(SuiteReport { tolerance, lines })
}
