use da_transformer::attention::{
    da_head_attention, head_attention_forward, multi_head_attention, vanilla_head_attention,
    AdjustmentStrategy, MultiHeadAttentionParams,
};
use da_transformer::distance::{
    build_distance_matrix, learnable_sigmoid, rescaled_coefficients, HeadDistanceParams,
    MappingKind,
};
use da_transformer::model::macro_f1;
use da_transformer::tasks::{gen_local_task, gen_longrange_task, FIRST_TOKEN_ID};
use da_transformer::tensor::{
    matmul, matmul_backward, relu, row_softmax, row_softmax_backward, Matrix,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols)
        .prop_map(move |v| Matrix::from_vec(rows, cols, v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..6, 1usize..6)
}

fn mapping() -> impl Strategy<Value = MappingKind> {
    prop_oneof![
        Just(MappingKind::LearnableSigmoid),
        (0.5f64..5.0).prop_map(|threshold| MappingKind::Clip { threshold }),
        (-2.0f64..2.0, -1.0f64..1.0)
            .prop_map(|(slope, intercept)| MappingKind::Linear { slope, intercept }),
        Just(MappingKind::Exponent),
        Just(MappingKind::StandardSigmoid),
    ]
}

fn qkv(n: usize, d: usize, seed: u64) -> (Matrix, Matrix, Matrix) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        Matrix::random_normal(n, d, &mut rng),
        Matrix::random_normal(n, d, &mut rng),
        Matrix::random_normal(n, d, &mut rng),
    )
}

fn permute_rows(m: &Matrix, perm: &[usize]) -> Matrix {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&i| m.row(i).to_vec()).collect();
    Matrix::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(m in dims().prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = row_softmax(&m);
        prop_assert_eq!(s.len(), s.rows() * s.cols());
        for i in 0..s.rows() {
            prop_assert!((s.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(i).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, n, p, q)| (matrix(m, n), matrix(n, p), matrix(p, q)))
    ) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right) < 1e-9);
    }

    #[test]
    fn relu_is_nonnegative_and_idempotent(m in dims().prop_flat_map(|(r, c)| matrix(r, c))) {
        let once = relu(&m);
        prop_assert!(once.as_slice().iter().all(|&x| x >= 0.0));
        prop_assert_eq!(relu(&once), once);
    }

    #[test]
    fn backward_is_linear_in_output_gradient(
        (a, b, g1, g2) in (1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(m, n, p)| (matrix(m, n), matrix(n, p), matrix(m, p), matrix(m, p))),
        alpha in -2.0f64..2.0,
    ) {
        let combined = g1.add(&g2.scale(alpha)).unwrap();
        let (da, db) = matmul_backward(&a, &b, &combined).unwrap();
        let (da1, db1) = matmul_backward(&a, &b, &g1).unwrap();
        let (da2, db2) = matmul_backward(&a, &b, &g2).unwrap();
        prop_assert_eq!(da.shape(), a.shape());
        prop_assert_eq!(db.shape(), b.shape());
        prop_assert!(da.max_abs_diff(&da1.add(&da2.scale(alpha)).unwrap()) < 1e-10);
        prop_assert!(db.max_abs_diff(&db1.add(&db2.scale(alpha)).unwrap()) < 1e-10);
    }

    #[test]
    fn softmax_backward_is_linear(
        (x, g1, g2) in dims().prop_flat_map(|(r, c)| (matrix(r, c), matrix(r, c), matrix(r, c))),
        alpha in -2.0f64..2.0,
    ) {
        let y = row_softmax(&x);
        let lhs = row_softmax_backward(&y, &g1.add(&g2.scale(alpha)).unwrap()).unwrap();
        let rhs = row_softmax_backward(&y, &g1)
            .unwrap()
            .add(&row_softmax_backward(&y, &g2).unwrap().scale(alpha))
            .unwrap();
        prop_assert_eq!(lhs.shape(), x.shape());
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn distance_matrix_structure(n in 1usize..40) {
        let r = build_distance_matrix(n).unwrap();
        let e = r.entries();
        for i in 0..n {
            prop_assert_eq!(e.get(i, i), 0.0);
            for j in 0..n {
                prop_assert_eq!(e.get(i, j), e.get(j, i));
                prop_assert_eq!(e.get(i, j), i.abs_diff(j) as f64);
            }
        }
    }

    #[test]
    fn learnable_sigmoid_requirements(v in -10.0f64..10.0, x0 in -20.0f64..20.0, step in 1e-3f64..2.0) {
        prop_assert!((learnable_sigmoid(0.0, v) - 1.0).abs() <= 1e-12);
        prop_assert!(learnable_sigmoid(x0, v) < learnable_sigmoid(x0 + step, v));
        if v.abs() <= 5.0 {
            prop_assert!(learnable_sigmoid(-50.0, v).abs() < 1e-9);
            prop_assert!((learnable_sigmoid(50.0, v) - (1.0 + v.exp())).abs() < 1e-9);
        }
        prop_assert!(1.0 + v.exp() < 1.0 + (v + step).exp());
    }

    #[test]
    fn coefficients_symmetric_with_constant_diagonal(
        n in 1usize..12, w in -2.0f64..2.0, v in -3.0f64..3.0, kind in mapping()
    ) {
        let mut p = HeadDistanceParams::new(w, v);
        if let MappingKind::Linear { slope, intercept } = kind {
            p.slope = slope;
            p.intercept = intercept;
        }
        let r = build_distance_matrix(n).unwrap();
        let c = rescaled_coefficients(&r, &p, &kind).unwrap();
        let diag = c.get(0, 0);
        for i in 0..n {
            prop_assert_eq!(c.get(i, i), diag);
            for j in 0..n {
                prop_assert_eq!(c.get(i, j), c.get(j, i));
            }
        }
        if !matches!(kind, MappingKind::Linear { .. }) {
            // f(0) of each fixed mapping
            let expected = match kind {
                MappingKind::Clip { .. } => 0.0,
                MappingKind::StandardSigmoid => 0.5,
                _ => 1.0,
            };
            prop_assert!((diag - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficient_profile_follows_weight_sign(n in 2usize..30, w in -1.5f64..1.5, v in -3.0f64..3.0) {
        let r = build_distance_matrix(n).unwrap();
        let c = rescaled_coefficients(&r, &HeadDistanceParams::new(w, v), &MappingKind::LearnableSigmoid).unwrap();
        for d in 1..n {
            let (near, far) = (c.get(0, d - 1), c.get(0, d));
            if w > 0.0 {
                prop_assert!(far >= near);
            } else {
                prop_assert!(far <= near);
            }
        }
    }

    #[test]
    fn every_softmax_path_normalizes(n in 1usize..7, d in 1usize..6, seed in any::<u64>(), w in -1.0f64..1.0) {
        let (q, k, v) = qkv(n, d, seed);
        let r = rescaled_coefficients(
            &build_distance_matrix(n).unwrap(),
            &HeadDistanceParams::new(w, 0.3),
            &MappingKind::LearnableSigmoid,
        ).unwrap();
        for strategy in AdjustmentStrategy::ALL {
            let r_hat = strategy.uses_distance().then_some(&r);
            let f = head_attention_forward(&q, &k, &v, r_hat, strategy, None).unwrap();
            for i in 0..n {
                prop_assert!((f.probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_weight_is_neutral(n in 1usize..7, d in 1usize..6, seed in any::<u64>(), v in -3.0f64..3.0) {
        let (q, k, vals) = qkv(n, d, seed);
        let r = rescaled_coefficients(
            &build_distance_matrix(n).unwrap(),
            &HeadDistanceParams::new(0.0, v),
            &MappingKind::LearnableSigmoid,
        ).unwrap();
        prop_assert!(r.as_slice().iter().all(|&c| c == 1.0));
        let gated = {
            let sqrt_d = (d as f64).sqrt();
            let s = relu(&da_transformer::tensor::matmul_nt(&q, &k).unwrap()).map(|x| x / sqrt_d);
            matmul(&row_softmax(&s), &vals).unwrap()
        };
        prop_assert_eq!(da_head_attention(&q, &k, &vals, &r).unwrap(), gated);
    }

    #[test]
    fn vanilla_attention_is_permutation_covariant(
        n in 2usize..7, d in 1usize..5, seed in any::<u64>(), shuffle in any::<u64>()
    ) {
        let (q, k, v) = qkv(n, d, seed);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(shuffle));
        let out = vanilla_head_attention(&q, &k, &v).unwrap();
        let permuted = vanilla_head_attention(
            &permute_rows(&q, &perm), &permute_rows(&k, &perm), &permute_rows(&v, &perm),
        ).unwrap();
        prop_assert!(permuted.max_abs_diff(&permute_rows(&out, &perm)) < 1e-12);
    }

    #[test]
    fn macro_f_ignores_class_names(
        pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
        perm in Just([0usize, 1, 2]).prop_shuffle(),
    ) {
        let labels: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let preds: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let relabel = |xs: &[usize]| xs.iter().map(|&x| perm[x]).collect::<Vec<_>>();
        let a = macro_f1(&labels, &preds, 3);
        let b = macro_f1(&relabel(&labels), &relabel(&preds), 3);
        prop_assert!((a - b).abs() < 1e-12);
    }
}

fn adjacent_equal(t: &[usize]) -> bool {
    (1..t.len()).any(|i| t[i] == t[i - 1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generators_are_pure_and_labels_hold(
        seed in any::<u64>(), n in 1usize..60, seq_len in 8usize..24, vocab in 8usize..40
    ) {
        let local = gen_local_task(seed, n, seq_len, vocab).unwrap();
        prop_assert_eq!(&local.examples, &gen_local_task(seed, n, seq_len, vocab).unwrap().examples);
        for e in &local.examples {
            prop_assert_eq!(e.label == 1, adjacent_equal(&e.tokens));
            prop_assert!(e.tokens.iter().all(|&t| (FIRST_TOKEN_ID..vocab).contains(&t)));
        }
        let long = gen_longrange_task(seed, n, seq_len, vocab).unwrap();
        prop_assert_eq!(&long.examples, &gen_longrange_task(seed, n, seq_len, vocab).unwrap().examples);
        for e in &long.examples {
            let t = &e.tokens;
            prop_assert_eq!(e.label == 1, t[0] == t[t.len() - 1]);
            prop_assert!(t.iter().all(|&x| (FIRST_TOKEN_ID..vocab).contains(&x)));
            prop_assert!(!adjacent_equal(&t[..t.len()]));
        }
    }
}

#[test]
fn distance_aware_attention_breaks_permutation_symmetry() {
    let n = 5;
    let (q, k, v) = qkv(n, 3, 11);
    let r = rescaled_coefficients(
        &build_distance_matrix(n).unwrap(),
        &HeadDistanceParams::new(0.8, 0.0),
        &MappingKind::LearnableSigmoid,
    )
    .unwrap();
    let perm = [4, 2, 0, 1, 3];
    let out = da_head_attention(&q, &k, &v, &r).unwrap();
    let permuted = da_head_attention(
        &permute_rows(&q, &perm),
        &permute_rows(&k, &perm),
        &permute_rows(&v, &perm),
        &r,
    )
    .unwrap();
    assert!(permuted.max_abs_diff(&permute_rows(&out, &perm)) > 1e-6);

    // The multi-head vanilla path stays covariant; the distance-aware one does not.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = MultiHeadAttentionParams::init(6, 2, 3, &MappingKind::LearnableSigmoid, &mut rng);
    let x = Matrix::random_normal(n, 6, &mut rng);
    let kind = MappingKind::LearnableSigmoid;
    for (strategy, covariant) in [
        (AdjustmentStrategy::Vanilla, true),
        (AdjustmentStrategy::EarlyMultiply, false),
    ] {
        let out = multi_head_attention(&x, &params, &kind, strategy).unwrap();
        let permuted =
            multi_head_attention(&permute_rows(&x, &perm), &params, &kind, strategy).unwrap();
        let diff = permuted.max_abs_diff(&permute_rows(&out, &perm));
        assert_eq!(diff < 1e-12, covariant, "{strategy}: {diff}");
    }
}

#[test]
fn gated_scores_are_sparse() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = rescaled_coefficients(
        &build_distance_matrix(8).unwrap(),
        &HeadDistanceParams::new(0.5, 0.0),
        &MappingKind::LearnableSigmoid,
    )
    .unwrap();
    let (mut zeros, mut total) = (0usize, 0usize);
    for _ in 0..100 {
        let q = Matrix::random_normal(8, 4, &mut rng);
        let k = Matrix::random_normal(8, 4, &mut rng);
        let s = relu(&da_transformer::tensor::matmul_nt(&q, &k).unwrap());
        let gated = da_transformer::tensor::elementwise_mul(&s, &r).unwrap();
        zeros += gated.as_slice().iter().filter(|&&x| x == 0.0).count();
        total += gated.len();
    }
    assert!(zeros as f64 >= 0.25 * total as f64, "{zeros}/{total}");
}
