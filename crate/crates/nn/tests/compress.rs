use proptest::prelude::*;
use ttkit_core::{DenseTensor, Matrix, Rng};
use ttkit_nn::compress::{
    compress_model, prune_magnitude, quantize_uniform, tucker2_decompose, tucker2_param_count, Action, Plan, RankSpec,
    Tucker2Factors,
};
use ttkit_nn::{Layer, ModelGraph};

fn orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let m = Matrix::from_fn(rows, cols, |_, _| rng.normal());
    ttkit_core::linalg::qr(&m).unwrap().0.leading_columns(cols)
}

fn planted_kernel(c_out: usize, c_in: usize, d: usize, r: usize, rng: &mut Rng) -> DenseTensor {
    let f = Tucker2Factors {
        u_in: orthonormal(c_in, r, rng),
        core: DenseTensor::from_fn(vec![r, r, d, d], |_| rng.normal()).unwrap(),
        u_out: orthonormal(c_out, r, rng),
    };
    f.reconstruct()
}

#[test]
fn tucker2_recovers_planted_rank_three() {
    for seed in 0..10 {
        let mut rng = Rng::new(seed);
        let k = planted_kernel(8, 8, 3, 3, &mut rng);
        let res = tucker2_decompose(&k, 3, 50, 1e-8).unwrap();
        assert!(res.rel_error <= 1e-6, "seed {seed}: {}", res.rel_error);
        assert_eq!(res.factors.param_count(), 8 * 3 + 9 * 9 + 3 * 8);
    }
}

#[test]
fn tucker2_error_history_is_monotone() {
    for seed in 0..10 {
        let mut rng = Rng::new(100 + seed);
        let k = DenseTensor::from_fn(vec![10, 7, 3, 3], |_| rng.normal()).unwrap();
        let res = tucker2_decompose(&k, 3, 50, 0.0).unwrap();
        assert!(res.history.len() >= 2);
        for w in res.history.windows(2) {
            assert!(w[1] <= w[0], "seed {seed}: {:?}", res.history);
        }
        assert_eq!(*res.history.last().unwrap(), res.rel_error);
    }
}

#[test]
fn tucker2_full_rank_one_by_one_is_exact() {
    let mut rng = Rng::new(7);
    for (co, ci) in [(5, 5), (6, 4), (3, 7)] {
        let k = DenseTensor::from_fn(vec![co, ci, 1, 1], |_| rng.normal()).unwrap();
        let res = tucker2_decompose(&k, co.min(ci), 50, 1e-8).unwrap();
        assert!(res.rel_error <= 1e-10, "{}", res.rel_error);
        assert!(res.factors.reconstruct().relative_error(&k).unwrap() <= 1e-10);
    }
}

#[test]
fn tucker2_parameter_arithmetic() {
    assert_eq!(tucker2_param_count(64, 64, 3, 8), 1600);
    assert_eq!(64 * 64 * 9, 36_864);
    assert!((36_864.0 / 1600.0 - 23.04_f64).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn tucker2_param_count_is_element_count(c_out in 1usize..7, c_in in 1usize..7, d in 1usize..4, seed in 0u64..1000) {
        let r = 1 + (seed as usize) % c_in.min(c_out);
        let mut rng = Rng::new(seed);
        let k = DenseTensor::from_fn(vec![c_out, c_in, d, d], |_| rng.normal()).unwrap();
        let res = tucker2_decompose(&k, r, 5, 1e-8).unwrap();
        let f = &res.factors;
        prop_assert_eq!(f.param_count(), tucker2_param_count(c_in, c_out, d, r));
        prop_assert_eq!(f.param_count(), f.u_in.data().len() + f.core.len() + f.u_out.data().len());
    }

    #[test]
    fn quant_roundtrip_within_half_step(seed in 0u64..10_000, n in 1usize..200, bits in prop::sample::select(vec![4u32, 8])) {
        let mut rng = Rng::new(seed);
        let t = DenseTensor::from_fn(vec![n], |_| rng.uniform(-1.0, 1.0).unwrap()).unwrap();
        let q = quantize_uniform(&t, bits).unwrap();
        let back = q.dequantize().unwrap();
        for (a, b) in t.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= q.scale / 2.0 + 1e-12);
        }
    }

    #[test]
    fn prune_zero_count_is_exact(seed in 0u64..10_000, n in 1usize..300, s in 0.0f64..0.999) {
        let mut rng = Rng::new(seed);
        let t = DenseTensor::from_fn(vec![n], |_| rng.normal()).unwrap();
        let p = prune_magnitude(&t, s).unwrap();
        let k = (s * n as f64).floor() as usize;
        prop_assert_eq!(p.tensor.data().iter().filter(|&&v| v != 0.0).count(), n - k);
        prop_assert_eq!(p.achieved_sparsity, k as f64 / n as f64);
        prop_assert_eq!(p.mask.iter().filter(|&&m| !m).count(), k);
    }
}

fn two_conv_model() -> ModelGraph {
    let mut rng = Rng::new(0);
    ModelGraph::new(
        vec![4, 6, 6],
        vec![
            Layer::conv2d("conv_a", 4, 64, 3, 1, 1, &mut rng),
            Layer::relu("relu_a"),
            Layer::conv2d("conv_b", 64, 64, 3, 1, 1, &mut rng),
            Layer::relu("relu_b"),
            Layer::flatten("flat"),
            Layer::dense("fc", 64 * 36, 3, &mut rng),
        ],
    )
    .unwrap()
}

#[test]
fn empty_plan_is_identity() {
    let m = ModelGraph::bars_cnn(8, 2, 4);
    let (out, report) = compress_model(&m, &Plan::default()).unwrap();
    assert_eq!(out, m);
    assert_eq!(report.coefficient, 1.0);
    assert!(report.layers.iter().all(|l| l.params_before == l.params_after && l.rel_error == 0.0));
}

#[test]
fn single_conv_coefficient_matches_formula() {
    let m = two_conv_model();
    let plan = Plan::from_json(r#"{"layers":{"conv_b":[{"op":"tucker2","rank":8}]}}"#).unwrap();
    let (out, report) = compress_model(&m, &plan).unwrap();
    let before = m.param_count();
    assert_eq!(report.totals.params_before, before);
    assert_eq!(report.totals.params_after, before - 36_864 + 1600);
    assert_eq!(report.coefficient, before as f64 / (before - 36_864 + 1600) as f64);
    assert_eq!(out.param_count(), report.totals.params_after);
    let conv_b = &report.layers[2];
    assert_eq!((conv_b.params_before, conv_b.params_after), (36_864 + 64, 1600 + 64));
    assert!(conv_b.rel_error > 0.0 && conv_b.rel_error < 1.0);
}

#[test]
fn coefficient_ignores_plan_order() {
    let m = ModelGraph::bars_cnn(8, 2, 5);
    let a = r#"{"layers":{"conv1":[{"op":"prune","sparsity":0.3}],"conv2":[{"op":"tucker2","rank":5}],"fc":[{"op":"quant","bits":4}]}}"#;
    let b = r#"{"layers":{"fc":[{"op":"quant","bits":4}],"conv2":[{"op":"tucker2","rank":5}],"conv1":[{"op":"prune","sparsity":0.3}]}}"#;
    let (ma, ra) = compress_model(&m, &Plan::from_json(a).unwrap()).unwrap();
    let (mb, rb) = compress_model(&m, &Plan::from_json(b).unwrap()).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ma, mb);
    assert!(ra.coefficient > 1.0);
}

#[test]
fn prune_counts_only_survivors() {
    let m = ModelGraph::bars_cnn(8, 2, 6);
    let plan = Plan::from_json(r#"{"layers":{"conv2":[{"op":"prune","sparsity":0.5}]}}"#).unwrap();
    let (_, report) = compress_model(&m, &plan).unwrap();
    assert_eq!(report.layers[3].params_after, 4608 - 2304 + 32);
}

#[test]
fn ttm_replaces_dense_layer() {
    let mut rng = Rng::new(8);
    let m = ModelGraph::new(vec![16], vec![Layer::dense("fc1", 16, 16, &mut rng), Layer::relu("r"), Layer::dense("fc2", 16, 2, &mut rng)])
        .unwrap();
    let plan = Plan::from_json(r#"{"layers":{"fc1":[{"op":"ttm","row_factors":[4,4],"col_factors":[4,4],"tol":0.0}]}}"#).unwrap();
    let (out, report) = compress_model(&m, &plan).unwrap();
    assert_eq!(out.layer("fc1").unwrap().kind.type_name(), "dense_ttm");
    assert!(report.layers[0].rel_error <= 1e-12);
    let x = ttkit_nn::Array::new(vec![3, 16], (0..48).map(|_| rng.normal()).collect());
    let (a, b) = (m.forward(&x).unwrap(), out.forward(&x).unwrap());
    for (p, q) in a.data.iter().zip(&b.data) {
        assert!((p - q).abs() < 1e-10);
    }
}

#[test]
fn mismatch_errors_name_the_layer() {
    let m = ModelGraph::bars_cnn(8, 2, 0);
    let plan = Plan::from_json(r#"{"layers":{"conv1":[{"op":"ttm","row_factors":[4],"col_factors":[4]}]}}"#).unwrap();
    let err = compress_model(&m, &plan).unwrap_err();
    assert!(err.to_string().contains("conv1"), "{err}");
}

#[test]
fn quantized_model_survives_container() {
    let m = ModelGraph::bars_cnn(8, 2, 9);
    let plan = Plan::from_json(r#"{"default":[{"op":"tucker2","rank":{"auto":2}},{"op":"quant","bits":8}]}"#).unwrap();
    let (out, report) = compress_model(&m, &plan).unwrap();
    assert!(report.totals.bytes_after < report.totals.bytes_before / 4);
    let c = ttkit_core::container::Container::from_bytes(&out.to_container().to_bytes()).unwrap();
    let back = ModelGraph::from_container(&c).unwrap();
    assert_eq!(back.layers().len(), out.layers().len());
    for (a, b) in out.layers().iter().zip(back.layers()) {
        assert_eq!(a.quantized, b.quantized);
        for (p, q) in a.params.iter().zip(&b.params) {
            if a.quantized.contains_key(&p.name) {
                assert_eq!(p.value, q.value);
            }
        }
    }
    assert!(matches!(report.layers[0].actions[0], Action::Tucker2 { rank: RankSpec::Fixed(_) }));
}
