use pointseq::autograd::{Graph, Tensor};
use pointseq::geometry::{normalize_unit_ball, PointCloud, ScaleSpec};
use pointseq::model::{
    aggregate_global, area_feature, area_features, classify_forward, decode_region,
    encode_sequence, forward, interpolate_features, predict, segment_forward, Aggregation,
    ModelConfig, ModelParams, PreparedCloud, Task,
};
use proptest::prelude::*;
use rand::rngs::mock::StepRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    let pts = (0..n)
        .map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
        .collect();
    normalize_unit_ball(&PointCloud::new(pts).unwrap())
}

fn small(task: Task) -> ModelConfig {
    ModelConfig {
        centroids: 8,
        scales: ScaleSpec::new(vec![2, 4, 8]).unwrap(),
        ..ModelConfig::tiny(task)
    }
}

fn init(config: &ModelConfig, seed: u64) -> ModelParams {
    let mut p = ModelParams::init(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    // nonzero biases and running statistics make the checks less degenerate
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    for t in p.store.iter_mut() {
        if t.name.ends_with("running_var") {
            continue;
        }
        for v in t.value.data_mut() {
            *v += rng.gen_range(-0.1..0.1);
        }
    }
    p
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1e-12f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn classification_is_permutation_invariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small(Task::Classification);
        let params = init(&cfg, seed);
        let cloud = random_cloud(&mut rng, 40);
        let mut order: Vec<usize> = (0..40).collect();
        order.shuffle(&mut rng);
        let a = classify_forward(&params, &cloud).unwrap();
        let b = classify_forward(&params, &cloud.permuted(&order)).unwrap();
        prop_assert!(rel_diff(&a, &b) <= 1e-6);
    }

    #[test]
    fn segmentation_is_permutation_equivariant(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small(Task::Segmentation);
        let params = init(&cfg, seed);
        let cloud = random_cloud(&mut rng, 30);
        let mut order: Vec<usize> = (0..30).collect();
        order.shuffle(&mut rng);
        let a = segment_forward(&params, &cloud).unwrap();
        let b = segment_forward(&params, &cloud.permuted(&order)).unwrap();
        for (new, &old) in order.iter().enumerate() {
            prop_assert!(rel_diff(a.row(old), b.row(new)) <= 1e-6);
        }
    }

    #[test]
    fn area_features_are_translation_invariant(
        seed in 0u64..10_000,
        shift in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small(Task::Classification);
        let params = init(&cfg, seed);
        let cloud = random_cloud(&mut rng, 40);
        let pooled = |c: &PointCloud| {
            let prep = PreparedCloud::new(c, &cfg).unwrap();
            let mut g = Graph::new(false);
            let (pooled, _) = area_features(&mut g, &params.store, &cfg, &[&prep], 0.0).unwrap();
            g.value(pooled).clone()
        };
        let a = pooled(&cloud);
        let b = pooled(&cloud.translated(shift));
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn global_feature_ignores_region_order_and_duplicates(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small(Task::Classification);
        let params = init(&cfg, seed);
        let m = 6;
        let regions: Vec<f64> = (0..m * cfg.region_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cents: Vec<f64> = (0..m * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let global = |order: &[usize]| {
            let mut g = Graph::new(false);
            let d = cfg.region_dim();
            let r: Vec<f64> = order.iter().flat_map(|&i| regions[i * d..(i + 1) * d].to_vec()).collect();
            let c: Vec<f64> = order.iter().flat_map(|&i| cents[i * 3..i * 3 + 3].to_vec()).collect();
            let r = g.constant(Tensor::from_vec(order.len(), d, r).unwrap());
            let c = g.constant(Tensor::from_vec(order.len(), 3, c).unwrap());
            let out = aggregate_global(&mut g, &params.store, &cfg, r, c, order.len(), 0.0).unwrap();
            g.value(out).clone()
        };
        let base = global(&[0, 1, 2, 3, 4, 5]);
        prop_assert_eq!(&base, &global(&[5, 3, 1, 0, 2, 4]));
        prop_assert_eq!(&base, &global(&[0, 1, 2, 3, 4, 5, 2, 2, 0]));
    }
}

#[test]
fn single_point_area_and_duplicates() {
    let cfg = small(Task::Classification);
    let params = init(&cfg, 3);
    let mut g = Graph::new(false);
    let (one, _) = area_feature(&mut g, &params.store, &cfg, &[[0.1, 0.2, 0.3]], [0.0; 3], 0.0).unwrap();
    // a one-point area pools to that point's MLP output
    let (mlp_row, _) = area_feature(
        &mut g,
        &params.store,
        &cfg,
        &[[0.1, 0.2, 0.3], [0.1, 0.2, 0.3], [0.1, 0.2, 0.3]],
        [0.0; 3],
        0.0,
    )
    .unwrap();
    assert_eq!(g.value(one), g.value(mlp_row));
    let (two, _) = area_feature(&mut g, &params.store, &cfg, &[[0.4, 0.0, 0.1], [0.1, 0.2, 0.3]], [0.0; 3], 0.0).unwrap();
    let (swapped, _) =
        area_feature(&mut g, &params.store, &cfg, &[[0.1, 0.2, 0.3], [0.4, 0.0, 0.1]], [0.0; 3], 0.0).unwrap();
    assert_eq!(g.value(two), g.value(swapped));
    assert!(area_feature(&mut g, &params.store, &cfg, &[], [0.0; 3], 0.0).is_err());
}

#[test]
fn all_points_as_centroids() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cloud = random_cloud(&mut rng, 8);
    let cfg = small(Task::Segmentation);
    let prep = PreparedCloud::new(&cloud, &cfg).unwrap();
    let mut selected = prep.centroids.indices.clone();
    selected.sort_unstable();
    assert_eq!(selected, (0..8).collect::<Vec<_>>());
    let params = init(&cfg, 4);
    let out = predict(&params, &prep).unwrap();
    assert_eq!(out.shape(), (8, cfg.parts));
    // every point coincides with a centroid, so interpolation is a pass-through
    let f = Tensor::from_vec(8, 1, (0..8).map(|i| i as f64).collect()).unwrap();
    let up = interpolate_features(cloud.points(), &prep.centroids.coordinates, &f, 3).unwrap();
    for (i, &c) in prep.centroids.indices.iter().enumerate() {
        assert_eq!(up.data()[c], i as f64);
    }
}

#[test]
fn too_few_points_for_the_configuration() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = small(Task::Classification);
    assert!(PreparedCloud::new(&random_cloud(&mut rng, 7), &cfg).is_err());
}

#[test]
fn default_classifier_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cfg = ModelConfig::default();
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let logits = classify_forward(&params, &random_cloud(&mut rng, 1024)).unwrap();
    assert_eq!(logits.len(), 40);
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn default_segmenter_shape() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cfg = ModelConfig {
        task: Task::Segmentation,
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg, &mut rng).unwrap();
    let logits = segment_forward(&params, &random_cloud(&mut rng, 2048)).unwrap();
    assert_eq!(logits.shape(), (2048, 50));
}

#[test]
fn variants_share_output_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cloud = random_cloud(&mut rng, 32);
    for agg in Aggregation::ALL {
        for task in [Task::Classification, Task::Segmentation] {
            let cfg = ModelConfig {
                aggregation: agg,
                ..small(task)
            };
            let params = init(&cfg, 8);
            let prep = PreparedCloud::new(&cloud, &cfg).unwrap();
            let mut g = Graph::new(true);
            let out = forward(&mut g, &params, &[&prep, &prep], 0.1, &mut StepRng::new(1, 7)).unwrap();
            assert_eq!(g.shape(out.regions), (16, cfg.region_dim()), "{agg:?}");
            let rows = if task == Task::Classification { 2 } else { 64 };
            assert_eq!(g.shape(out.logits), (rows, cfg.outputs()));
            assert_eq!(out.aggregated.decoded.is_some(), agg == Aggregation::AttentionEd);
            assert_eq!(out.aggregated.trace.is_some(), agg.uses_encoder());
        }
    }
}

#[test]
fn attention_weights_are_a_distribution() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..50 {
        let cfg = small(Task::Classification);
        let params = init(&cfg, trial);
        let mut g = Graph::new(false);
        let steps: Vec<_> = (0..cfg.num_scales())
            .map(|_| {
                let v = (0..5 * cfg.feature_dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                g.constant(Tensor::from_vec(5, cfg.feature_dim, v).unwrap())
            })
            .collect();
        let trace = encode_sequence(&mut g, &params.store, &steps).unwrap();
        let dec = decode_region(&mut g, &params.store, &trace).unwrap();
        let a = g.value(dec.attention);
        assert_eq!(a.shape(), (5, cfg.num_scales()));
        for r in 0..5 {
            let s: f64 = a.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(a.row(r).iter().all(|&w| (0.0..=1.0).contains(&w)));
        }
    }
}
