mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use triplet_icp::evaluation::*;
use triplet_icp::icp::InclusionRule;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn silhouette_matches_direct_computation(
        n in 4usize..200,
        dim in 1usize..5,
        classes in 2usize..5,
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut r = rng(seed);
        let x = Array2::from_shape_fn((n, dim), |_| r.random_range(-2.0..2.0));
        let mut labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let got = silhouette(x.view(), &labels).unwrap();
        prop_assert!((got - brute_silhouette(x.view(), &labels)).abs() < 1e-12);
    }
}

#[test]
fn full_evaluation_on_blobs() {
    let f = blob_fixture(6);
    let opts = EvalOptions {
        epsilon_grid: vec![0.01, 0.05],
        ..EvalOptions::default()
    };
    let report = evaluate("triplet", &f.model, &f.index, &f.data, &opts).unwrap();
    assert_eq!(report.ncms.len(), 3);
    for n in &report.ncms {
        assert_eq!(n.per_epsilon.len(), 2);
        assert_eq!(n.calibration_size, f.data.calibration.len());
        assert!(n.estimated_epsilon.epsilon > n.estimated_epsilon.max_second_p_value);
        assert!(n.resources.mean_latency_us > 0.0);
        for (_, c) in &n.curves {
            assert!(c.points.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }
    assert!(report.accuracy_softmax_test.is_none());
    let json = serde_json::to_string(&report).unwrap();
    let back = EvalReport::from_json(&json).unwrap();
    assert_eq!(back.to_key_value(), report.to_key_value());
    let table = render_comparison(&[report]);
    assert!(table.contains("centroid"));
}

#[test]
fn estimated_epsilon_removes_all_multiples_on_validation() {
    let f = blob_fixture(7);
    for ncm in triplet_icp::ncm::NcmKind::ALL_DEFAULT {
        let cal = triplet_icp::icp::calibrate(&f.model, &f.index, ncm, &f.data.calibration).unwrap();
        let m = triplet_icp::icp::Monitor::new(&f.model, &f.index, &cal, InclusionRule::AtLeast);
        let rows = p_value_rows(&m, &f.data.calibration).unwrap();
        let est = estimate_epsilon(&rows, InclusionRule::AtLeast).unwrap();
        assert_eq!(
            epsilon_row(&rows, est.epsilon, InclusionRule::AtLeast).multiples_rate,
            0.0
        );
        if est.max_second_p_value > 0.0 {
            let below = est.max_second_p_value;
            assert!(epsilon_row(&rows, below, InclusionRule::AtLeast).multiples_rate > 0.0);
        }
    }
}

#[test]
fn memory_follows_storage_regime() {
    let f = blob_fixture(8);
    let knn = f.index.memory_bytes(triplet_icp::ncm::NcmKind::Knn { k: 15 }).unwrap();
    let one = f.index.memory_bytes(triplet_icp::ncm::NcmKind::OneNn).unwrap();
    let cen = f
        .index
        .memory_bytes(triplet_icp::ncm::NcmKind::NearestCentroid)
        .unwrap();
    assert!(cen < knn && knn < one, "{cen} {knn} {one}");
    assert_eq!(cen, 4 * 8 * 8);
}
