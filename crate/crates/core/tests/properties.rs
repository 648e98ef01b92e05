use geoproto_core::aggregate::{aggregate, FusionGranularity, FusionWeights, PoolMode, PoolingPlan};
use geoproto_core::encoder::{ConceptSpec, ConceptTensor};
use geoproto_core::grid::{split_indices, DistHint, FeatureKind, FeatureMeta};
use geoproto_core::model::similarity;
use geoproto_core::stats::{kolmogorov_sf, ks_statistic, poisson_lrt_rate};
use proptest::prelude::*;

fn spec() -> ConceptSpec {
    let feats = [
        FeatureMeta::new("a", FeatureKind::Spatiotemporal, DistHint::Count),
        FeatureMeta::new("b", FeatureKind::Spatial, DistHint::Continuous),
        FeatureMeta::new("t", FeatureKind::Temporal, DistHint::Continuous),
    ];
    ConceptSpec::from_features(&feats, vec![3, 5], 0.05)
}

proptest! {
    #[test]
    fn fusion_weights_stay_on_the_simplex(logits in prop::collection::vec(-30.0f64..30.0, 326)) {
        let mut w = FusionWeights::uniform(&spec(), 9, FusionGranularity::PerKind);
        prop_assume!(w.logits.len() == logits.len());
        w.logits.copy_from_slice(&logits);
        let weights = w.weights();
        for chunk in weights.chunks(2) {
            prop_assert!((chunk.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(chunk.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn pooled_values_are_unit_interval(bits in prop::collection::vec(any::<bool>(), 9 * 9 * 2 * 2 * 4 + 8), max in any::<bool>()) {
        let s = spec();
        let mut c = ConceptTensor::zeros(9, 2, 1, 2);
        for (dst, &b) in c.spatial.iter_mut().chain(c.temporal.iter_mut()).zip(&bits) {
            *dst = b as u8;
        }
        let mode = if max { PoolMode::Max } else { PoolMode::Mean };
        let plan = PoolingPlan::default_for(9, mode).unwrap();
        let w = FusionWeights::uniform(&s, 9, FusionGranularity::PerKind);
        let (v, _) = aggregate(&c, &w, &plan).unwrap();
        prop_assert!(v.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn poisson_outcome_is_well_formed(sum in 0u32..200, cells in 1usize..30, rate in 0.01f64..20.0) {
        let out = poisson_lrt_rate(sum as f64, cells, rate, 0.05).unwrap();
        prop_assert!((0.0..=1.0).contains(&out.p_value));
        prop_assert!(out.statistic >= 0.0);
        prop_assert_eq!(out.significant, out.p_value < 0.05);
    }

    #[test]
    fn ks_statistic_is_a_probability_gap(
        window in prop::collection::vec(-5.0f64..5.0, 1..40),
        mut base in prop::collection::vec(-5.0f64..5.0, 1..80),
    ) {
        base.sort_by(f64::total_cmp);
        let d = ks_statistic(&window, &base);
        prop_assert!((0.0..=1.0).contains(&d));
        let p = kolmogorov_sf(d, window.len());
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn similarity_is_bounded(a in prop::collection::vec(-3.0f64..3.0, 16), b in prop::collection::vec(-3.0f64..3.0, 16)) {
        let s = similarity(&a, &b, 1e-4).unwrap();
        prop_assert!(s > 0.0 && s <= 1e4);
        prop_assert_eq!(s, similarity(&b, &a, 1e-4).unwrap());
    }

    #[test]
    fn splits_partition(n in 3usize..500, seed in any::<u64>()) {
        let s = split_indices(n, 0.7, 0.15, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }
}
