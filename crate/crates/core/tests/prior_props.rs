use fairpfn::prior::{counterfactual_replay, generate_pair, sample_pair, sample_scm, PriorRanges};
use fairpfn::rng::stream_seed;
use proptest::prelude::*;

#[test]
fn feature_nodes_never_in_first_hidden_layer() {
    let ranges = PriorRanges::default();
    for k in 0..1000 {
        let spec = sample_scm(stream_seed(1, k), &ranges).unwrap();
        let mut seen = std::collections::HashSet::new();
        for f in &spec.feature_nodes {
            assert!(f.layer >= 2, "seed {k}: feature in layer {}", f.layer);
            assert!(seen.insert(*f), "seed {k}: duplicate feature node");
        }
        assert!(spec.masks.iter().flatten().all(|&m| m <= 1));
        assert!(spec.noise_scales.iter().flatten().all(|&s| s >= 0.0));
    }
}

#[test]
fn keep_probability_is_log_uniform() {
    let ranges = PriorRanges::default();
    let (lo, hi) = ranges.keep_prob;
    let mut draws: Vec<f64> = (0..10_000).map(|k| sample_scm(stream_seed(2, k), &ranges).unwrap().keep_prob).collect();
    draws.sort_by(f64::total_cmp);
    let n = draws.len() as f64;
    let ks = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (x / lo).ln() / (hi / lo).ln();
            (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(ks <= 0.02, "KS statistic {ks}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn fair_labels_independent_of_group() {
    let ranges = PriorRanges::default();
    let mut corrs = Vec::new();
    let mut k = 0;
    while corrs.len() < 100 {
        k += 1;
        let spec = sample_scm(stream_seed(3, k), &ranges).unwrap();
        let Ok(pair) = generate_pair(&spec, 1000, stream_seed(4, k)) else { continue };
        let a: Vec<f64> = pair.fair.groups.iter().map(|&g| f64::from(g)).collect();
        let y: Vec<f64> = pair.fair.labels.iter().map(|&v| f64::from(v)).collect();
        let c = pearson(&a, &y);
        if c.is_finite() {
            corrs.push(c.abs());
        }
    }
    let mean = corrs.iter().sum::<f64>() / corrs.len() as f64;
    assert!(mean < 3.0 / 1000f64.sqrt(), "mean |corr| {mean}");
}

#[test]
fn pairs_are_reproducible_byte_for_byte() {
    let ranges = PriorRanges::default();
    let (s1, p1) = sample_pair(42, &ranges).unwrap();
    let (s2, p2) = sample_pair(42, &ranges).unwrap();
    assert_eq!(s1, s2);
    assert_eq!(p1.biased.csv_string(), p2.biased.csv_string());
    assert_eq!(p1.fair.csv_string(), p2.fair.csv_string());
    assert_eq!(p1.noise.csv_string(), p2.noise.csv_string());
}

#[test]
fn depth_below_two_rejected() {
    let ranges = PriorRanges {
        hidden_depth: (1, 1),
        ..PriorRanges::default()
    };
    assert!(sample_scm(0, &ranges).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fair_data_survives_replay(seed in any::<u64>()) {
        let ranges = PriorRanges { n_samples: (50, 200), ..PriorRanges::default() };
        let (spec, pair) = sample_pair(seed, &ranges).unwrap();
        let twin = counterfactual_replay(&spec, &pair.fair, &pair.noise).unwrap();
        prop_assert_eq!(twin.features.data(), pair.fair.features.data());
        prop_assert_eq!(&twin.labels, &pair.fair.labels);
    }

    #[test]
    fn replay_twice_restores_biased(seed in any::<u64>()) {
        let ranges = PriorRanges { n_samples: (50, 200), ..PriorRanges::default() };
        let (spec, pair) = sample_pair(seed, &ranges).unwrap();
        let once = counterfactual_replay(&spec, &pair.biased, &pair.noise).unwrap();
        let twice = counterfactual_replay(&spec, &once, &pair.noise).unwrap();
        prop_assert_eq!(twice.features.data(), pair.biased.features.data());
        prop_assert_eq!(&twice.labels, &pair.biased.labels);
        prop_assert_eq!(&twice.groups, &pair.biased.groups);
    }
}
