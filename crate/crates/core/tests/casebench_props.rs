use fairpfn::baselines::{fit_predict, BaselineKind, BaselineSpec};
use fairpfn::casebench::{
    generate_case, generate_suite, ground_truth_te, load_instance, path_twins, CaseId, CaseStudyConfig, Manifest,
    PathTwin, SuiteConfig,
};
use fairpfn::harness::case_task;
use fairpfn::metrics::tce;
use fairpfn::{Error, ExecMode};
use proptest::prelude::*;

#[test]
fn direct_effect_monte_carlo_is_reproducible() {
    let te: Vec<f64> = (0..3).map(|s| ground_truth_te(CaseId::Direct, 2.0, 0.1, 100_000, s)).collect();
    assert!(te.iter().all(|&t| t > 0.0), "{te:?}");
    for t in &te[1..] {
        assert!((t - te[0]).abs() <= 0.01, "{te:?}");
    }
}

#[test]
fn suite_files_reload_and_refuse_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SuiteConfig {
        count_per_case: 4,
        seed: 9,
        ..SuiteConfig::default()
    };
    let manifest = generate_suite(dir.path(), &cfg, false, ExecMode::Parallel).unwrap();
    assert_eq!(Manifest::read(dir.path()).unwrap(), manifest);
    assert!(manifest.entries.iter().all(|e| e.sigma >= 1e-3 && e.sigma < 1.0));
    for e in &manifest.entries {
        let inst = load_instance(dir.path(), e).unwrap();
        assert_eq!(inst.factual.n(), e.n);
        assert_eq!(inst.config.case, e.case);
    }
    assert!(matches!(generate_suite(dir.path(), &cfg, false, ExecMode::Parallel), Err(Error::Exists(_))));
    let again = generate_suite(dir.path(), &cfg, true, ExecMode::Sequential).unwrap();
    assert_eq!(again.hash(), manifest.hash());
}

#[test]
fn count_and_case_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SuiteConfig {
        count_per_case: 5,
        seed: 0,
        cases: vec![CaseId::Biased],
    };
    let m = generate_suite(dir.path(), &cfg, false, ExecMode::Parallel).unwrap();
    assert_eq!(m.entries.len(), 5);
    assert!(m.entries.iter().all(|e| e.case == CaseId::Biased));
}

#[test]
fn indirect_twin_shifts_mediator_by_weight() {
    let inst = generate_case(&CaseStudyConfig {
        case: CaseId::Indirect,
        w_a: 2.5,
        n: 200,
        sigma: 0.3,
        seed: 3,
    })
    .unwrap();
    let (direct, indirect) = path_twins(&inst).unwrap();
    assert!(matches!(direct, PathTwin::Absent));
    let PathTwin::Twin(tw) = indirect else { panic!("indirect path must exist") };
    for i in 0..inst.factual.n() {
        let delta = tw.features.get(i, 1) - inst.factual.features.get(i, 1);
        let expected = if inst.factual.groups[i] == 0 { 2.5 } else { -2.5 };
        assert!((delta - expected).abs() < 1e-12);
        assert_eq!(tw.features.get(i, 0), inst.factual.features.get(i, 0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn non_descendant_predictors_have_zero_effect(seed in any::<u64>(), w in 0.1f64..10.0, indirect in any::<bool>()) {
        let case = if indirect { CaseId::Indirect } else { CaseId::Direct };
        let inst = generate_case(&CaseStudyConfig { case, w_a: w, n: 150, sigma: 0.5, seed }).unwrap();
        let task = case_task(&inst, seed).unwrap();
        let set = fit_predict(&BaselineSpec::new(BaselineKind::LevelOne), &task, seed).unwrap().unwrap();
        prop_assert_eq!(tce(&set.factual, &set.twin, &set.groups).unwrap(), 0.0);
    }

    #[test]
    fn twins_keep_rows_and_flip_groups(seed in any::<u64>(), case_ix in 0usize..6) {
        let case = CaseId::ALL[case_ix];
        let inst = generate_case(&CaseStudyConfig { case, w_a: 1.5, n: 120, sigma: 0.2, seed }).unwrap();
        prop_assert_eq!(inst.twin.n(), inst.factual.n());
        prop_assert!(inst.factual.groups.iter().zip(&inst.twin.groups).all(|(a, b)| a != b));
        prop_assert_eq!(inst.fair_info.y_fair.len(), inst.factual.n());
    }
}
