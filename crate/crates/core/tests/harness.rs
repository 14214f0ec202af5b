use privcal::harness::{self, ExperimentConfig, MethodKind, WeightSource};
use privcal::Error;

fn small(methods: Vec<MethodKind>, n_trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        methods,
        n_trials,
        n_samples: 2000,
        seed: 7,
        ..ExperimentConfig::default()
    }
}

#[test]
fn split_cp_covers_on_uncorrupted_data() {
    let mut config = small(vec![MethodKind::NaiveCpClean], 20);
    config.target_corruption_mean = 0.0;
    let rows = harness::run_experiment(&config).unwrap();
    assert_eq!(rows.len(), 20);
    let mean = rows.iter().map(|r| r.coverage).sum::<f64>() / 20.0;
    assert!((0.88..=0.92).contains(&mean), "mean coverage {mean}");
}

#[test]
fn pcp_variants_match_per_trial() {
    let rows =
        harness::run_experiment(&small(vec![MethodKind::Pcp, MethodKind::PcpNaive], 6)).unwrap();
    for pair in rows.chunks(2) {
        assert_eq!(pair[0].trial, pair[1].trial);
        assert_eq!(
            (pair[0].method.as_str(), pair[1].method.as_str()),
            ("pcp", "pcp_naive")
        );
        assert_eq!(pair[0].coverage, pair[1].coverage);
        assert_eq!(pair[0].avg_size, pair[1].avg_size);
    }
}

#[test]
fn runs_are_deterministic() {
    let config = small(
        vec![
            MethodKind::NaiveCpAll,
            MethodKind::Wcp,
            MethodKind::TwoStaged,
        ],
        1,
    );
    assert_eq!(
        harness::run_experiment(&config).unwrap(),
        harness::run_experiment(&config).unwrap()
    );
}

#[test]
fn rows_follow_trial_then_method_order() {
    let methods = vec![MethodKind::Pcp, MethodKind::NaiveCpClean, MethodKind::Wcp];
    let rows = harness::run_experiment(&small(methods, 3)).unwrap();
    let keys: Vec<(usize, &str)> = rows.iter().map(|r| (r.trial, r.method.as_str())).collect();
    let mut expected = Vec::new();
    for t in 0..3 {
        expected.extend([
            (t, "pcp"),
            (t, "naive_cp_clean"),
            (t, "wcp_oracle_infeasible"),
        ]);
    }
    assert_eq!(keys, expected);
    assert!(rows
        .iter()
        .all(|r| r.seed == 7 && r.alpha == 0.1 && r.beta == 0.005));
}

#[test]
fn ablation_shares_seeds_across_betas() {
    let config = small(vec![MethodKind::NaiveCpClean, MethodKind::Pcp], 2);
    let single = harness::run_experiment(&config).unwrap();
    let rows = harness::ablate_beta(&config, &[0.005, 0.05]).unwrap();
    assert_eq!(rows.len(), 2 * single.len());
    let (first, second) = rows.split_at(single.len());
    assert_eq!(first, single.as_slice());
    for (a, b) in first.iter().zip(second) {
        assert_eq!(
            (a.trial, &a.method, a.alpha, a.seed),
            (b.trial, &b.method, b.alpha, b.seed)
        );
        assert_eq!(b.beta, 0.05);
        if a.method == "naive_cp_clean" {
            assert_eq!((a.coverage, a.avg_size), (b.coverage, b.avg_size));
        }
    }
}

#[test]
fn ablation_rejects_out_of_range_beta() {
    let config = small(vec![MethodKind::Pcp], 1);
    assert!(matches!(
        harness::ablate_beta(&config, &[0.005, 0.1]),
        Err(Error::BadBeta { .. })
    ));
}

#[test]
fn estimated_weights_and_other_corruptions_run() {
    use privcal::synth::CorruptionMode;
    for (mode, source) in [
        (
            CorruptionMode::DispersiveNoise,
            WeightSource::EstimatedFromZ,
        ),
        (
            CorruptionMode::ContractiveNoise,
            WeightSource::EstimatedFromX,
        ),
        (
            CorruptionMode::MissingFeatures,
            WeightSource::EstimatedFromZ,
        ),
    ] {
        let mut config = small(MethodKind::ALL[..6].to_vec(), 2);
        config.corruption_mode = mode;
        config.weight_source = source;
        let rows = harness::run_experiment(&config).unwrap();
        assert_eq!(rows.len(), 12);
        assert!(
            rows.iter()
                .all(|r| (0.0..=1.0).contains(&r.coverage) && r.avg_size > 0.0),
            "{mode:?}"
        );
    }
}

#[test]
fn scarce_mode_runs_leave_one_out() {
    let mut config = ExperimentConfig::preset("scarce").unwrap();
    config.n_trials = 2;
    config.n_samples = 400;
    config.alpha = 0.1;
    let rows = harness::run_experiment(&config).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.method == "loo_pcp"));

    config.loo_cap = 10;
    assert!(matches!(
        harness::run_experiment(&config),
        Err(Error::CapExceeded { .. })
    ));
}
