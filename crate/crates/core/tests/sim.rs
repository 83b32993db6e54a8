use ate_core::resampling::{InfluenceMode, Method, MultiplierScheme};
use ate_core::rng::stream;
use ate_core::sim::{
    generate_dataset, run_coverage_study, true_ate, true_ate_oracle, ResampleSizes, ScenarioConfig, StudyConfig,
    TruthSettings,
};
use ate_core::{Dataset, TimeGrid};

fn proportions_by(ds: &Dataset, t: f64) -> [f64; 3] {
    let n = ds.n() as f64;
    let count = |c: u32| ds.records().iter().filter(|r| r.time <= t && r.cause == c).count() as f64 / n;
    [count(1), count(2), count(0)]
}

fn big(cfg: &ScenarioConfig, seed: u64) -> Dataset {
    generate_dataset(cfg, 100_000, &mut stream(seed, "sim-test", &[])).unwrap()
}

#[test]
fn covariate_and_treatment_marginals() {
    for (preset, sd, treated) in [
        ("default", 1.0, 0.56),
        ("balanced-treatment", 1.0, 0.5),
        ("low-variance", 0.5, 0.5),
        ("high-variance", 2.0, 0.5),
        ("low-treatment", 1.0, 0.2),
        ("high-treatment", 1.0, 0.85),
    ] {
        let cfg = ScenarioConfig::preset(preset, 0.0).unwrap();
        let ds = generate_dataset(&cfg, 40_000, &mut stream(1, "marginals", &[])).unwrap();
        let n = ds.n() as f64;
        let frac = ds.records().iter().filter(|r| r.treated).count() as f64 / n;
        if !preset.ends_with("variance") {
            assert!((frac - treated).abs() < 0.02, "{preset}: treated {frac}");
        }
        for j in 0..12 {
            let xs: Vec<f64> = ds.records().iter().map(|r| r.covariates[j]).collect();
            let m = xs.iter().sum::<f64>() / n;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
            if j < 6 {
                assert!(m.abs() < 0.05 * sd && (v.sqrt() / sd - 1.0).abs() < 0.03, "{preset} Z{}", j + 1);
            } else {
                assert!(xs.iter().all(|&x| x == 0.0 || x == 1.0));
                assert!((m - 0.5).abs() < 0.02, "{preset} Z{}", j + 1);
            }
        }
    }
}

#[test]
fn event_proportions_follow_the_treatment_effect() {
    let targets = [
        (0.0, [0.50, 0.30, 0.14]),
        (-2.0, [1.0 / 3.0, 0.40, 0.16]),
        (2.0, [2.0 / 3.0, 0.20, 0.10]),
    ];
    for (beta, want) in targets {
        let got = proportions_by(&big(&ScenarioConfig::preset("default", beta).unwrap(), 2), 9.0);
        for k in 0..3 {
            assert!((got[k] - want[k]).abs() <= 0.02, "beta {beta}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn censoring_presets_hit_their_levels() {
    for (preset, level) in [("no-censoring", 0.0), ("light-censoring", 0.15), ("heavy-censoring", 0.30)] {
        let got = proportions_by(&big(&ScenarioConfig::preset(preset, 0.0).unwrap(), 3), 9.0);
        assert!((got[2] - level).abs() <= 0.02, "{preset}: {got:?}");
    }
}

#[test]
fn type2_data_stop_after_the_target_event() {
    let cfg = ScenarioConfig::preset("type2", 2.0).unwrap();
    let ds = generate_dataset(&cfg, 200, &mut stream(4, "type2", &[])).unwrap();
    assert_eq!(ds.num_causes(), 1);
    assert_eq!(ds.events_per_cause(), vec![140]);
}

#[test]
fn truth_has_the_expected_sign() {
    let grid = TimeGrid::new((0..=90).map(|i| i as f64 * 0.1).collect()).unwrap();
    let null = true_ate_oracle(&ScenarioConfig::preset("default", 0.0).unwrap(), &grid, 20_000, 2, 5).unwrap();
    assert!(null.values.iter().all(|v| v.abs() < 0.02));
    for beta in [-2.0, 2.0] {
        let c = true_ate_oracle(&ScenarioConfig::preset("default", beta).unwrap(), &grid, 20_000, 2, 5).unwrap();
        for (t, v) in grid.points().iter().zip(&c.values) {
            if *t > 1.0 {
                assert!(v * beta > 0.0, "beta {beta} t {t}: {v}");
            }
        }
    }
}

#[test]
fn truth_cache_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let settings = TruthSettings { n_large: 2000, reps: 1, step: 0.5, horizon: 5.0, seed: 9 };
    let cfg = ScenarioConfig::default();
    let a = true_ate(&cfg, &settings, Some(dir.path())).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let b = true_ate(&cfg, &settings, Some(dir.path())).unwrap();
    assert_eq!(a, b);
    let renamed = ScenarioConfig { name: "other".into(), ..cfg };
    assert_eq!(true_ate(&renamed, &settings, Some(dir.path())).unwrap(), a);
    assert_eq!(a.values.len(), 11);
}

fn smoke_study() -> StudyConfig {
    StudyConfig {
        sample_sizes: vec![150],
        replications: 3,
        methods: vec![Method::Efron, Method::Influence, Method::Wild(MultiplierScheme::WeirdBinomial)],
        report_times: vec![3.0, 5.0],
        band_interval: [1.0, 7.0],
        resamples: ResampleSizes { ebs: 10, influence: 50, wild: 50 },
        master_seed: 42,
        influence_mode: InfluenceMode::ClosedForm,
        record_timing: false,
        ..StudyConfig::default()
    }
}

#[test]
fn coverage_study_is_reproducible_across_thread_counts() {
    let truth = true_ate(
        &ScenarioConfig::default(),
        &TruthSettings { n_large: 5000, reps: 1, ..TruthSettings::default() },
        None,
    )
    .unwrap();
    let study = smoke_study();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_coverage_study(&study, &truth).unwrap())
    };
    let a = run(1);
    let b = run(3);
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), 3 * 3);
    assert!(a.rows.iter().all(|r| r.replications + a.failures.len() == 3 && r.elapsed_ms == 0.0));
    let labels: Vec<&str> = a.rows.iter().map(|r| r.method.label()).collect();
    assert_eq!(labels, ["ebs", "ebs", "ebs", "if", "if", "if", "wbs-weird", "wbs-weird", "wbs-weird"]);
    assert_eq!(a.rows[2].time, None);
    for r in &a.rows {
        assert!((0.0..=1.0).contains(&r.coverage) && r.mean_width > 0.0);
    }
}
