use ate_core::cif::{g_formula_ate, AteCurve, CompetingRisksFit, TimeGrid};
use ate_core::resampling::{
    efron_ensemble, empirical_quantile, gen_multipliers, influence_matrix, pointwise_ci, simultaneous_band,
    standardized_draws, wild_ensemble, wild_ensemble_from, InfluenceMatrix, InfluenceMode, Method,
    MultiplierSampler, MultiplierScheme, RedrawPolicy, RegionInputs, ResampleEnsemble, WildContributions,
};
use ate_core::rng::stream;
use ate_core::sim::{generate_dataset, ScenarioConfig};
use ate_core::{Dataset, SolverOptions};

fn dataset(seed: u64, n: usize) -> Dataset {
    let cfg = ScenarioConfig::preset("default", 2.0).unwrap();
    generate_dataset(&cfg, n, &mut stream(seed, "resampling-test", &[])).unwrap()
}

struct Setup {
    ds: Dataset,
    fits: CompetingRisksFit,
    grid: TimeGrid,
    est: AteCurve,
}

fn setup(seed: u64, n: usize) -> Setup {
    let ds = dataset(seed, n);
    let fits = CompetingRisksFit::fit_default(&ds, &SolverOptions::default()).unwrap();
    let grid = TimeGrid::event_grid(&ds, &[1.0, 3.0, 5.0, 7.0], Some(8.0)).unwrap();
    let est = g_formula_ate(&fits, &ds, &grid).unwrap();
    Setup { ds, fits, grid, est }
}

#[test]
fn efron_is_seed_deterministic_and_rejects_small_b() {
    let s = setup(1, 200);
    let policy = RedrawPolicy::default();
    let a = efron_ensemble(&s.fits, &s.ds, &s.grid, 6, 11, &policy).unwrap();
    let b = efron_ensemble(&s.fits, &s.ds, &s.grid, 6, 11, &policy).unwrap();
    assert_eq!(a, b);
    let c = efron_ensemble(&s.fits, &s.ds, &s.grid, 6, 12, &policy).unwrap();
    assert_ne!(a.draws, c.draws);
    assert!(efron_ensemble(&s.fits, &s.ds, &s.grid, 0, 11, &policy).is_err());
    assert!(efron_ensemble(&s.fits, &s.ds, &s.grid, 1, 11, &policy).is_err());
}

#[test]
fn ensembles_do_not_depend_on_thread_count() {
    let s = setup(2, 200);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let e = efron_ensemble(&s.fits, &s.ds, &s.grid, 5, 3, &RedrawPolicy::default()).unwrap();
            let w = wild_ensemble(&s.fits, &s.ds, &s.grid, 50, MultiplierScheme::WeirdBinomial, 3).unwrap();
            let m = influence_matrix(&s.fits, &s.ds, &s.grid, InfluenceMode::ClosedForm, &SolverOptions::default())
                .unwrap();
            let band = simultaneous_band(
                RegionInputs::Influence { matrix: &m, draws: 40, seed: 3 },
                &s.est,
                0.05,
                1.0,
                7.0,
            )
            .unwrap();
            (e, w, band)
        })
    };
    let one = run(1);
    let three = run(3);
    assert_eq!(one.0, three.0);
    assert_eq!(one.1, three.1);
    assert_eq!(one.2, three.2);
}

#[test]
fn zero_multipliers_give_zero_draws() {
    let s = setup(3, 200);
    let c = WildContributions::new(&s.fits, &s.ds, &s.grid).unwrap();
    let d = c.draw(&vec![0.0; s.ds.n()]).unwrap();
    assert!(d.iter().all(|&v| v == 0.0));
    assert!(c.draw(&[1.0]).is_err());
}

#[test]
fn wild_draws_are_linear_in_the_multipliers() {
    let s = setup(4, 200);
    let c = WildContributions::new(&s.fits, &s.ds, &s.grid).unwrap();
    let n = s.ds.n();
    let sampler = MultiplierSampler::new(MultiplierScheme::StandardNormal, &s.ds).unwrap();
    let g1 = sampler.sample(&mut stream(5, "lin", &[1]));
    let g2 = sampler.sample(&mut stream(5, "lin", &[2]));
    let d1 = c.draw(&g1).unwrap();
    let d2 = c.draw(&g2).unwrap();
    let doubled = c.draw(&g1.iter().map(|g| 2.0 * g).collect::<Vec<_>>()).unwrap();
    for (a, b) in doubled.iter().zip(&d1) {
        assert_eq!(a.to_bits(), (2.0 * b).to_bits());
    }
    let sum: Vec<f64> = (0..n).map(|i| g1[i] + g2[i]).collect();
    let ds = c.draw(&sum).unwrap();
    for ((s12, a), b) in ds.iter().zip(&d1).zip(&d2) {
        let scale = a.abs().max(b.abs()).max(1e-300);
        assert!((s12 - (a + b)).abs() <= 1e-12 * scale.max(1.0), "{s12} vs {}", a + b);
    }
}

#[test]
fn wild_ensembles_are_reproducible_and_scheme_specific() {
    let s = setup(5, 200);
    let c = WildContributions::new(&s.fits, &s.ds, &s.grid).unwrap();
    let a = wild_ensemble_from(&c, &s.ds, 30, MultiplierScheme::CenteredPoisson, 9).unwrap();
    let b = wild_ensemble(&s.fits, &s.ds, &s.grid, 30, MultiplierScheme::CenteredPoisson, 9).unwrap();
    assert_eq!(a, b);
    let n = wild_ensemble_from(&c, &s.ds, 30, MultiplierScheme::StandardNormal, 9).unwrap();
    assert_ne!(a.draws, n.draws);
    assert_eq!(n.method, Method::Wild(MultiplierScheme::StandardNormal));
    assert!(wild_ensemble_from(&c, &s.ds, 1, MultiplierScheme::StandardNormal, 9).is_err());
}

#[test]
fn influence_interval_is_degenerate_at_zero_variance() {
    let grid = TimeGrid::new(vec![1.0, 2.0]).unwrap();
    let m = InfluenceMatrix::new(grid.clone(), vec![vec![0.0, 1.0], vec![0.0, -1.0]], &[1.0, 1.0]).unwrap();
    let est = AteCurve { grid, values: vec![0.1, 0.2], n_subjects: 2, clamped: false };
    let r = pointwise_ci(RegionInputs::Influence { matrix: &m, draws: 10, seed: 1 }, &est, 0.05, &[1.0, 2.0]).unwrap();
    assert_eq!((r.lower[0], r.upper[0]), (0.1, 0.1));
    assert!(r.degenerate[0] && !r.degenerate[1]);
    assert_eq!(r.warnings.len(), 1);
    let h = 1.959963984540054 * (1.0f64 / 2.0).sqrt();
    assert!((r.upper[1] - 0.2 - h).abs() < 1e-12);
    assert!(pointwise_ci(RegionInputs::Influence { matrix: &m, draws: 10, seed: 1 }, &est, 0.05, &[1.5]).is_err());
    assert!(pointwise_ci(RegionInputs::Influence { matrix: &m, draws: 10, seed: 1 }, &est, 1.0, &[1.0]).is_err());
}

#[test]
fn constant_bootstrap_ensemble_gives_a_point_interval() {
    let grid = TimeGrid::new(vec![1.0]).unwrap();
    let e = ResampleEnsemble::from_draws(Method::Efron, grid.clone(), vec![vec![0.3]; 50], 40).unwrap();
    let est = AteCurve { grid, values: vec![0.3], n_subjects: 40, clamped: false };
    let r = pointwise_ci(RegionInputs::Efron(&e), &est, 0.1, &[1.0]).unwrap();
    assert_eq!((r.lower[0], r.upper[0]), (0.3, 0.3));
}

#[test]
fn wild_interval_is_the_abs_quantile_over_root_n() {
    let s = setup(6, 200);
    let e = wild_ensemble(&s.fits, &s.ds, &s.grid, 200, MultiplierScheme::StandardNormal, 2).unwrap();
    let r = pointwise_ci(RegionInputs::Wild(&e), &s.est, 0.05, &[5.0]).unwrap();
    let j = s.grid.index_of(5.0).unwrap();
    let abs: Vec<f64> = e.draws.iter().map(|d| d[j].abs()).collect();
    let q = empirical_quantile(&abs, 0.95).unwrap();
    let h = q / (s.ds.n() as f64).sqrt();
    assert_eq!(r.lower[0], s.est.values[j] - h);
    assert_eq!(r.upper[0], s.est.values[j] + h);
    let covered = abs.iter().filter(|&&a| a <= q).count();
    assert!(covered >= 190);
}

#[test]
fn band_quantile_dominates_the_pointwise_quantile() {
    for seed in 0..4u64 {
        let s = setup(20 + seed, 200);
        let w = wild_ensemble(&s.fits, &s.ds, &s.grid, 100, MultiplierScheme::StandardNormal, seed).unwrap();
        let e = efron_ensemble(&s.fits, &s.ds, &s.grid, 20, seed, &RedrawPolicy::default()).unwrap();
        let m = influence_matrix(&s.fits, &s.ds, &s.grid, InfluenceMode::ClosedForm, &SolverOptions::default()).unwrap();
        let inputs = [
            RegionInputs::Wild(&w),
            RegionInputs::Efron(&e),
            RegionInputs::Influence { matrix: &m, draws: 100, seed },
        ];
        for inp in inputs {
            let std = standardized_draws(inp, 0.5, 7.5).unwrap();
            let band_q = empirical_quantile(&std.suprema(), 0.95).unwrap();
            for j in 0..std.included.len() {
                let point_q = empirical_quantile(&std.column(j), 0.95).unwrap();
                assert!(band_q >= point_q, "{:?} j={j}", inp.method());
            }
            let band = simultaneous_band(inp, &s.est, 0.05, 0.5, 7.5).unwrap();
            let narrower = simultaneous_band(inp, &s.est, 0.2, 0.5, 7.5).unwrap();
            assert_eq!(band.grid, narrower.grid);
            for i in 0..band.lower.len() {
                assert!(band.lower[i] <= narrower.lower[i] && narrower.upper[i] <= band.upper[i]);
            }
        }
    }
}

#[test]
fn band_edge_cases() {
    let grid = TimeGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
    let est = AteCurve { grid: grid.clone(), values: vec![0.0, 0.1, 0.2], n_subjects: 4, clamped: false };
    let m = InfluenceMatrix::new(
        grid.clone(),
        vec![vec![0.0, 1.0, 2.0], vec![0.0, -1.0, -2.0], vec![0.0, 1.0, 0.0], vec![0.0, -1.0, 0.0]],
        &[1.0; 4],
    )
    .unwrap();
    let single = simultaneous_band(RegionInputs::Influence { matrix: &m, draws: 1, seed: 0 }, &est, 0.05, 0.0, 3.0).unwrap();
    assert!(single.warnings.iter().any(|w| w.contains("single draw")));
    assert!(single.warnings.iter().any(|w| w.contains("excluded")));
    assert_eq!(single.grid.points(), &[2.0, 3.0]);
    assert!(simultaneous_band(RegionInputs::Influence { matrix: &m, draws: 10, seed: 0 }, &est, 0.05, 0.5, 1.5).is_err());
    assert!(simultaneous_band(RegionInputs::Influence { matrix: &m, draws: 0, seed: 0 }, &est, 0.05, 0.0, 3.0).is_err());
    assert!(simultaneous_band(RegionInputs::Influence { matrix: &m, draws: 10, seed: 0 }, &est, 0.05, 2.0, 1.0).is_err());
}

#[test]
fn multiplier_moments() {
    let s = dataset(7, 100);
    let y = 5usize;
    let draws = 100_000;
    for scheme in MultiplierScheme::ALL {
        let sampler = MultiplierSampler::with_risk_sizes(scheme, &vec![y; draws]).unwrap();
        let g = sampler.sample(&mut stream(1, "moments", &[scheme as u64]));
        let n = g.len() as f64;
        let mean = g.iter().sum::<f64>() / n;
        let var = g.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let fourth = g.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        let target_var = match scheme {
            MultiplierScheme::WeirdBinomial => 1.0 - 1.0 / y as f64,
            _ => 1.0,
        };
        let se_mean = (target_var / n).sqrt();
        let se_var = ((fourth - target_var * target_var) / n).sqrt();
        assert!(mean.abs() <= 4.0 * se_mean, "{scheme:?} mean {mean}");
        assert!((var - target_var).abs() <= 4.0 * se_var, "{scheme:?} var {var}");
    }
    let degenerate = MultiplierSampler::with_risk_sizes(MultiplierScheme::WeirdBinomial, &[1, 1, 1]).unwrap();
    assert_eq!(degenerate.sample(&mut stream(0, "x", &[])), vec![0.0; 3]);
    assert!(MultiplierSampler::with_risk_sizes(MultiplierScheme::WeirdBinomial, &[0]).is_err());
    let a = gen_multipliers(MultiplierScheme::StandardNormal, &s, &mut stream(3, "g", &[])).unwrap();
    assert_eq!(a.len(), s.n());
}
