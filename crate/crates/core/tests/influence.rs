use ate_core::cif::{CompetingRisksFit, TimeGrid};
use ate_core::cox::CauseModel;
use ate_core::resampling::{influence_matrix, InfluenceMode};
use ate_core::rng::stream;
use ate_core::sim::{generate_dataset, ScenarioConfig};
use ate_core::{Dataset, SolverOptions};

fn dataset(seed: u64, n: usize) -> Dataset {
    generate_dataset(&ScenarioConfig::default(), n, &mut stream(seed, "influence-test", &[])).unwrap()
}

fn column_sd(rows: &[Vec<f64>], t: usize) -> f64 {
    let n = rows.len() as f64;
    let m = rows.iter().map(|r| r[t]).sum::<f64>() / n;
    (rows.iter().map(|r| (r[t] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn gateaux_is_centred_and_closed_form_agrees() {
    let opts = SolverOptions::default();
    for seed in [1, 2] {
        let ds = dataset(seed, 200);
        let fits = CompetingRisksFit::fit_default(&ds, &opts).unwrap();
        let grid = TimeGrid::event_grid(&ds, &[1.0, 3.0, 5.0, 7.0, 9.0], Some(9.0)).unwrap();
        let g = influence_matrix(&fits, &ds, &grid, InfluenceMode::GateauxNumeric, &opts).unwrap();
        let c = influence_matrix(&fits, &ds, &grid, InfluenceMode::ClosedForm, &opts).unwrap();
        for t in 0..grid.len() {
            if g.variance[t] <= 1e-12 {
                continue;
            }
            let sum: f64 = g.values.iter().map(|r| r[t]).sum();
            assert!(sum.abs() <= 1e-6 * column_sd(&g.values, t), "t = {}: sum {sum}", grid.points()[t]);
            let rel = (g.variance[t] - c.variance[t]).abs() / g.variance[t];
            assert!(rel <= 1e-3, "t = {}: relative gap {rel}", grid.points()[t]);
        }
    }
}

#[test]
fn null_treatment_functional_has_zero_influence() {
    let opts = SolverOptions::default();
    let ds = dataset(3, 150);
    let models: Vec<CauseModel> = (1..=2)
        .map(|k| CauseModel::full(k, ds.num_covariates()).with_fixed_treatment(0.0))
        .collect();
    let fits = CompetingRisksFit::fit(&ds, &models, &ds.weights(), &opts).unwrap();
    let grid = TimeGrid::new(vec![2.0, 5.0, 8.0]).unwrap();
    for mode in [InfluenceMode::GateauxNumeric, InfluenceMode::ClosedForm] {
        let m = influence_matrix(&fits, &ds, &grid, mode, &opts).unwrap();
        assert!(m.values.iter().flatten().all(|v| v.abs() < 1e-9), "{mode:?}");
        assert!(m.variance.iter().all(|v| *v < 1e-15));
    }
}

#[test]
fn variance_is_recomputable_from_values() {
    let opts = SolverOptions::default();
    let ds = dataset(4, 100);
    let fits = CompetingRisksFit::fit_default(&ds, &opts).unwrap();
    let grid = TimeGrid::new(vec![3.0, 6.0]).unwrap();
    let m = influence_matrix(&fits, &ds, &grid, InfluenceMode::ClosedForm, &opts).unwrap();
    for t in 0..2 {
        let v = m.values.iter().map(|r| r[t] * r[t]).sum::<f64>() / ds.n() as f64;
        assert!((v - m.variance[t]).abs() <= 1e-12 * v.max(1.0));
    }
}
