mod common;

use ate_core::cif::{cumulative_incidence, g_formula_ate, CompetingRisksFit, TimeGrid};
use ate_core::cox::{CauseModel, SolverOptions};
use ate_core::rng::stream;
use common::oracles;
use rand::Rng;

fn treatment_only(k: u32) -> CauseModel {
    CauseModel {
        cause: k,
        include_treatment: true,
        covariates: Vec::new(),
        fixed: Default::default(),
    }
}

#[test]
fn treatment_only_incidence_matches_arm_step_sums() {
    let opts = SolverOptions::default();
    let mut rng = stream(1, "cif-oracle", &[]);
    let mut checked = 0;
    while checked < 20 {
        let n = rng.random_range(20..=200);
        let ds = oracles::random_dataset(&mut rng, n, 1, 2);
        let models = [treatment_only(1), treatment_only(2)];
        let Ok(fits) = CompetingRisksFit::fit(&ds, &models, &ds.weights(), &opts) else {
            continue;
        };
        let grid = TimeGrid::new((1..=30).map(|i| i as f64 * 0.1).collect()).unwrap();
        let beta: Vec<f64> = fits.fits.iter().map(|f| f.beta[0]).collect();
        for a in [false, true] {
            let lib = cumulative_incidence(&fits, a, &[0.0], &grid).unwrap();
            let oracle = oracles::arm_cif(&ds, &beta, a, grid.points());
            for (x, y) in lib.values.iter().zip(&oracle) {
                assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
            }
        }
        let ate = g_formula_ate(&fits, &ds, &grid).unwrap();
        let f1 = oracles::arm_cif(&ds, &beta, true, grid.points());
        let f0 = oracles::arm_cif(&ds, &beta, false, grid.points());
        for t in 0..grid.len() {
            assert!((ate.values[t] - (f1[t] - f0[t])).abs() <= 1e-10);
        }
        checked += 1;
    }
}
