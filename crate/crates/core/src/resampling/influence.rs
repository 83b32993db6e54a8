use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::linearization::linearize;
use crate::cif::{ate_with_caps, CompetingRisksFit, TimeGrid};
use crate::cox::SolverOptions;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numfmt::pairwise_sum;

/// Gateaux step size times `n`.
pub const GATEAUX_STEP: f64 = 1e-4;

/// How influence values are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceMode {
    /// Central finite differences of the refitted estimator along each
    /// subject's point-mass direction.
    GateauxNumeric,
    /// Analytic expansion of the Cox score and Breslow estimators.
    ClosedForm,
}

/// Per-subject influence values `ÎF_i(t)` and `ν̂(t) = Σ_i π_i ÎF_i(t)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfluenceMatrix {
    pub grid: TimeGrid,
    /// `n` rows of length `|grid|`.
    pub values: Vec<Vec<f64>>,
    pub variance: Vec<f64>,
}

impl InfluenceMatrix {
    pub fn new(grid: TimeGrid, values: Vec<Vec<f64>>, weights: &[f64]) -> Result<Self> {
        if values.len() != weights.len() || values.iter().any(|r| r.len() != grid.len()) {
            return Err(Error::Domain("influence matrix shape mismatch".into()));
        }
        let total = pairwise_sum(weights);
        let mut col = vec![0.0; values.len()];
        let variance = (0..grid.len())
            .map(|t| {
                for (c, (row, w)) in col.iter_mut().zip(values.iter().zip(weights)) {
                    *c = w * row[t] * row[t];
                }
                pairwise_sum(&col) / total
            })
            .collect();
        Ok(InfluenceMatrix {
            grid,
            values,
            variance,
        })
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }
}

/// Influence values of the g-formula ATE at `fits`.
pub fn influence_matrix(
    fits: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
    mode: InfluenceMode,
    solver: &SolverOptions,
) -> Result<InfluenceMatrix> {
    let weights = ds.weights();
    let values = match mode {
        InfluenceMode::GateauxNumeric => gateaux(fits, ds, grid, &weights, solver)?,
        InfluenceMode::ClosedForm => {
            let lin = linearize(fits, ds, grid)?;
            let g = grid.len();
            let flat = lin.influence();
            if g == 0 {
                vec![Vec::new(); ds.n()]
            } else {
                flat.chunks(g).map(<[f64]>::to_vec).collect()
            }
        }
    };
    InfluenceMatrix::new(grid.clone(), values, &weights)
}

/// Central differences along each subject's point-mass direction.
///
/// The estimator caps counterfactual incidences at 1, so it has kinks where a
/// raw incidence crosses 1. When a perturbation changes how many incidences
/// are capped at a grid point, the derivative there is taken one-sidedly (to
/// second order) from the side that keeps the unperturbed capping, which is
/// the slope of the estimator's own smooth piece.
fn gateaux(
    fits: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
    weights: &[f64],
    solver: &SolverOptions,
) -> Result<Vec<Vec<f64>>> {
    let n = ds.n();
    let total: f64 = weights.iter().sum();
    let eps = GATEAUX_STEP / n as f64;
    let (base, base_caps) = ate_with_caps(fits, ds, grid, weights)?;
    let perturbed = |i: usize, e: f64| -> Result<(Vec<f64>, Vec<u32>)> {
        let w: Vec<f64> = weights
            .iter()
            .enumerate()
            .map(|(j, &wj)| wj * (1.0 - e) + if j == i { e * total } else { 0.0 })
            .collect();
        let refit = fits.refit(ds, &w, solver)?;
        ate_with_caps(&refit, ds, grid, &w)
    };
    (0..n)
        .into_par_iter()
        .map(|i| {
            let wrap = |source| Error::PerturbedRefit {
                subject: i,
                source: Box::new(source),
            };
            let (up, up_caps) = perturbed(i, eps).map_err(wrap)?;
            let (down, down_caps) = perturbed(i, -eps).map_err(wrap)?;
            let mut out: Vec<f64> = up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * eps)).collect();
            let kinked: Vec<usize> = (0..grid.len())
                .filter(|&t| up_caps[t] != base_caps[t] || down_caps[t] != base_caps[t])
                .collect();
            if kinked.is_empty() {
                return Ok(out);
            }
            let mut far: [Option<Vec<f64>>; 2] = [None, None];
            for t in kinked {
                let (side, near) = match (up_caps[t] == base_caps[t], down_caps[t] == base_caps[t]) {
                    (true, false) => (0, &up),
                    (false, true) => (1, &down),
                    _ => continue,
                };
                let sign = if side == 0 { 1.0 } else { -1.0 };
                if far[side].is_none() {
                    far[side] = Some(perturbed(i, 2.0 * sign * eps).map_err(wrap)?.0);
                }
                let f2 = far[side].as_ref().expect("just set")[t];
                out[t] = sign * (4.0 * near[t] - 3.0 * base[t] - f2) / (2.0 * eps);
            }
            Ok(out)
        })
        .collect()
}
