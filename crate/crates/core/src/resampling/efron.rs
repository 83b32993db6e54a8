use rand::Rng;
use rayon::prelude::*;

use super::{Method, ResampleEnsemble};
use crate::cif::{g_formula_ate_weighted, CompetingRisksFit, TimeGrid};
use crate::cox::SolverOptions;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

/// How failed bootstrap refits are handled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RedrawPolicy {
    /// Redraws allowed per replicate before giving up.
    pub max_retries: usize,
    pub solver: SolverOptions,
}

impl Default for RedrawPolicy {
    fn default() -> Self {
        RedrawPolicy {
            max_retries: 20,
            solver: SolverOptions::default(),
        }
    }
}

/// Nonparametric bootstrap ensemble of `ÂTE*_b` curves.
///
/// A resample is represented by its multiplicity counts, used as case weights
/// on the original records, which is equivalent to refitting on the duplicated
/// rows. Each replicate `b` (and each redraw of it) has its own random stream,
/// so the ensemble does not depend on the number of worker threads.
pub fn efron_ensemble(
    base: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
    b: usize,
    seed: u64,
    policy: &RedrawPolicy,
) -> Result<ResampleEnsemble> {
    if b < 2 {
        return Err(Error::Domain(format!("the bootstrap needs B >= 2 replicates, got {b}")));
    }
    let n = ds.n();
    let base_weights = ds.weights();
    let replicates: Vec<Result<(Vec<f64>, usize)>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut last = String::new();
            for attempt in 0..=policy.max_retries {
                let mut rng = stream(seed, "ebs", &[r as u64, attempt as u64]);
                let mut counts = vec![0.0; n];
                for _ in 0..n {
                    counts[rng.random_range(0..n)] += 1.0;
                }
                let weights: Vec<f64> = counts.iter().zip(&base_weights).map(|(c, w)| c * w).collect();
                let refit = base
                    .refit(ds, &weights, &policy.solver)
                    .and_then(|f| g_formula_ate_weighted(&f, ds, grid, &weights));
                match refit {
                    Ok(curve) => return Ok((curve.values, attempt)),
                    Err(e) => last = e.to_string(),
                }
            }
            Err(Error::RetriesExhausted {
                replicate: r,
                attempts: policy.max_retries + 1,
                last,
            })
        })
        .collect();
    let mut draws = Vec::with_capacity(b);
    let mut discarded = 0;
    for rep in replicates {
        let (values, redraws) = rep?;
        draws.push(values);
        discarded += redraws;
    }
    let mut ens = ResampleEnsemble::from_draws(Method::Efron, grid.clone(), draws, n)?;
    ens.discarded = discarded;
    Ok(ens)
}
