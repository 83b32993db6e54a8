//! Resampling-based uncertainty for the ATE curve: ensembles, influence
//! values and the confidence regions built from them.

mod efron;
mod influence;
pub(crate) mod linearization;
mod multipliers;
mod regions;
mod wild;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cif::TimeGrid;
use crate::error::{Error, Result};

pub use efron::{efron_ensemble, RedrawPolicy};
pub use influence::{influence_matrix, InfluenceMatrix, InfluenceMode, GATEAUX_STEP};
pub use multipliers::{gen_multipliers, MultiplierSampler, MultiplierScheme};
pub use regions::{
    pointwise_ci, simultaneous_band, standardized_draws, ConfidenceRegion, RegionInputs,
    StandardizedDraws, VARIANCE_FLOOR,
};
pub use wild::{wild_ensemble, wild_ensemble_from, WildContributions};

/// Interval construction method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Method {
    Efron,
    Influence,
    Wild(MultiplierScheme),
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Efron,
        Method::Influence,
        Method::Wild(MultiplierScheme::StandardNormal),
        Method::Wild(MultiplierScheme::CenteredPoisson),
        Method::Wild(MultiplierScheme::WeirdBinomial),
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::Efron => "ebs",
            Method::Influence => "if",
            Method::Wild(MultiplierScheme::StandardNormal) => "wbs-normal",
            Method::Wild(MultiplierScheme::CenteredPoisson) => "wbs-poisson",
            Method::Wild(MultiplierScheme::WeirdBinomial) => "wbs-weird",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown method `{s}`")))
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.label().to_string()
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// `B` resampled curves on a grid with their per-time mean and variance.
///
/// For the Efron bootstrap the draws are the replicate estimates `ÂTE*_b(t)`;
/// for the wild bootstrap they are the process draws `Û_n^{(b)}(t)` on the
/// `√n` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResampleEnsemble {
    pub method: Method,
    pub grid: TimeGrid,
    pub draws: Vec<Vec<f64>>,
    pub center: Vec<f64>,
    /// Empirical variance with denominator `B − 1`.
    pub variance: Vec<f64>,
    /// Sample size of the data the ensemble was built from.
    pub n: usize,
    /// Replicates discarded and redrawn after a failed refit.
    pub discarded: usize,
}

impl ResampleEnsemble {
    pub fn from_draws(method: Method, grid: TimeGrid, draws: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        let b = draws.len();
        if b < 2 {
            return Err(Error::Domain(format!("an ensemble needs B >= 2 draws, got {b}")));
        }
        let g = grid.len();
        if draws.iter().any(|d| d.len() != g) {
            return Err(Error::Domain("draw length differs from the grid".into()));
        }
        let mut center = vec![0.0; g];
        let mut variance = vec![0.0; g];
        let mut col = vec![0.0; b];
        for t in 0..g {
            for (c, d) in col.iter_mut().zip(&draws) {
                *c = d[t];
            }
            let m = crate::numfmt::pairwise_sum(&col) / b as f64;
            for c in col.iter_mut() {
                *c = (*c - m).powi(2);
            }
            center[t] = m;
            variance[t] = crate::numfmt::pairwise_sum(&col) / (b - 1) as f64;
        }
        Ok(ResampleEnsemble {
            method,
            grid,
            draws,
            center,
            variance,
            n,
            discarded: 0,
        })
    }

    pub fn b(&self) -> usize {
        self.draws.len()
    }
}

/// The `⌈m·p⌉`-th order statistic of `m` samples.
pub fn empirical_quantile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Domain(format!("quantile level {p} outside (0, 1]")));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::Domain("quantile of a sample containing NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[order_index(sorted.len(), p)])
}

/// Zero-based index of the ceiling-rule order statistic. The small slack keeps
/// products like `100 × 0.95` from rounding up past the exact integer.
pub(crate) fn order_index(m: usize, p: f64) -> usize {
    let k = (m as f64 * p - 1e-9).ceil() as usize;
    k.clamp(1, m) - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_uses_the_ceiling_rule() {
        let xs: Vec<f64> = (1..=100).rev().map(f64::from).collect();
        assert_eq!(empirical_quantile(&xs, 0.95).unwrap(), 95.0);
        assert_eq!(empirical_quantile(&xs, 0.951).unwrap(), 96.0);
        assert_eq!(empirical_quantile(&xs, 1.0).unwrap(), 100.0);
        assert_eq!(empirical_quantile(&xs, 0.001).unwrap(), 1.0);
        assert_eq!(empirical_quantile(&[3.5], 0.3).unwrap(), 3.5);
        assert!(empirical_quantile(&[], 0.5).is_err());
        assert!(empirical_quantile(&xs, 0.0).is_err());
    }

    #[test]
    fn method_labels_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.label().parse::<Method>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<Method>(&json).unwrap(), m);
        }
        assert!("bogus".parse::<Method>().is_err());
    }

    #[test]
    fn ensemble_moments() {
        let grid = TimeGrid::new(vec![1.0, 2.0]).unwrap();
        let e = ResampleEnsemble::from_draws(
            Method::Efron,
            grid.clone(),
            vec![vec![1.0, 0.0], vec![3.0, 0.0], vec![5.0, 0.0]],
            10,
        )
        .unwrap();
        assert_eq!(e.center, vec![3.0, 0.0]);
        assert_eq!(e.variance, vec![4.0, 0.0]);
        assert!(ResampleEnsemble::from_draws(Method::Efron, grid, vec![vec![1.0, 1.0]], 10).is_err());
    }
}
