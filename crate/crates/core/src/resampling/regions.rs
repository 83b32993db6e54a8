use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{empirical_quantile, InfluenceMatrix, Method, ResampleEnsemble};
use crate::cif::{AteCurve, TimeGrid};
use crate::error::{Error, Result};
use crate::rng::stream;

/// Variances at or below this are treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Method-specific artifacts from which intervals are built.
#[derive(Debug, Clone, Copy)]
pub enum RegionInputs<'a> {
    Efron(&'a ResampleEnsemble),
    /// Influence values; bands use `draws` standard-normal multiplier vectors
    /// seeded from `seed`.
    Influence {
        matrix: &'a InfluenceMatrix,
        draws: usize,
        seed: u64,
    },
    Wild(&'a ResampleEnsemble),
}

impl RegionInputs<'_> {
    pub fn method(&self) -> Method {
        match self {
            RegionInputs::Efron(e) | RegionInputs::Wild(e) => e.method,
            RegionInputs::Influence { .. } => Method::Influence,
        }
    }

    fn grid(&self) -> &TimeGrid {
        match self {
            RegionInputs::Efron(e) | RegionInputs::Wild(e) => &e.grid,
            RegionInputs::Influence { matrix, .. } => &matrix.grid,
        }
    }

    fn n(&self) -> usize {
        match self {
            RegionInputs::Efron(e) | RegionInputs::Wild(e) => e.n,
            RegionInputs::Influence { matrix, .. } => matrix.n(),
        }
    }

    fn variance(&self) -> &[f64] {
        match self {
            RegionInputs::Efron(e) | RegionInputs::Wild(e) => &e.variance,
            RegionInputs::Influence { matrix, .. } => &matrix.variance,
        }
    }

    /// Multiplier turning a standardized quantile into a half-width at grid index `t`.
    fn scale(&self, t: usize) -> f64 {
        let v = self.variance()[t];
        match self {
            RegionInputs::Efron(_) => v.sqrt(),
            RegionInputs::Influence { .. } | RegionInputs::Wild(_) => (v / self.n() as f64).sqrt(),
        }
    }
}

/// Pointwise intervals or a simultaneous band for the ATE curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRegion {
    pub grid: TimeGrid,
    pub estimate: AteCurve,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
    pub method: Method,
    pub band: bool,
    /// One quantile per time for pointwise intervals, a single one for a band.
    pub quantile_used: Vec<f64>,
    /// Points whose interval collapsed to the estimate because of zero variance.
    pub degenerate: Vec<bool>,
    pub warnings: Vec<String>,
}

impl ConfidenceRegion {
    pub fn half_widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| (u - l) / 2.0).collect()
    }

    /// True when `lower ≤ f(t) ≤ upper` at every grid point of the region.
    pub fn contains<F: Fn(f64) -> f64>(&self, f: F) -> bool {
        self.grid
            .points()
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&t, (l, u))| {
                let v = f(t);
                *l <= v && v <= *u
            })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("alpha {alpha} outside (0, 1)")))
    }
}

fn check_estimate(inputs: &RegionInputs<'_>, estimate: &AteCurve) -> Result<()> {
    if estimate.grid != *inputs.grid() {
        return Err(Error::Domain("estimate and resampling artifacts use different grids".into()));
    }
    Ok(())
}

fn sub_curve(estimate: &AteCurve, idx: &[usize]) -> Result<AteCurve> {
    Ok(AteCurve {
        grid: TimeGrid::new(idx.iter().map(|&i| estimate.grid.points()[i]).collect())?,
        values: idx.iter().map(|&i| estimate.values[i]).collect(),
        n_subjects: estimate.n_subjects,
        clamped: estimate.clamped,
    })
}

/// Pointwise `(1 − α)` intervals at the given grid times.
pub fn pointwise_ci(
    inputs: RegionInputs<'_>,
    estimate: &AteCurve,
    alpha: f64,
    times: &[f64],
) -> Result<ConfidenceRegion> {
    check_alpha(alpha)?;
    check_estimate(&inputs, estimate)?;
    let grid = inputs.grid();
    let idx = times
        .iter()
        .map(|&t| {
            grid.index_of(t)
                .ok_or_else(|| Error::Domain(format!("time {t} is not on the evaluation grid")))
        })
        .collect::<Result<Vec<_>>>()?;
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    let mut lower = Vec::with_capacity(idx.len());
    let mut upper = Vec::with_capacity(idx.len());
    let mut quantile_used = Vec::with_capacity(idx.len());
    let mut degenerate = Vec::with_capacity(idx.len());
    let mut warnings = Vec::new();
    for &t in &idx {
        let est = estimate.values[t];
        let (lo, hi, q, degen) = match inputs {
            RegionInputs::Efron(e) => {
                let col: Vec<f64> = e.draws.iter().map(|d| d[t]).collect();
                let lo = empirical_quantile(&col, alpha / 2.0)?;
                let hi = empirical_quantile(&col, 1.0 - alpha / 2.0)?;
                (lo, hi, hi, false)
            }
            RegionInputs::Influence { matrix, .. } => {
                let v = matrix.variance[t];
                if v <= VARIANCE_FLOOR {
                    (est, est, z, true)
                } else {
                    let h = z * (v / matrix.n() as f64).sqrt();
                    (est - h, est + h, z, false)
                }
            }
            RegionInputs::Wild(e) => {
                let col: Vec<f64> = e.draws.iter().map(|d| d[t].abs()).collect();
                let q = empirical_quantile(&col, 1.0 - alpha)?;
                if e.variance[t] <= VARIANCE_FLOOR {
                    (est, est, q, true)
                } else {
                    let h = q / (e.n as f64).sqrt();
                    (est - h, est + h, q, false)
                }
            }
        };
        if degen {
            warnings.push(format!(
                "zero variance at t = {}: degenerate interval",
                grid.points()[t]
            ));
        }
        lower.push(lo);
        upper.push(hi);
        quantile_used.push(q);
        degenerate.push(degen);
    }
    let estimate = sub_curve(estimate, &idx)?;
    Ok(ConfidenceRegion {
        grid: estimate.grid.clone(),
        estimate,
        lower,
        upper,
        level: 1.0 - alpha,
        method: inputs.method(),
        band: false,
        quantile_used,
        degenerate,
        warnings,
    })
}

/// Absolute standardized draws on the grid points of `[t1, t2]` with usable variance.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedDraws {
    /// Grid indices kept.
    pub included: Vec<usize>,
    /// Grid indices in `[t1, t2]` dropped for (near-)zero variance.
    pub excluded: Vec<usize>,
    /// `B` rows of `|included|` values.
    pub values: Vec<Vec<f64>>,
}

impl StandardizedDraws {
    /// Per-draw suprema over the included points.
    pub fn suprema(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|r| r.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Values of every draw at the `j`-th included point.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }
}

/// The standardized resampled processes whose suprema calibrate a band.
pub fn standardized_draws(inputs: RegionInputs<'_>, t1: f64, t2: f64) -> Result<StandardizedDraws> {
    if !(t1.is_finite() && t2.is_finite() && 0.0 <= t1 && t1 <= t2) {
        return Err(Error::Domain(format!("invalid band interval [{t1}, {t2}]")));
    }
    let grid = inputs.grid();
    let var = inputs.variance();
    let (included, excluded): (Vec<usize>, Vec<usize>) = (0..grid.len())
        .filter(|&i| (t1..=t2).contains(&grid.points()[i]))
        .partition(|&i| var[i] > VARIANCE_FLOOR);
    if included.is_empty() {
        return Err(Error::Domain(format!(
            "no grid point in [{t1}, {t2}] has positive variance"
        )));
    }
    let sd: Vec<f64> = included.iter().map(|&i| var[i].sqrt()).collect();
    let values = match inputs {
        RegionInputs::Efron(e) | RegionInputs::Wild(e) => e
            .draws
            .iter()
            .map(|d| {
                included
                    .iter()
                    .zip(&sd)
                    .map(|(&i, s)| ((d[i] - e.center[i]) / s).abs())
                    .collect()
            })
            .collect(),
        RegionInputs::Influence { matrix, draws, seed } => {
            if draws == 0 {
                return Err(Error::Domain("the influence band needs at least one multiplier draw".into()));
            }
            let n = matrix.n();
            let root_n = (n as f64).sqrt();
            (0..draws)
                .into_par_iter()
                .map(|b| {
                    let mut rng = stream(seed, "if-band", &[b as u64]);
                    let mut acc = vec![0.0; included.len()];
                    for row in &matrix.values {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        for (a, &i) in acc.iter_mut().zip(&included) {
                            *a += row[i] * g;
                        }
                    }
                    acc.iter().zip(&sd).map(|(a, s)| (a / (root_n * s)).abs()).collect()
                })
                .collect()
        }
    };
    Ok(StandardizedDraws {
        included,
        excluded,
        values,
    })
}

/// Simultaneous `(1 − α)` band over the grid points in `[t1, t2]`.
pub fn simultaneous_band(
    inputs: RegionInputs<'_>,
    estimate: &AteCurve,
    alpha: f64,
    t1: f64,
    t2: f64,
) -> Result<ConfidenceRegion> {
    check_alpha(alpha)?;
    check_estimate(&inputs, estimate)?;
    let std = standardized_draws(inputs, t1, t2)?;
    let sups = std.suprema();
    let q = empirical_quantile(&sups, 1.0 - alpha)?;
    let mut warnings = Vec::new();
    if !std.excluded.is_empty() {
        warnings.push(format!(
            "{} grid point(s) with zero variance excluded from the band",
            std.excluded.len()
        ));
    }
    if sups.len() == 1 {
        warnings.push("band calibrated from a single draw".into());
    }
    let (lower, upper) = std
        .included
        .iter()
        .map(|&i| {
            let h = q * inputs.scale(i);
            (estimate.values[i] - h, estimate.values[i] + h)
        })
        .unzip();
    let estimate = sub_curve(estimate, &std.included)?;
    Ok(ConfidenceRegion {
        grid: estimate.grid.clone(),
        degenerate: vec![false; estimate.values.len()],
        estimate,
        lower,
        upper,
        level: 1.0 - alpha,
        method: inputs.method(),
        band: true,
        quantile_used: vec![q],
        warnings,
    })
}
