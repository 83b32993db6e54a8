//! Conditional cumulative incidence and the g-formula ATE.
//!
//! For a covariate profile `(a, z)` the cause-1 cumulative incidence is the
//! step sum
//!
//! ```text
//! F̂_1(t | a, z) = Σ_{s ≤ t} exp(−Σ_k Λ̂_k(s− | a, z)) · ΔΛ̂_1(s | a, z)
//! ```
//!
//! over the cause-1 jump times, using the left limit of the all-cause hazard.
//! The ATE averages `F̂_1(t | 1, Z_i) − F̂_1(t | 0, Z_i)` over the sample.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cox::{fit_cause_specific, fit_cause_specific_from, CauseModel, CoxFit, SolverOptions};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::numfmt::pairwise_sum;

/// Strictly increasing, nonnegative evaluation times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Domain("grid points must be finite and nonnegative".into()));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("grid points must be strictly increasing".into()));
        }
        Ok(TimeGrid { points })
    }

    /// Sorted union of the given times (duplicates dropped).
    pub fn from_unsorted(mut points: Vec<f64>) -> Result<Self> {
        points.sort_by(f64::total_cmp);
        points.dedup();
        TimeGrid::new(points)
    }

    /// Cause-1 event times up to `horizon` united with `report_times`.
    pub fn event_grid(ds: &Dataset, report_times: &[f64], horizon: Option<f64>) -> Result<Self> {
        let limit = horizon.unwrap_or(f64::INFINITY);
        let mut pts: Vec<f64> = ds
            .records()
            .iter()
            .filter(|r| r.cause == 1 && r.time <= limit)
            .map(|r| r.time)
            .collect();
        pts.extend_from_slice(report_times);
        TimeGrid::from_unsorted(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max(&self) -> Option<f64> {
        self.points.last().copied()
    }

    /// Index of a point exactly on the grid.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.points.binary_search_by(|p| p.total_cmp(&t)).ok()
    }
}

/// Estimated ATE on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteCurve {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub n_subjects: usize,
    /// Set when some counterfactual CIF exceeded 1 and was clamped.
    pub clamped: bool,
}

impl AteCurve {
    pub fn at(&self, t: f64) -> Option<f64> {
        self.grid.index_of(t).map(|i| self.values[i])
    }
}

/// Cumulative incidence of cause 1 on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CifCurve {
    pub values: Vec<f64>,
    pub clamped: bool,
}

/// The `K` fitted cause-specific models (index `k − 1` holds cause `k`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompetingRisksFit {
    pub fits: Vec<CoxFit>,
}

impl CompetingRisksFit {
    /// Fits every cause with the given models. Refuses datasets with tied event times.
    pub fn fit(
        ds: &Dataset,
        models: &[CauseModel],
        weights: &[f64],
        options: &SolverOptions,
    ) -> Result<Self> {
        ds.ensure_no_event_ties()?;
        Self::fit_unchecked(ds, models, weights, options)
    }

    /// Treatment plus all covariates for every cause, dataset weights.
    pub fn fit_default(ds: &Dataset, options: &SolverOptions) -> Result<Self> {
        let models = default_models(ds);
        Self::fit(ds, &models, &ds.weights(), options)
    }

    pub(crate) fn fit_unchecked(
        ds: &Dataset,
        models: &[CauseModel],
        weights: &[f64],
        options: &SolverOptions,
    ) -> Result<Self> {
        check_models(ds, models)?;
        let fits = models
            .iter()
            .map(|m| fit_cause_specific(ds, m, weights, options))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompetingRisksFit { fits })
    }

    /// Refits the same models under new case weights, warm-starting at the current coefficients.
    pub fn refit(&self, ds: &Dataset, weights: &[f64], options: &SolverOptions) -> Result<Self> {
        let fits = self
            .fits
            .iter()
            .map(|f| fit_cause_specific_from(ds, &f.model, weights, options, &f.beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(CompetingRisksFit { fits })
    }

    pub fn models(&self) -> Vec<CauseModel> {
        self.fits.iter().map(|f| f.model.clone()).collect()
    }

    pub fn num_causes(&self) -> usize {
        self.fits.len()
    }

    fn check_usable(&self) -> Result<()> {
        if let Some(f) = self.fits.iter().find(|f| !f.converged) {
            return Err(Error::Refused(format!("cause {} fit did not converge", f.cause)));
        }
        if self.fits.first().map(|f| f.cause) != Some(1) {
            return Err(Error::Refused("no cause-1 model".into()));
        }
        Ok(())
    }

    pub(crate) fn timeline(&self, horizon: f64) -> Timeline {
        Timeline::new(&self.fits, horizon)
    }

    /// Relative risks `exp(β_k'x(a, z))` for every cause.
    pub(crate) fn relative_risks(&self, a: f64, z: &[f64]) -> Vec<f64> {
        self.fits.iter().map(|f| f.relative_risk(a, z)).collect()
    }
}

/// Treatment plus all covariates for every cause of `ds`.
pub fn default_models(ds: &Dataset) -> Vec<CauseModel> {
    (1..=ds.num_causes())
        .map(|k| CauseModel::full(k, ds.num_covariates()))
        .collect()
}

fn check_models(ds: &Dataset, models: &[CauseModel]) -> Result<()> {
    if models.len() != ds.num_causes() as usize {
        return Err(Error::Domain(format!(
            "{} cause models for {} causes",
            models.len(),
            ds.num_causes()
        )));
    }
    for (k, m) in models.iter().enumerate() {
        if m.cause as usize != k + 1 {
            return Err(Error::Domain("cause models must be ordered by cause".into()));
        }
    }
    if !models[0].include_treatment {
        return Err(Error::Refused(
            "the cause-1 model must include the treatment indicator".into(),
        ));
    }
    Ok(())
}

/// All baseline jumps of all causes merged onto one sorted time axis.
#[derive(Debug, Clone)]
pub(crate) struct Timeline {
    pub times: Vec<f64>,
    /// `times.len() × K` baseline jump sizes (0 where a cause does not jump).
    pub jumps: Vec<f64>,
    pub k: usize,
}

impl Timeline {
    fn new(fits: &[CoxFit], horizon: f64) -> Self {
        let k = fits.len();
        let mut times: Vec<f64> = fits
            .iter()
            .flat_map(|f| f.baseline.jump_times.iter().copied())
            .filter(|&t| t <= horizon)
            .collect();
        times.sort_by(f64::total_cmp);
        times.dedup();
        let mut jumps = vec![0.0; times.len() * k];
        for (c, f) in fits.iter().enumerate() {
            for (&t, &d) in f.baseline.jump_times.iter().zip(&f.baseline.jump_sizes) {
                if t > horizon {
                    break;
                }
                let pos = times.binary_search_by(|s| s.total_cmp(&t)).expect("merged time");
                jumps[pos * k + c] += d;
            }
        }
        Timeline { times, jumps, k }
    }

    /// Walks the timeline for one profile. `visit(step, survival_before, cif_after)`
    /// is called at every merged jump time.
    pub fn walk<F: FnMut(usize, f64, f64)>(&self, rr: &[f64], mut visit: F) {
        let mut hazard = 0.0f64;
        let mut cif = 0.0;
        for s in 0..self.times.len() {
            let row = &self.jumps[s * self.k..(s + 1) * self.k];
            let surv = (-hazard).exp();
            cif += surv * rr[0] * row[0];
            visit(s, surv, cif);
            for c in 0..self.k {
                hazard += rr[c] * row[c];
            }
        }
    }

    /// Raw (unclamped) cause-1 CIF evaluated on `grid`.
    pub fn cif_on_grid(&self, rr: &[f64], grid: &[f64], out: &mut [f64]) {
        let mut g = 0;
        let mut last = 0.0;
        self.walk(rr, |s, _, cif| {
            let t = self.times[s];
            while g < grid.len() && grid[g] < t {
                out[g] = last;
                g += 1;
            }
            last = cif;
        });
        while g < grid.len() {
            out[g] = last;
            g += 1;
        }
    }
}

fn clamp_curve(values: &mut [f64]) -> bool {
    let mut clamped = false;
    for v in values.iter_mut() {
        if *v > 1.0 {
            *v = 1.0;
            clamped = true;
        }
    }
    clamped
}

/// `F̂_1(t | a, z)` on `grid`, clamped to `[0, 1]` with a flag when clamping occurred.
pub fn cumulative_incidence(
    fits: &CompetingRisksFit,
    a: bool,
    z: &[f64],
    grid: &TimeGrid,
) -> Result<CifCurve> {
    fits.check_usable()?;
    if let Some(f) = fits.fits.iter().find(|f| f.num_covariates != z.len()) {
        return Err(Error::Domain(format!(
            "covariate vector has length {}, cause {} model expects {}",
            z.len(),
            f.cause,
            f.num_covariates
        )));
    }
    let horizon = grid.max().unwrap_or(0.0);
    let tl = fits.timeline(horizon);
    let rr = fits.relative_risks(if a { 1.0 } else { 0.0 }, z);
    let mut values = vec![0.0; grid.len()];
    tl.cif_on_grid(&rr, grid.points(), &mut values);
    let clamped = clamp_curve(&mut values);
    Ok(CifCurve { values, clamped })
}

/// Per-subject counterfactual contrasts `F̂_1(t | 1, Z_i) − F̂_1(t | 0, Z_i)`
/// (rows in record order) and, per grid point, how many of the `2n`
/// counterfactual incidences were capped at 1.
pub(crate) fn subject_contrasts(
    fits: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
) -> (Vec<Vec<f64>>, Vec<u32>) {
    let horizon = grid.max().unwrap_or(0.0);
    let tl = fits.timeline(horizon);
    let g = grid.len();
    let rows: Vec<(Vec<f64>, Vec<u32>)> = ds
        .records()
        .par_iter()
        .map(|r| {
            let mut f1 = vec![0.0; g];
            let mut f0 = vec![0.0; g];
            tl.cif_on_grid(&fits.relative_risks(1.0, &r.covariates), grid.points(), &mut f1);
            tl.cif_on_grid(&fits.relative_risks(0.0, &r.covariates), grid.points(), &mut f0);
            let caps = f1.iter().zip(&f0).map(|(a, b)| (*a > 1.0) as u32 + (*b > 1.0) as u32).collect();
            clamp_curve(&mut f1);
            clamp_curve(&mut f0);
            (f1.iter().zip(&f0).map(|(a, b)| a - b).collect(), caps)
        })
        .collect();
    let mut caps = vec![0u32; g];
    for (_, c) in &rows {
        caps.iter_mut().zip(c).for_each(|(a, b)| *a += b);
    }
    (rows.into_iter().map(|(r, _)| r).collect(), caps)
}

/// Weighted mean of the rows with weights normalised to sum to one.
pub(crate) fn weighted_column_means(rows: &[Vec<f64>], weights: &[f64], g: usize) -> Vec<f64> {
    let total = pairwise_sum(weights);
    let mut col = vec![0.0; rows.len()];
    (0..g)
        .map(|t| {
            for (j, row) in rows.iter().enumerate() {
                col[j] = weights[j] * row[t];
            }
            pairwise_sum(&col) / total
        })
        .collect()
}

/// `ÂTE(t) = Σ_i π_i [F̂_1(t | 1, Z_i) − F̂_1(t | 0, Z_i)]` with `π` the
/// normalised dataset weights.
pub fn g_formula_ate(fits: &CompetingRisksFit, ds: &Dataset, grid: &TimeGrid) -> Result<AteCurve> {
    g_formula_ate_weighted(fits, ds, grid, &ds.weights())
}

/// G-formula ATE averaging over the sample with the given (nonnegative) weights.
pub fn g_formula_ate_weighted(
    fits: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
    weights: &[f64],
) -> Result<AteCurve> {
    let (values, caps) = ate_with_caps(fits, ds, grid, weights)?;
    Ok(AteCurve {
        grid: grid.clone(),
        values,
        n_subjects: ds.n(),
        clamped: caps.iter().any(|&c| c > 0),
    })
}

/// ATE values and per-grid-point counts of capped counterfactual incidences.
pub(crate) fn ate_with_caps(
    fits: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
    weights: &[f64],
) -> Result<(Vec<f64>, Vec<u32>)> {
    fits.check_usable()?;
    if !fits.fits[0].model.include_treatment {
        return Err(Error::Refused(
            "the cause-1 model must include the treatment indicator".into(),
        ));
    }
    if weights.len() != ds.n() {
        return Err(Error::Domain("weight vector length differs from sample size".into()));
    }
    if fits.fits.iter().any(|f| f.num_covariates != ds.num_covariates()) {
        return Err(Error::Domain("fits and dataset disagree on the covariates".into()));
    }
    let (rows, caps) = subject_contrasts(fits, ds, grid);
    Ok((weighted_column_means(&rows, weights, grid.len()), caps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cox::fit_at_coefficients;
    use crate::data::SubjectRecord;

    fn small_dataset() -> Dataset {
        let raw = [
            (0.7, 1, true, 0.2),
            (1.1, 2, false, -0.4),
            (1.6, 1, false, 1.0),
            (2.2, 0, true, 0.3),
            (2.9, 1, true, -1.1),
            (3.4, 2, true, 0.8),
            (4.0, 1, false, 0.1),
            (4.6, 2, false, -0.6),
            (5.3, 1, true, 0.5),
            (6.1, 0, false, 0.0),
        ];
        let recs = raw
            .iter()
            .map(|&(t, c, a, z)| SubjectRecord::new(t, c, a, vec![z]))
            .collect();
        Dataset::new(recs, 2, vec!["z".into()]).unwrap()
    }

    fn fixed_fits(ds: &Dataset, beta_a: f64) -> CompetingRisksFit {
        fixed_fits2(ds, beta_a, -0.2)
    }

    fn fixed_fits2(ds: &Dataset, beta_a: f64, beta_a2: f64) -> CompetingRisksFit {
        let w = ds.weights();
        let m1 = CauseModel::full(1, 1);
        let m2 = CauseModel::full(2, 1);
        CompetingRisksFit {
            fits: vec![
                fit_at_coefficients(ds, &m1, &w, &[beta_a, 0.3]).unwrap(),
                fit_at_coefficients(ds, &m2, &w, &[beta_a2, 0.5]).unwrap(),
            ],
        }
    }

    #[test]
    fn cif_is_zero_at_time_zero_and_monotone() {
        let ds = small_dataset();
        let fits = fixed_fits(&ds, 0.4);
        let grid = TimeGrid::new(vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0]).unwrap();
        let c = cumulative_incidence(&fits, true, &[0.3], &grid).unwrap();
        assert_eq!(c.values[0], 0.0);
        assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        assert!(c.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(cumulative_incidence(&fits, true, &[0.3, 1.0], &grid).is_err());
    }

    #[test]
    fn zero_treatment_effect_gives_zero_ate() {
        let ds = small_dataset();
        let fits = fixed_fits2(&ds, 0.0, 0.0);
        let grid = TimeGrid::event_grid(&ds, &[1.0, 3.0, 5.0], None).unwrap();
        let ate = g_formula_ate(&fits, &ds, &grid).unwrap();
        assert!(ate.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ate_is_permutation_invariant() {
        let ds = small_dataset();
        let fits = fixed_fits(&ds, 0.9);
        let grid = TimeGrid::event_grid(&ds, &[1.0, 3.0, 5.0], None).unwrap();
        let a = g_formula_ate(&fits, &ds, &grid).unwrap();
        let perm: Vec<usize> = (0..ds.n()).rev().collect();
        let b = g_formula_ate(&fits, &ds.permuted(&perm), &grid).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn contrast_increases_with_treatment_coefficient() {
        let ds = small_dataset();
        let grid = TimeGrid::new(vec![1.0, 2.0, 3.0, 4.5, 6.0]).unwrap();
        let z = [0.2];
        let mut prev: Option<Vec<f64>> = None;
        for beta_a in [-1.0, -0.3, 0.0, 0.4, 1.2] {
            let fits = fixed_fits(&ds, beta_a);
            let f1 = cumulative_incidence(&fits, true, &z, &grid).unwrap().values;
            let f0 = cumulative_incidence(&fits, false, &z, &grid).unwrap().values;
            let d: Vec<f64> = f1.iter().zip(&f0).map(|(a, b)| a - b).collect();
            if let Some(p) = prev {
                for (new, old) in d.iter().zip(&p) {
                    assert!(new > old, "{new} <= {old}");
                }
            }
            prev = Some(d);
        }
    }

    #[test]
    fn clamps_and_flags_oversized_incidence() {
        let ds = small_dataset();
        let w = ds.weights();
        let fits = CompetingRisksFit {
            fits: vec![
                fit_at_coefficients(&ds, &CauseModel::full(1, 1), &w, &[6.0, 3.0]).unwrap(),
                fit_at_coefficients(&ds, &CauseModel::full(2, 1), &w, &[0.0, 0.0]).unwrap(),
            ],
        };
        let grid = TimeGrid::new(vec![1.0, 3.0, 6.0]).unwrap();
        let c = cumulative_incidence(&fits, true, &[1.0], &grid).unwrap();
        assert!(c.clamped);
        assert!(c.values.iter().all(|v| *v <= 1.0));
        assert!(c.values.windows(2).all(|w| w[0] <= w[1]));
        let unclamped = cumulative_incidence(&fits, false, &[-1.0], &grid).unwrap();
        assert!(!unclamped.clamped);
    }

    #[test]
    fn cause_one_model_needs_treatment() {
        let ds = small_dataset();
        let models = vec![
            CauseModel::covariates_only(1, vec![0]),
            CauseModel::full(2, 1),
        ];
        let err = CompetingRisksFit::fit(&ds, &models, &ds.weights(), &SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Refused(_)));
    }

    #[test]
    fn grid_rejects_unsorted_points() {
        assert!(TimeGrid::new(vec![1.0, 1.0]).is_err());
        assert!(TimeGrid::new(vec![-1.0]).is_err());
        assert_eq!(TimeGrid::from_unsorted(vec![3.0, 1.0, 3.0]).unwrap().points(), &[1.0, 3.0]);
    }
}
