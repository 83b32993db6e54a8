//! Cause-specific Cox proportional hazards models.
//!
//! Coefficients maximise the weighted log partial likelihood
//!
//! ```text
//! l(β) = Σ_{i: D_i = k} w_i [β'x_i − log Σ_{j: T_j ≥ T_i} w_j exp(β'x_j)]
//! ```
//!
//! by Newton–Raphson with step halving; the baseline cumulative hazard is the
//! Breslow estimator. Risk-set sums are accumulated in one backward sweep over
//! the time-sorted records with a running-max shift so `exp` never overflows.
//! Tied event times fall back to the Breslow convention (every tied event sees
//! the full risk set), which is what case weights > 1 amount to.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Newton–Raphson settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Convergence threshold on `‖score‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    /// `‖β‖∞` beyond this is treated as a monotone (divergent) likelihood.
    pub divergence_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 50,
            max_halvings: 20,
            divergence_bound: 30.0,
        }
    }
}

/// Which columns enter the model for one cause.
///
/// The design row is `(A, Z_{c1}, Z_{c2}, …)` when `include_treatment` is set,
/// otherwise just the selected covariates. Coefficients listed in `fixed`
/// (keyed by design position) are held at the given value instead of estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseModel {
    pub cause: u32,
    pub include_treatment: bool,
    pub covariates: Vec<usize>,
    #[serde(default)]
    pub fixed: BTreeMap<usize, f64>,
}

impl CauseModel {
    /// Treatment plus every covariate of a `p`-covariate dataset.
    pub fn full(cause: u32, p: usize) -> Self {
        CauseModel {
            cause,
            include_treatment: true,
            covariates: (0..p).collect(),
            fixed: BTreeMap::new(),
        }
    }

    /// Covariates only, no treatment column.
    pub fn covariates_only(cause: u32, covariates: Vec<usize>) -> Self {
        CauseModel {
            cause,
            include_treatment: false,
            covariates,
            fixed: BTreeMap::new(),
        }
    }

    /// Holds the design coefficient at `position` fixed at `value`.
    pub fn with_fixed(mut self, position: usize, value: f64) -> Self {
        self.fixed.insert(position, value);
        self
    }

    /// Fixes the treatment coefficient (design position 0) at `value`.
    pub fn with_fixed_treatment(self, value: f64) -> Self {
        assert!(self.include_treatment, "model has no treatment column");
        self.with_fixed(0, value)
    }

    pub fn dim(&self) -> usize {
        self.covariates.len() + usize::from(self.include_treatment)
    }

    pub fn treatment_position(&self) -> Option<usize> {
        self.include_treatment.then_some(0)
    }

    pub fn column_names(&self, ds: &Dataset) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        if self.include_treatment {
            names.push("treated".to_string());
        }
        names.extend(self.covariates.iter().map(|&j| ds.covariate_names()[j].clone()));
        names
    }

    /// Design row for treatment `a` and a full covariate vector `z`.
    pub fn row(&self, a: f64, z: &[f64]) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.dim());
        self.row_into(a, z, &mut x);
        x
    }

    pub(crate) fn row_into(&self, a: f64, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        if self.include_treatment {
            out.push(a);
        }
        out.extend(self.covariates.iter().map(|&j| z[j]));
    }

    fn validate_against(&self, ds: &Dataset) -> Result<()> {
        if self.cause == 0 || self.cause > ds.num_causes() {
            return Err(Error::Domain(format!(
                "cause {} outside 1..={}",
                self.cause,
                ds.num_causes()
            )));
        }
        if let Some(&j) = self.covariates.iter().find(|&&j| j >= ds.num_covariates()) {
            return Err(Error::Domain(format!("covariate index {j} out of range")));
        }
        if let Some((&pos, _)) = self.fixed.iter().find(|(&pos, _)| pos >= self.dim()) {
            return Err(Error::Domain(format!("fixed coefficient position {pos} out of range")));
        }
        Ok(())
    }

    pub fn free_positions(&self) -> Vec<usize> {
        (0..self.dim()).filter(|p| !self.fixed.contains_key(p)).collect()
    }
}

/// Row-major `n × q` design matrix for one cause model.
#[derive(Debug, Clone)]
pub(crate) struct Design {
    pub q: usize,
    pub x: Vec<f64>,
}

impl Design {
    pub fn new(ds: &Dataset, model: &CauseModel) -> Self {
        let q = model.dim();
        let mut x = Vec::with_capacity(ds.n() * q);
        let mut row = Vec::with_capacity(q);
        for r in ds.records() {
            model.row_into(r.treatment(), &r.covariates, &mut row);
            x.extend_from_slice(&row);
        }
        Design { q, x }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.q..(i + 1) * self.q]
    }
}

/// Right-continuous, nondecreasing step function starting at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCumHazard {
    pub jump_times: Vec<f64>,
    pub jump_sizes: Vec<f64>,
}

impl StepCumHazard {
    /// Sum of the jumps at times `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.jump_sizes[..k].iter().sum()
    }

    /// Cumulative values after each jump.
    pub fn cumulative(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.jump_sizes
            .iter()
            .map(|&d| {
                acc += d;
                acc
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.jump_times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jump_times.is_empty()
    }
}

/// Fitted cause-specific Cox model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub cause: u32,
    pub model: CauseModel,
    pub column_names: Vec<String>,
    /// Treatment coefficient first (when modelled), then the covariate coefficients.
    pub beta: Vec<f64>,
    pub baseline: StepCumHazard,
    pub loglik: f64,
    pub score_norm_at_solution: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observed information `−∂²l/∂β∂β'` (row-major `q × q`).
    pub information_matrix: Vec<Vec<f64>>,
    /// Length of the full covariate vector the model indexes into.
    pub num_covariates: usize,
}

impl CoxFit {
    pub fn linear_predictor(&self, a: f64, z: &[f64]) -> f64 {
        let x = self.model.row(a, z);
        dot(&self.beta, &x)
    }

    pub fn relative_risk(&self, a: f64, z: &[f64]) -> f64 {
        self.linear_predictor(a, z).exp()
    }

    pub fn treatment_coefficient(&self) -> Option<f64> {
        self.model.treatment_position().map(|p| self.beta[p])
    }

    /// Model-based standard errors from the inverse information of the
    /// estimated coefficients; `NaN` for fixed ones.
    pub fn std_errors(&self) -> Vec<f64> {
        let free = self.model.free_positions();
        let mut se = vec![f64::NAN; self.beta.len()];
        let m = free.len();
        let info = DMatrix::from_fn(m, m, |a, b| self.information_matrix[free[a]][free[b]]);
        if let Some(inv) = info.try_inverse() {
            for (k, &p) in free.iter().enumerate() {
                se[p] = inv[(k, k)].max(0.0).sqrt();
            }
        }
        se
    }
}

/// `Λ̂_k(t | a, z) = Λ̂_0k(t) · exp(β̂'x(a, z))`.
pub fn cumulative_hazard_at(fit: &CoxFit, a: bool, z: &[f64], t: f64) -> Result<f64> {
    if z.len() != fit.num_covariates {
        return Err(Error::Domain(format!(
            "covariate vector has length {}, model expects {}",
            z.len(),
            fit.num_covariates
        )));
    }
    if t.is_nan() || t < 0.0 {
        return Err(Error::Domain(format!("cumulative hazard requested at t = {t}")));
    }
    let a = if a { 1.0 } else { 0.0 };
    Ok(fit.baseline.eval(t) * fit.relative_risk(a, z))
}

/// Log partial likelihood with its gradient and Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialLikelihood {
    pub loglik: f64,
    pub score: Vec<f64>,
    /// Row-major `q × q` Hessian (negative information).
    pub hessian: Vec<f64>,
}

/// Risk-set summary at one event: `S0 = Σ_{at risk} w_j exp(β'x_j)` (as a log)
/// and the weighted covariate mean `x̄ = S1 / S0`.
#[derive(Debug, Clone)]
pub(crate) struct EventSummary {
    pub subject: usize,
    pub time: f64,
    pub weight: f64,
    pub log_s0: f64,
    pub xbar: Vec<f64>,
}

/// Time-sorted view of one cause's counting processes.
pub(crate) struct RiskSets<'a> {
    ds: &'a Dataset,
    design: &'a Design,
    weights: &'a [f64],
    cause: u32,
}

impl<'a> RiskSets<'a> {
    pub fn new(ds: &'a Dataset, design: &'a Design, weights: &'a [f64], cause: u32) -> Self {
        RiskSets {
            ds,
            design,
            weights,
            cause,
        }
    }

    fn is_event(&self, i: usize) -> bool {
        self.ds.record(i).cause == self.cause && self.weights[i] > 0.0
    }

    pub fn event_count(&self) -> usize {
        (0..self.ds.n()).filter(|&i| self.is_event(i)).count()
    }

    /// Backward sweep over distinct times; calls `at_event` for each event with
    /// the current (shifted) risk-set sums.
    fn sweep<F>(&self, beta: &[f64], with_s2: bool, mut at_event: F)
    where
        F: FnMut(usize, f64, &Sums),
    {
        let q = self.design.q;
        let order = self.ds.time_order();
        let eta: Vec<f64> = (0..self.ds.n()).map(|i| dot(beta, self.design.row(i))).collect();
        let mut sums = Sums {
            shift: f64::NEG_INFINITY,
            s0: 0.0,
            s1: vec![0.0; q],
            s2: if with_s2 { vec![0.0; q * q] } else { Vec::new() },
        };
        let mut end = order.len();
        while end > 0 {
            let t = self.ds.record(order[end - 1]).time;
            let mut start = end - 1;
            while start > 0 && self.ds.record(order[start - 1]).time == t {
                start -= 1;
            }
            for &i in &order[start..end] {
                let w = self.weights[i];
                if w <= 0.0 {
                    continue;
                }
                if eta[i] > sums.shift {
                    let scale = (sums.shift - eta[i]).exp();
                    sums.s0 *= scale;
                    sums.s1.iter_mut().for_each(|v| *v *= scale);
                    sums.s2.iter_mut().for_each(|v| *v *= scale);
                    sums.shift = eta[i];
                }
                let e = w * (eta[i] - sums.shift).exp();
                let x = self.design.row(i);
                sums.s0 += e;
                for a in 0..q {
                    sums.s1[a] += e * x[a];
                }
                if with_s2 {
                    for a in 0..q {
                        let ea = e * x[a];
                        for b in 0..=a {
                            sums.s2[a * q + b] += ea * x[b];
                        }
                    }
                }
            }
            for &i in &order[start..end] {
                if self.is_event(i) {
                    at_event(i, eta[i], &sums);
                }
            }
            end = start;
        }
    }

    pub fn evaluate(&self, beta: &[f64]) -> PartialLikelihood {
        let q = self.design.q;
        let mut loglik = 0.0;
        let mut score = vec![0.0; q];
        let mut hessian = vec![0.0; q * q];
        let mut xbar = vec![0.0; q];
        self.sweep(beta, true, |i, eta_i, s| {
            let w = self.weights[i];
            let x = self.design.row(i);
            loglik += w * (eta_i - s.shift - s.s0.ln());
            for a in 0..q {
                xbar[a] = s.s1[a] / s.s0;
                score[a] += w * (x[a] - xbar[a]);
            }
            for a in 0..q {
                for b in 0..=a {
                    hessian[a * q + b] -= w * (s.s2[a * q + b] / s.s0 - xbar[a] * xbar[b]);
                }
            }
        });
        for a in 0..q {
            for b in 0..a {
                hessian[b * q + a] = hessian[a * q + b];
            }
        }
        PartialLikelihood {
            loglik,
            score,
            hessian,
        }
    }

    pub fn loglik(&self, beta: &[f64]) -> f64 {
        let mut loglik = 0.0;
        self.sweep(beta, false, |i, eta_i, s| {
            loglik += self.weights[i] * (eta_i - s.shift - s.s0.ln());
        });
        loglik
    }

    /// Event summaries in ascending time order.
    pub fn event_summaries(&self, beta: &[f64]) -> Vec<EventSummary> {
        let mut out = Vec::new();
        self.sweep(beta, false, |i, _, s| {
            out.push(EventSummary {
                subject: i,
                time: self.ds.record(i).time,
                weight: self.weights[i],
                log_s0: s.shift + s.s0.ln(),
                xbar: s.s1.iter().map(|v| v / s.s0).collect(),
            });
        });
        out.reverse();
        out
    }
}

struct Sums {
    shift: f64,
    s0: f64,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_weights(ds: &Dataset, weights: &[f64]) -> Result<()> {
    if weights.len() != ds.n() {
        return Err(Error::Domain(format!(
            "{} weights for {} records",
            weights.len(),
            ds.n()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain("weights must be finite and nonnegative".into()));
    }
    Ok(())
}

/// Weighted log partial likelihood, score and Hessian for one cause model.
pub fn partial_loglik(
    ds: &Dataset,
    model: &CauseModel,
    beta: &[f64],
    weights: &[f64],
) -> Result<PartialLikelihood> {
    model.validate_against(ds)?;
    check_weights(ds, weights)?;
    if beta.len() != model.dim() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("coefficient vector has wrong length or is not finite".into()));
    }
    let design = Design::new(ds, model);
    let rs = RiskSets::new(ds, &design, weights, model.cause);
    if rs.event_count() == 0 {
        return Err(Error::Domain(format!("no events of cause {}", model.cause)));
    }
    Ok(rs.evaluate(beta))
}

/// Breslow baseline cumulative hazard: one jump `w_i / Σ_{T_j ≥ T_i} w_j exp(β'x_j)`
/// per cause-`k` event (tied events merged into one jump).
pub fn breslow_baseline(
    ds: &Dataset,
    model: &CauseModel,
    beta: &[f64],
    weights: &[f64],
) -> Result<StepCumHazard> {
    model.validate_against(ds)?;
    check_weights(ds, weights)?;
    if beta.len() != model.dim() || beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("coefficient vector has wrong length or is not finite".into()));
    }
    let design = Design::new(ds, model);
    let rs = RiskSets::new(ds, &design, weights, model.cause);
    Ok(baseline_from_summaries(&rs.event_summaries(beta)))
}

pub(crate) fn baseline_from_summaries(events: &[EventSummary]) -> StepCumHazard {
    let mut jump_times: Vec<f64> = Vec::with_capacity(events.len());
    let mut jump_sizes: Vec<f64> = Vec::with_capacity(events.len());
    for e in events {
        let size = e.weight * (-e.log_s0).exp();
        if jump_times.last() == Some(&e.time) {
            *jump_sizes.last_mut().unwrap() += size;
        } else {
            jump_times.push(e.time);
            jump_sizes.push(size);
        }
    }
    StepCumHazard {
        jump_times,
        jump_sizes,
    }
}

/// Fits one cause-specific model from `β = 0` (fixed coefficients at their values).
pub fn fit_cause_specific(
    ds: &Dataset,
    model: &CauseModel,
    weights: &[f64],
    options: &SolverOptions,
) -> Result<CoxFit> {
    let mut init = vec![0.0; model.dim()];
    for (&p, &v) in &model.fixed {
        if p < init.len() {
            init[p] = v;
        }
    }
    fit_cause_specific_from(ds, model, weights, options, &init)
}

/// Fits one cause-specific model starting Newton–Raphson at `init`.
pub fn fit_cause_specific_from(
    ds: &Dataset,
    model: &CauseModel,
    weights: &[f64],
    options: &SolverOptions,
    init: &[f64],
) -> Result<CoxFit> {
    model.validate_against(ds)?;
    check_weights(ds, weights)?;
    let q = model.dim();
    if init.len() != q {
        return Err(Error::Domain("initial coefficient vector has wrong length".into()));
    }
    let design = Design::new(ds, model);
    let rs = RiskSets::new(ds, &design, weights, model.cause);
    let events = rs.event_count();
    if events < 2 {
        return Err(Error::Domain(format!(
            "cause {} has {events} event(s); at least 2 are needed",
            model.cause
        )));
    }
    let names = model.column_names(ds);
    let free = model.free_positions();
    let mut beta = init.to_vec();
    for (&p, &v) in &model.fixed {
        beta[p] = v;
    }

    let floor = information_floor(ds, &design, weights, &rs, &free);
    let mut pl = rs.evaluate(&beta);
    let mut iterations = 0;
    let mut converged = free.is_empty() || is_stationary(&pl, &free, q, &beta, options.tol, &floor);

    while !converged {
        if iterations >= options.max_iter {
            return Err(Error::NonConvergence {
                cause: model.cause,
                reason: format!(
                    "no convergence after {} iterations (‖score‖∞ = {:.3e})",
                    options.max_iter,
                    score_norm(&pl.score, &free)
                ),
            });
        }
        iterations += 1;
        let step = match newton_step(&pl, &free, q) {
            Some(step) => step,
            None if iterations > 1 && below_floor(&pl, &free, q, &floor) => {
                return Err(Error::NonConvergence {
                    cause: model.cause,
                    reason: "the partial likelihood has flattened out; the coefficients appear to diverge".into(),
                })
            }
            None => return Err(singular_error(&pl, &free, q, model, &names)),
        };
        let mut scale = 1.0;
        let mut halvings = 0;
        let mut candidate;
        let mut cand_ll;
        loop {
            candidate = beta.clone();
            for (k, &p) in free.iter().enumerate() {
                candidate[p] += scale * step[k];
            }
            cand_ll = rs.loglik(&candidate);
            let slack = 1e-12 * (1.0 + pl.loglik.abs());
            if cand_ll.is_finite() && cand_ll >= pl.loglik - slack {
                break;
            }
            if halvings >= options.max_halvings {
                return Err(Error::NonConvergence {
                    cause: model.cause,
                    reason: format!("step halving failed after {halvings} halvings"),
                });
            }
            halvings += 1;
            scale *= 0.5;
        }
        beta = candidate;
        let max_abs = beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        if max_abs > options.divergence_bound {
            return Err(Error::NonConvergence {
                cause: model.cause,
                reason: format!(
                    "coefficients diverge (‖β‖∞ = {max_abs:.2} > {}); the partial likelihood appears monotone",
                    options.divergence_bound
                ),
            });
        }
        pl = rs.evaluate(&beta);
        converged = is_stationary(&pl, &free, q, &beta, options.tol, &floor);
    }

    // One more Newton step once inside the tolerance: quadratic convergence takes
    // the score to rounding level, which finite-difference refits rely on.
    if !free.is_empty() {
        if let Some(step) = newton_step(&pl, &free, q) {
            let mut polished = beta.clone();
            for (k, &p) in free.iter().enumerate() {
                polished[p] += step[k];
            }
            let ppl = rs.evaluate(&polished);
            if ppl.loglik.is_finite() && score_norm(&ppl.score, &free) < score_norm(&pl.score, &free) {
                beta = polished;
                pl = ppl;
            }
        }
    }

    if !free.is_empty() && newton_step(&pl, &free, q).is_none() {
        return Err(singular_error(&pl, &free, q, model, &names));
    }

    let baseline = baseline_from_summaries(&rs.event_summaries(&beta));
    let information_matrix = (0..q)
        .map(|a| (0..q).map(|b| -pl.hessian[a * q + b]).collect())
        .collect();
    Ok(CoxFit {
        cause: model.cause,
        model: model.clone(),
        column_names: names,
        score_norm_at_solution: score_norm(&pl.score, &free),
        beta,
        baseline,
        loglik: pl.loglik,
        iterations,
        converged: true,
        information_matrix,
        num_covariates: ds.num_covariates(),
    })
}

/// Builds a fit with coefficients held at `beta` (no optimisation); the
/// baseline is the Breslow estimator at `beta`.
pub fn fit_at_coefficients(
    ds: &Dataset,
    model: &CauseModel,
    weights: &[f64],
    beta: &[f64],
) -> Result<CoxFit> {
    let pl = partial_loglik(ds, model, beta, weights)?;
    let baseline = breslow_baseline(ds, model, beta, weights)?;
    let q = model.dim();
    let free = model.free_positions();
    Ok(CoxFit {
        cause: model.cause,
        model: model.clone(),
        column_names: model.column_names(ds),
        beta: beta.to_vec(),
        baseline,
        loglik: pl.loglik,
        score_norm_at_solution: score_norm(&pl.score, &free),
        iterations: 0,
        converged: true,
        information_matrix: (0..q)
            .map(|a| (0..q).map(|b| -pl.hessian[a * q + b]).collect())
            .collect(),
        num_covariates: ds.num_covariates(),
    })
}

/// Score within tolerance and a Newton step that has actually shrunk. On a
/// monotone likelihood the score decays like `exp(β)` while the step stays O(1).
/// Per free coefficient, the level below which the computed information is
/// rounding noise of the uncentred risk-set sums.
fn information_floor(ds: &Dataset, design: &Design, weights: &[f64], rs: &RiskSets<'_>, free: &[usize]) -> Vec<f64> {
    let event_weight: f64 = (0..ds.n()).filter(|&i| rs.is_event(i)).map(|i| weights[i]).sum();
    free.iter()
        .map(|&p| {
            let max_sq = (0..ds.n()).map(|i| design.row(i)[p].powi(2)).fold(0.0, f64::max);
            1e-10 * event_weight * max_sq
        })
        .collect()
}

fn below_floor(pl: &PartialLikelihood, free: &[usize], q: usize, floor: &[f64]) -> bool {
    free.iter().zip(floor).any(|(&p, &f)| -pl.hessian[p * q + p] <= f)
}

fn is_stationary(pl: &PartialLikelihood, free: &[usize], q: usize, beta: &[f64], tol: f64, floor: &[f64]) -> bool {
    if score_norm(&pl.score, free) > tol {
        return false;
    }
    // A small score with a vanishing information is a likelihood flattening out
    // towards infinity, not a maximum.
    if below_floor(pl, free, q, floor) {
        return false;
    }
    let scale = beta.iter().fold(1.0f64, |m, b| m.max(b.abs()));
    match newton_step(pl, free, q) {
        Some(step) => step.iter().all(|s| s.abs() <= 1e-6 * scale),
        None => true,
    }
}

fn score_norm(score: &[f64], free: &[usize]) -> f64 {
    free.iter().fold(0.0f64, |m, &p| m.max(score[p].abs()))
}

fn free_information(pl: &PartialLikelihood, free: &[usize], q: usize) -> DMatrix<f64> {
    DMatrix::from_fn(free.len(), free.len(), |a, b| -pl.hessian[free[a] * q + free[b]])
}

/// Solves `I_ff · step = score_f`; `None` when the information is not positive definite.
fn newton_step(pl: &PartialLikelihood, free: &[usize], q: usize) -> Option<Vec<f64>> {
    let info = free_information(pl, free, q);
    let chol = info.cholesky()?;
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&p| pl.score[p]));
    let step = chol.solve(&rhs);
    if step.iter().all(|s| s.is_finite()) {
        Some(step.iter().copied().collect())
    } else {
        None
    }
}

/// Inverse of the free block of the information matrix, embedded in a `q × q`
/// matrix with zeros on fixed rows and columns.
pub(crate) fn free_inverse_information(fit: &CoxFit) -> Result<Vec<f64>> {
    let q = fit.model.dim();
    let free = fit.model.free_positions();
    let info = DMatrix::from_fn(free.len(), free.len(), |a, b| {
        fit.information_matrix[free[a]][free[b]]
    });
    let inv = info
        .cholesky()
        .ok_or_else(|| Error::SingularInformation {
            cause: fit.cause,
            column: fit.column_names.first().cloned().unwrap_or_default(),
        })?
        .inverse();
    let mut out = vec![0.0; q * q];
    for (a, &pa) in free.iter().enumerate() {
        for (b, &pb) in free.iter().enumerate() {
            out[pa * q + pb] = inv[(a, b)];
        }
    }
    Ok(out)
}

fn singular_error(
    pl: &PartialLikelihood,
    free: &[usize],
    q: usize,
    model: &CauseModel,
    names: &[String],
) -> Error {
    let diag: Vec<f64> = free.iter().map(|&p| -pl.hessian[p * q + p]).collect();
    let scale = diag.iter().fold(1.0f64, |m, d| m.max(d.abs()));
    let culprit = match diag.iter().position(|&d| d <= 1e-12 * scale) {
        Some(k) => free[k],
        None => {
            // first column whose leading block loses positive definiteness
            let info = free_information(pl, free, q);
            let k = (1..=free.len())
                .find(|&m| info.view((0, 0), (m, m)).into_owned().cholesky().is_none())
                .unwrap_or(free.len());
            free[k.saturating_sub(1)]
        }
    };
    Error::SingularInformation {
        cause: model.cause,
        column: names[culprit].clone(),
    }
}
