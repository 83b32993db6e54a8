//! First-order expansion of `ÂTE(t) − ATE(t)` as a sum of per-subject terms.
//!
//! Each cause contributes, for subject `i`,
//!
//! ```text
//! W [ ∫_0^t (P_k(u) − Q_k(t)) dM_i(u) / S0_k(u) + Ω_k(t)' I_k⁻¹ ∫ (x_i − x̄_k(u)) dM_i(u) ]
//! ```
//!
//! with `P_k`, `Q_k`, `Ω_k` the sample averages of the counterfactual
//! sensitivities of `F̂_1(t | 1, Z) − F̂_1(t | 0, Z)` to the cause-`k` hazard.
//! `M_i = N_i − ∫ Y_i r_i dΛ̂_0k` is split into its jump (`dN_i`) and
//! compensator parts: the jump part alone drives the wild bootstrap, the
//! difference plus the centred contrast `g_i(t) − ÂTE(t)` is the influence
//! function.

use rayon::prelude::*;

use crate::cif::{subject_contrasts, weighted_column_means, CompetingRisksFit, TimeGrid};
use crate::cox::{dot, free_inverse_information, CoxFit, Design, EventSummary, RiskSets};
use crate::data::Dataset;
use crate::error::{Error, Result};

const CHUNK: usize = 32;

/// Per-subject expansion terms on a grid, `n × G` row-major.
#[derive(Debug, Clone)]
pub(crate) struct Linearization {
    pub n: usize,
    pub g: usize,
    /// `W Σ_k ∫ … dN_i`.
    pub jump: Vec<f64>,
    /// `W Σ_k ∫ … Y_i r_i dΛ̂_0k`.
    pub compensator: Vec<f64>,
    pub contrasts: Vec<Vec<f64>>,
    pub ate: Vec<f64>,
}

impl Linearization {
    /// Closed-form influence values, `n × G` row-major.
    pub fn influence(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.g];
        for i in 0..self.n {
            for t in 0..self.g {
                let k = i * self.g + t;
                out[k] = self.jump[k] - self.compensator[k] + self.contrasts[i][t] - self.ate[t];
            }
        }
        out
    }
}

struct CauseTerms {
    q: usize,
    events: Vec<EventSummary>,
    dl0: Vec<f64>,
    inv_s0: Vec<f64>,
    /// Events at or before the grid horizon.
    n_h: usize,
    /// Timeline position of each of the first `n_h` events.
    tl_index: Vec<usize>,
    /// Number of events at or before each grid point.
    count_at: Vec<usize>,
    lambda0: Vec<f64>,
    /// `Σ_{u_e ≤ t} x̄(u_e) ΔΛ_0(u_e)`, `G × q`.
    xbar_cum: Vec<f64>,
    inv_info: Vec<f64>,
    /// `P(u_e; t)`, `n_h × G`.
    p: Vec<f64>,
    q_t: Vec<f64>,
    omega: Vec<f64>,
}

struct Accum {
    p: Vec<Vec<f64>>,
    /// Contributions leaving `P(u_e; ·)` from grid index `t` on, `n_h × G`.
    dropped: Vec<Vec<f64>>,
    q_t: Vec<Vec<f64>>,
    omega: Vec<Vec<f64>>,
}

impl Accum {
    fn zeros(causes: &[CauseTerms], g: usize) -> Self {
        Accum {
            p: causes.iter().map(|c| vec![0.0; c.n_h]).collect(),
            dropped: causes.iter().map(|c| vec![0.0; c.n_h * g]).collect(),
            q_t: causes.iter().map(|_| vec![0.0; g]).collect(),
            omega: causes.iter().map(|c| vec![0.0; g * c.q]).collect(),
        }
    }

    fn add(&mut self, other: &Accum) {
        for (a, b) in self
            .p
            .iter_mut()
            .chain(self.dropped.iter_mut())
            .chain(self.q_t.iter_mut())
            .chain(self.omega.iter_mut())
            .zip(
                other
                    .p
                    .iter()
                    .chain(&other.dropped)
                    .chain(&other.q_t)
                    .chain(&other.omega),
            )
        {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

fn cause_terms(
    fit: &CoxFit,
    ds: &Dataset,
    weights: &[f64],
    grid: &[f64],
    timeline_times: &[f64],
) -> Result<CauseTerms> {
    let design = Design::new(ds, &fit.model);
    let q = design.q;
    let events = RiskSets::new(ds, &design, weights, fit.cause).event_summaries(&fit.beta);
    let inv_s0: Vec<f64> = events.iter().map(|e| (-e.log_s0).exp()).collect();
    let dl0: Vec<f64> = events.iter().zip(&inv_s0).map(|(e, s)| e.weight * s).collect();
    let horizon = grid.last().copied().unwrap_or(0.0);
    let n_h = events.partition_point(|e| e.time <= horizon);
    let tl_index = events[..n_h]
        .iter()
        .map(|e| {
            timeline_times
                .binary_search_by(|s| s.total_cmp(&e.time))
                .map_err(|_| Error::Domain("event time missing from the timeline".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let count_at: Vec<usize> = grid
        .iter()
        .map(|&t| events[..n_h].partition_point(|e| e.time <= t))
        .collect();
    let mut lambda0 = vec![0.0; grid.len()];
    let mut xbar_cum = vec![0.0; grid.len() * q];
    let mut run = 0.0;
    let mut run_x = vec![0.0; q];
    let mut e = 0;
    for (g, &cnt) in count_at.iter().enumerate() {
        while e < cnt {
            run += dl0[e];
            for (r, xb) in run_x.iter_mut().zip(&events[e].xbar) {
                *r += xb * dl0[e];
            }
            e += 1;
        }
        lambda0[g] = run;
        xbar_cum[g * q..(g + 1) * q].copy_from_slice(&run_x);
    }
    let inv_info = free_inverse_information(fit)?;
    Ok(CauseTerms {
        q,
        events,
        dl0,
        inv_s0,
        n_h,
        tl_index,
        count_at,
        lambda0,
        xbar_cum,
        inv_info,
        p: Vec::new(),
        q_t: Vec::new(),
        omega: Vec::new(),
    })
}

/// Expansion of the g-formula ATE at `fits` (fitted to `ds` with its own weights).
pub(crate) fn linearize(fits: &CompetingRisksFit, ds: &Dataset, grid: &TimeGrid) -> Result<Linearization> {
    let weights = ds.weights();
    let n = ds.n();
    let g = grid.len();
    let points = grid.points();
    let horizon = grid.max().unwrap_or(0.0);
    let total: f64 = weights.iter().sum();
    let tl = fits.timeline(horizon);
    let mut causes = fits
        .fits
        .iter()
        .map(|f| cause_terms(f, ds, &weights, points, &tl.times))
        .collect::<Result<Vec<_>>>()?;
    let grid_pos: Vec<usize> = points
        .iter()
        .map(|&t| tl.times.partition_point(|&s| s <= t))
        .collect();

    // Sample averages P, Q and the profile part of Ω, over (subject, arm).
    // A profile whose raw incidence exceeds 1 is clamped, hence locally
    // constant, from that grid point on and drops out of the averages there.
    let chunks: Vec<Accum> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut acc = Accum::zeros(&causes, g);
            let steps = tl.times.len();
            let mut surv = vec![0.0; steps];
            let mut cif = vec![0.0; steps];
            let mut f1 = vec![0.0; g];
            let mut x = Vec::new();
            for j in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                let pi = weights[j] / total;
                if pi == 0.0 {
                    continue;
                }
                let z = &ds.record(j).covariates;
                for (a, sgn) in [(1.0, 1.0), (0.0, -1.0)] {
                    let rr = fits.relative_risks(a, z);
                    tl.walk(&rr, |s, sv, c| {
                        surv[s] = sv;
                        cif[s] = c;
                    });
                    for (f, &pos) in f1.iter_mut().zip(&grid_pos) {
                        *f = if pos == 0 { 0.0 } else { cif[pos - 1] };
                    }
                    let clamp_from = f1.iter().position(|&v| v > 1.0).unwrap_or(g);
                    // Every term below depends on the incidence only through
                    // differences, so each profile is measured from its last
                    // unclamped value. A profile with a huge relative risk
                    // saturates and then contributes exact zeros instead of
                    // cancelling against itself in P − Q.
                    let shift = if clamp_from > 0 { f1[clamp_from - 1] } else { 0.0 };
                    for (c, ct) in causes.iter().enumerate() {
                        let coef = pi * sgn * rr[c];
                        fits.fits[c].model.row_into(a, z, &mut x);
                        let p = &mut acc.p[c];
                        let dropped = &mut acc.dropped[c];
                        let q_t = &mut acc.q_t[c];
                        let omega = &mut acc.omega[c];
                        let mut c1 = 0.0;
                        let mut e = 0;
                        for t in 0..g {
                            while e < ct.count_at[t] {
                                let s = ct.tl_index[e];
                                let h = if c == 0 { surv[s] } else { 0.0 } + cif[s] - shift;
                                p[e] += coef * h;
                                if clamp_from < g {
                                    dropped[e * g + clamp_from] += coef * h;
                                }
                                c1 += h * ct.dl0[e];
                                e += 1;
                            }
                            if t >= clamp_from {
                                continue;
                            }
                            q_t[t] += coef * (f1[t] - shift);
                            let scal = coef * (c1 - (f1[t] - shift) * ct.lambda0[t]);
                            let row = &mut omega[t * ct.q..(t + 1) * ct.q];
                            for (o, xv) in row.iter_mut().zip(&x) {
                                *o += scal * xv;
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = Accum::zeros(&causes, g);
    for c in &chunks {
        acc.add(c);
    }
    for (c, ct) in causes.iter_mut().enumerate() {
        let full = &acc.p[c];
        let dropped = &acc.dropped[c];
        ct.p = vec![0.0; ct.n_h * g];
        for e in 0..ct.n_h {
            let mut gone = 0.0;
            for t in 0..g {
                gone += dropped[e * g + t];
                ct.p[e * g + t] = full[e] - gone;
            }
        }
        ct.q_t = std::mem::take(&mut acc.q_t[c]);
        ct.omega = std::mem::take(&mut acc.omega[c]);
        // Ω(t) += Q(t) X̄(t) − Σ_{u_e ≤ t} P(u_e; t) ΔΛ_0(u_e) x̄(u_e)
        let q = ct.q;
        let mut run = vec![0.0; q];
        for t in 0..g {
            run.iter_mut().for_each(|r| *r = 0.0);
            for e in 0..ct.count_at[t] {
                let w = ct.p[e * g + t] * ct.dl0[e];
                for (r, xb) in run.iter_mut().zip(&ct.events[e].xbar) {
                    *r += w * xb;
                }
            }
            for a in 0..q {
                ct.omega[t * q + a] += ct.q_t[t] * ct.xbar_cum[t * q + a] - run[a];
            }
        }
    }

    let (contrasts, _) = subject_contrasts(fits, ds, grid);
    let ate = weighted_column_means(&contrasts, &weights, g);

    let mut jump = vec![0.0; n * g];
    let mut compensator = vec![0.0; n * g];
    for (c, ct) in causes.iter().enumerate() {
        let fit = &fits.fits[c];
        let design = Design::new(ds, &fit.model);
        let q = ct.q;
        // Ω(t)' I⁻¹, G × q
        let mut omega_inv = vec![0.0; g * q];
        for t in 0..g {
            for b in 0..q {
                omega_inv[t * q + b] = (0..q).map(|a| ct.omega[t * q + a] * ct.inv_info[a * q + b]).sum();
            }
        }
        // cum_p[m·G + t] = Σ_{e < m} P(u_e; t) ΔΛ_0(u_e) / S0(u_e)
        let mut cum_p = vec![0.0; (ct.n_h + 1) * g];
        let mut cum_b = vec![0.0; ct.n_h + 1];
        for e in 0..ct.n_h {
            let f = ct.dl0[e] * ct.inv_s0[e];
            for t in 0..g {
                cum_p[(e + 1) * g + t] = cum_p[e * g + t] + ct.p[e * g + t] * f;
            }
            cum_b[e + 1] = cum_b[e] + f;
        }
        // Full-range cumulative Λ_0 and X̄ for the score compensator.
        let m_all = ct.events.len();
        let mut lam_all = vec![0.0; m_all + 1];
        let mut xbar_all = vec![0.0; (m_all + 1) * q];
        for e in 0..m_all {
            lam_all[e + 1] = lam_all[e] + ct.dl0[e];
            for a in 0..q {
                xbar_all[(e + 1) * q + a] = xbar_all[e * q + a] + ct.events[e].xbar[a] * ct.dl0[e];
            }
        }
        let mut event_of = vec![None; n];
        for (e, ev) in ct.events.iter().enumerate() {
            event_of[ev.subject] = Some(e);
        }
        jump.par_chunks_mut(g.max(1))
            .zip(compensator.par_chunks_mut(g.max(1)))
            .enumerate()
            .for_each(|(i, (jrow, crow))| {
                if g == 0 {
                    return;
                }
                let xi = design.row(i);
                let ti = ds.record(i).time;
                let ri = dot(&fit.beta, xi).exp();
                let m_i = ct.events.partition_point(|e| e.time <= ti);
                let m_h = m_i.min(ct.n_h);
                let s_y: Vec<f64> = (0..q)
                    .map(|a| ri * (xi[a] * lam_all[m_i] - xbar_all[m_i * q + a]))
                    .collect();
                for t in 0..g {
                    let m = ct.count_at[t].min(m_h);
                    let oi = &omega_inv[t * q..(t + 1) * q];
                    crow[t] += total * (ri * (cum_p[m * g + t] - ct.q_t[t] * cum_b[m]) + dot(oi, &s_y));
                }
                if let Some(e) = event_of[i] {
                    let s_n: Vec<f64> = (0..q).map(|a| xi[a] - ct.events[e].xbar[a]).collect();
                    for t in 0..g {
                        let oi = &omega_inv[t * q..(t + 1) * q];
                        let mut v = dot(oi, &s_n);
                        if e < ct.count_at[t] {
                            v += (ct.p[e * g + t] - ct.q_t[t]) * ct.inv_s0[e];
                        }
                        jrow[t] += total * v;
                    }
                }
            });
    }
    Ok(Linearization {
        n,
        g,
        jump,
        compensator,
        contrasts,
        ate,
    })
}
