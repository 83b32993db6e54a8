//! Naive reference implementations used as test oracles. They favour the
//! textbook formula over speed and share no code with the library.

#![allow(dead_code)]

use ate_core::{Dataset, SubjectRecord};
use rand::Rng;
use rand_distr::StandardNormal;

/// Random dataset with continuous times, causes in `0..=k` and `p` normal covariates.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize, p: usize, k: u32) -> Dataset {
    let recs = (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let t = -rng.random::<f64>().ln() + 1e-6;
            SubjectRecord::new(t, rng.random_range(0..=k), rng.random_bool(0.5), z)
        })
        .collect();
    let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
    Dataset::new(recs, k, names).unwrap()
}

/// `Σ_{i: D_i = cause} w_i [η_i − log Σ_{j: T_j ≥ T_i} w_j exp(η_j)]` with
/// `η = β'x` and `x` built by `row`.
pub fn loglik<F: Fn(&SubjectRecord) -> Vec<f64>>(ds: &Dataset, cause: u32, beta: &[f64], row: F) -> f64 {
    let eta = |r: &SubjectRecord| row(r).iter().zip(beta).map(|(x, b)| x * b).sum::<f64>();
    let mut ll = 0.0;
    for ri in ds.records() {
        if ri.cause != cause {
            continue;
        }
        let denom: f64 = ds
            .records()
            .iter()
            .filter(|rj| rj.time >= ri.time)
            .map(|rj| rj.weight * eta(rj).exp())
            .sum();
        ll += ri.weight * (eta(ri) - denom.ln());
    }
    ll
}

/// Maximises a concave `f` on `[-bound, bound]^dim` by grid search followed by
/// successively finer pattern searches.
pub fn grid_argmax<F: Fn(&[f64]) -> f64>(f: F, dim: usize, bound: f64) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_val = f(&best);
    let mut step = bound / 20.0;
    let mut centre = best.clone();
    let mut radius = 20;
    while step > 1e-9 {
        let mut idx = vec![-radius; dim];
        loop {
            let cand: Vec<f64> = centre
                .iter()
                .zip(&idx)
                .map(|(c, &i)| (c + i as f64 * step).clamp(-bound, bound))
                .collect();
            let v = f(&cand);
            if v > best_val {
                best_val = v;
                best = cand;
            }
            let mut d = 0;
            while d < dim {
                idx[d] += 1;
                if idx[d] <= radius {
                    break;
                }
                idx[d] = -radius;
                d += 1;
            }
            if d == dim {
                break;
            }
        }
        centre = best.clone();
        step /= 4.0;
        radius = 6;
    }
    best
}

/// Cause-1 incidence for arm `a` under treatment-only cause-specific models
/// with coefficients `beta[k]`: each arm's hazard increments are
/// `exp(β_k a) d_k(s) / Σ_{j ∈ R(s)} exp(β_k A_j)`, combined by
/// `Σ_{s ≤ t} exp(−Σ_k Λ_k(s− | a)) dΛ_1(s | a)` and capped at 1.
pub fn arm_cif(ds: &Dataset, beta: &[f64], a: bool, grid: &[f64]) -> Vec<f64> {
    let arm = if a { 1.0 } else { 0.0 };
    let mut times: Vec<f64> = ds.records().iter().filter(|r| r.cause > 0).map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let k = beta.len();
    let mut cum = vec![0.0; k];
    let mut f1 = 0.0;
    let mut out = Vec::with_capacity(grid.len());
    let mut next = 0;
    for &t in grid {
        while next < times.len() && times[next] <= t {
            let s = times[next];
            let total_before: f64 = cum.iter().sum();
            for c in 0..k {
                let cause = c as u32 + 1;
                let d: f64 = ds
                    .records()
                    .iter()
                    .filter(|r| r.time == s && r.cause == cause)
                    .map(|r| r.weight)
                    .sum();
                if d == 0.0 {
                    continue;
                }
                let risk: f64 = ds
                    .records()
                    .iter()
                    .filter(|r| r.time >= s)
                    .map(|r| r.weight * (beta[c] * r.treatment()).exp())
                    .sum();
                let jump = (beta[c] * arm).exp() * d / risk;
                if c == 0 {
                    f1 += (-total_before).exp() * jump;
                }
                cum[c] += jump;
            }
            next += 1;
        }
        out.push(f1.min(1.0));
    }
    out
}
