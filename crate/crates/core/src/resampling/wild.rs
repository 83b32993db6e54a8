use rayon::prelude::*;

use super::linearization::linearize;
use super::{Method, MultiplierSampler, MultiplierScheme, ResampleEnsemble};
use crate::cif::{CompetingRisksFit, TimeGrid};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::stream;

/// Counting-process contributions `ĉ_i(t) = Σ_k ĉ_ki(t)` of every subject.
/// Rows of subjects without an event are identically zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WildContributions {
    pub grid: TimeGrid,
    /// `n × |grid|`, row-major.
    values: Vec<f64>,
    n: usize,
}

impl WildContributions {
    pub fn new(fits: &CompetingRisksFit, ds: &Dataset, grid: &TimeGrid) -> Result<Self> {
        let lin = linearize(fits, ds, grid)?;
        Ok(WildContributions {
            grid: grid.clone(),
            values: lin.jump,
            n: lin.n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let g = self.grid.len();
        &self.values[i * g..(i + 1) * g]
    }

    /// `Û_n(t) = n^{-1/2} Σ_i ĉ_i(t) G_i` for one multiplier vector.
    pub fn draw(&self, multipliers: &[f64]) -> Result<Vec<f64>> {
        if multipliers.len() != self.n {
            return Err(Error::Domain(format!(
                "{} multipliers for {} subjects",
                multipliers.len(),
                self.n
            )));
        }
        let g = self.grid.len();
        let scale = 1.0 / (self.n as f64).sqrt();
        let mut out = vec![0.0; g];
        for (i, &m) in multipliers.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(self.row(i)) {
                *o += c * m;
            }
        }
        out.iter_mut().for_each(|o| *o *= scale);
        Ok(out)
    }
}

/// Wild-bootstrap ensemble of `B` draws of `Û_n` under `scheme`.
pub fn wild_ensemble(
    fits: &CompetingRisksFit,
    ds: &Dataset,
    grid: &TimeGrid,
    b: usize,
    scheme: MultiplierScheme,
    seed: u64,
) -> Result<ResampleEnsemble> {
    if b < 2 {
        return Err(Error::Domain(format!("the wild bootstrap needs B >= 2 draws, got {b}")));
    }
    let contrib = WildContributions::new(fits, ds, grid)?;
    wild_ensemble_from(&contrib, ds, b, scheme, seed)
}

/// Wild-bootstrap ensemble from precomputed contributions, so several
/// multiplier schemes can share one linearization.
pub fn wild_ensemble_from(
    contrib: &WildContributions,
    ds: &Dataset,
    b: usize,
    scheme: MultiplierScheme,
    seed: u64,
) -> Result<ResampleEnsemble> {
    if b < 2 {
        return Err(Error::Domain(format!("the wild bootstrap needs B >= 2 draws, got {b}")));
    }
    if contrib.n() != ds.n() {
        return Err(Error::Domain("contributions and dataset differ in size".into()));
    }
    let sampler = MultiplierSampler::new(scheme, ds)?;
    let draws = (0..b)
        .into_par_iter()
        .map(|r| {
            let g = sampler.sample(&mut stream(seed, scheme.tag(), &[r as u64]));
            contrib.draw(&g)
        })
        .collect::<Result<Vec<_>>>()?;
    ResampleEnsemble::from_draws(Method::Wild(scheme), contrib.grid.clone(), draws, ds.n())
}
