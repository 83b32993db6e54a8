use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Wild-bootstrap multiplier law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierScheme {
    /// i.i.d. `N(0, 1)`.
    StandardNormal,
    /// i.i.d. `Poisson(1) − 1`.
    CenteredPoisson,
    /// `Binomial(Y(T_i), 1 / Y(T_i)) − 1` with `Y(T_i)` the risk-set size at the
    /// subject's own observed time (the weird bootstrap).
    WeirdBinomial,
}

impl MultiplierScheme {
    pub const ALL: [MultiplierScheme; 3] = [
        MultiplierScheme::StandardNormal,
        MultiplierScheme::CenteredPoisson,
        MultiplierScheme::WeirdBinomial,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            MultiplierScheme::StandardNormal => "normal",
            MultiplierScheme::CenteredPoisson => "poisson",
            MultiplierScheme::WeirdBinomial => "weird",
        }
    }
}

/// Draws multiplier vectors for a fixed dataset.
#[derive(Debug, Clone)]
pub struct MultiplierSampler {
    scheme: MultiplierScheme,
    n: usize,
    poisson: Poisson<f64>,
    /// `None` where `Y(T_i) = 1`: the multiplier is then identically 0.
    binomials: Vec<Option<Binomial>>,
}

impl MultiplierSampler {
    pub fn new(scheme: MultiplierScheme, ds: &Dataset) -> Result<Self> {
        Self::with_risk_sizes(scheme, &ds.own_risk_set_sizes())
    }

    pub fn with_risk_sizes(scheme: MultiplierScheme, risk_sizes: &[usize]) -> Result<Self> {
        let binomials = if scheme == MultiplierScheme::WeirdBinomial {
            risk_sizes
                .iter()
                .map(|&y| match y {
                    0 => Err(Error::Domain("weird bootstrap needs Y(T_i) >= 1".into())),
                    1 => Ok(None),
                    y => Binomial::new(y as u64, 1.0 / y as f64)
                        .map(Some)
                        .map_err(|e| Error::Domain(e.to_string())),
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(MultiplierSampler {
            scheme,
            n: risk_sizes.len(),
            poisson: Poisson::new(1.0).expect("unit rate"),
            binomials,
        })
    }

    pub fn scheme(&self) -> MultiplierScheme {
        self.scheme
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.sample_into(rng, &mut out);
        out
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.scheme {
            MultiplierScheme::StandardNormal => {
                for g in out.iter_mut() {
                    *g = StandardNormal.sample(rng);
                }
            }
            MultiplierScheme::CenteredPoisson => {
                for g in out.iter_mut() {
                    *g = self.poisson.sample(rng) - 1.0;
                }
            }
            MultiplierScheme::WeirdBinomial => {
                for (g, b) in out.iter_mut().zip(&self.binomials) {
                    *g = match b {
                        Some(b) => b.sample(rng) as f64 - 1.0,
                        None => 0.0,
                    };
                }
            }
        }
    }
}

/// One vector of `n` multipliers for `ds` under `scheme`.
pub fn gen_multipliers<R: Rng + ?Sized>(
    scheme: MultiplierScheme,
    ds: &Dataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    Ok(MultiplierSampler::new(scheme, ds)?.sample(rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (m, v)
    }

    #[test]
    fn poisson_support_is_shifted_naturals() {
        let s = MultiplierSampler::with_risk_sizes(MultiplierScheme::CenteredPoisson, &[1; 1000]).unwrap();
        let g = s.sample(&mut stream(1, "t", &[]));
        assert!(g.iter().all(|&x| x >= -1.0 && x.fract() == 0.0));
        let (m, _) = moments(&g);
        assert!(m.abs() < 4.0 / (1000f64).sqrt());
    }

    #[test]
    fn weird_multiplier_is_zero_for_singleton_risk_set() {
        let s = MultiplierSampler::with_risk_sizes(MultiplierScheme::WeirdBinomial, &[1, 5, 1]).unwrap();
        let mut rng = stream(2, "t", &[]);
        for _ in 0..200 {
            let g = s.sample(&mut rng);
            assert_eq!(g[0], 0.0);
            assert_eq!(g[2], 0.0);
            assert!(g[1] >= -1.0 && g[1] <= 4.0);
        }
    }

    #[test]
    fn zero_risk_set_is_rejected() {
        assert!(MultiplierSampler::with_risk_sizes(MultiplierScheme::WeirdBinomial, &[0]).is_err());
    }
}
