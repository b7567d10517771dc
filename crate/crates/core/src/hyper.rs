//! Conjugate updates for the edge-inclusion probability `p0` and the slab
//! variance `sigma0^2`.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `p0 ~ Beta(a, b)`, `sigma0^-2 ~ Gamma(c, d)` (shape, rate) and the
/// fixed prior standard deviation of the biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperPriors {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub sigma_b: f64,
}

impl Default for HyperPriors {
    fn default() -> Self {
        Self { a: 5.0, b: 5.0, c: 5.0, d: 5.0, sigma_b: 10.0 }
    }
}

impl HyperPriors {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d), ("sigma_b", self.sigma_b)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("hyper prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperState {
    pub p0: f64,
    pub sigma0_sq: f64,
    /// When set, `p0` is pinned to this value and never resampled.
    pub fixed_p0: Option<f64>,
}

impl HyperState {
    pub fn new(p0: f64, sigma0_sq: f64, fixed_p0: Option<f64>) -> Result<Self> {
        let p0 = fixed_p0.unwrap_or(p0);
        if !(p0 > 0.0 && p0 < 1.0) {
            return Err(Error::Config(format!("p0 must lie in (0, 1), got {p0}")));
        }
        if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
            return Err(Error::Config(format!("sigma0^2 must be positive, got {sigma0_sq}")));
        }
        Ok(Self { p0, sigma0_sq, fixed_p0 })
    }

    /// One Gibbs pass over `(p0, sigma0^2)` given the current structure.
    pub fn update<R: Rng + ?Sized>(&mut self, active: &[bool], values: &[f64], priors: &HyperPriors, rng: &mut R) {
        self.p0 = match self.fixed_p0 {
            Some(p) => p,
            None => sample_p0(active, priors, rng),
        };
        self.sigma0_sq = sample_sigma0(active, values, priors, rng);
    }
}

/// `p0 | Y ~ Beta(a + #active, b + #inactive)` over candidate edges.
pub fn sample_p0<R: Rng + ?Sized>(active: &[bool], priors: &HyperPriors, rng: &mut R) -> f64 {
    let on = active.iter().filter(|&&y| y).count() as f64;
    let off = active.len() as f64 - on;
    let draw = Beta::new(priors.a + on, priors.b + off).expect("beta parameters are positive").sample(rng);
    // keep strictly inside (0, 1) for the prior-odds logs
    draw.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}

/// Draws `sigma0^-2 | Y, A ~ Gamma(c + #active/2, rate = d + sum_active A^2 / 2)`
/// and returns its reciprocal.
pub fn sample_sigma0<R: Rng + ?Sized>(active: &[bool], values: &[f64], priors: &HyperPriors, rng: &mut R) -> f64 {
    let (count, ss) = active
        .iter()
        .zip(values)
        .filter(|(&y, _)| y)
        .fold((0.0, 0.0), |(c, s), (_, a)| (c + 1.0, s + a * a));
    let shape = priors.c + 0.5 * count;
    let rate = priors.d + 0.5 * ss;
    let precision = Gamma::new(shape, 1.0 / rate).expect("gamma parameters are positive").sample(rng);
    1.0 / precision.max(f64::MIN_POSITIVE)
}
