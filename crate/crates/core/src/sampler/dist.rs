//! Sampling primitives: conditionals in closed form, the Gumbel-max
//! categorical draw and the univariate slice sampler.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Continuous, ContinuousCDF};

use crate::error::{Error, Result};

/// Density proportional to `x^(shape-1) exp(-rate x)` on `x >= lower`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaConditional {
    pub shape: f64,
    pub rate: f64,
    pub lower: f64,
}

impl GammaConditional {
    pub fn new(shape: f64, rate: f64) -> Self {
        Self { shape, rate, lower: 0.0 }
    }

    pub fn truncated(shape: f64, rate: f64, lower: f64) -> Self {
        Self { shape, rate, lower }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.shape > 0.0 && self.shape.is_finite()) {
            return Err(Error::Argument(format!("Gamma shape {} must be positive", self.shape)));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Argument(format!("Gamma rate {} must be positive", self.rate)));
        }
        Ok(())
    }

    /// Unnormalized log density.
    pub fn log_kernel(&self, x: f64) -> f64 {
        if x <= 0.0 || x < self.lower {
            return f64::NEG_INFINITY;
        }
        (self.shape - 1.0) * x.ln() - self.rate * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        self.check()?;
        let gamma = rand_distr::Gamma::new(self.shape, 1.0 / self.rate)
            .map_err(|e| Error::Argument(format!("Gamma({}, {}): {e}", self.shape, self.rate)))?;
        if self.lower <= 0.0 {
            return Ok(gamma.sample(rng).max(f64::MIN_POSITIVE));
        }
        let dist = statrs::distribution::Gamma::new(self.shape, self.rate)
            .map_err(|e| Error::Argument(format!("Gamma({}, {}): {e}", self.shape, self.rate)))?;
        let below = dist.cdf(self.lower);
        if below < 0.5 {
            for _ in 0..200 {
                let x = gamma.sample(rng);
                if x >= self.lower {
                    return Ok(x);
                }
            }
        }
        // inverse-CDF on the retained upper tail
        let u: f64 = rng.random();
        let p = below + (1.0 - below) * u;
        if p >= 1.0 {
            return Ok(self.lower);
        }
        Ok(dist.inverse_cdf(p).max(self.lower))
    }
}

/// Density proportional to `exp(-precision x²/2 + linear x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalarGaussian {
    pub precision: f64,
    pub linear: f64,
}

impl ScalarGaussian {
    pub fn log_kernel(&self, x: f64) -> f64 {
        -0.5 * self.precision * x * x + self.linear * x
    }

    pub fn mean(&self) -> f64 {
        self.linear / self.precision
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, what: &str) -> Result<f64> {
        if !(self.precision > 0.0 && self.precision.is_finite()) {
            return Err(Error::NotPositiveDefinite(format!("{what}: scalar precision {}", self.precision)));
        }
        let z: f64 = rng.sample(StandardNormal);
        Ok(self.mean() + z / self.precision.sqrt())
    }
}

/// `argmax_s (log_w[s] + G_s)` with iid standard Gumbel `G_s`, a draw from
/// the categorical distribution with probabilities proportional to
/// `exp(log_w)`. Ties resolve to the lower index.
pub fn gumbel_max<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> Result<usize> {
    if log_w.is_empty() {
        return Err(Error::Argument("empty categorical".into()));
    }
    if log_w.iter().all(|w| *w == f64::NEG_INFINITY) || log_w.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
        return Err(Error::NonFinite("categorical log weights".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (s, &w) in log_w.iter().enumerate() {
        // open interval keeps ln(-ln u) finite
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        let g = w - (-u.ln()).ln();
        if g > best.1 {
            best = (s, g);
        }
    }
    Ok(best.0)
}

/// Normalized probabilities from log weights (log-sum-exp).
pub fn softmax(log_w: &[f64]) -> Vec<f64> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = log_w.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// One stepping-out and shrinkage slice-sampling transition for a univariate
/// log density, restricted to `[lower, upper]` (either may be infinite).
#[allow(clippy::too_many_arguments)]
pub fn slice_sample<R, F>(
    log_density: F,
    current: f64,
    lower: f64,
    upper: f64,
    width: f64,
    max_steps: usize,
    rng: &mut R,
) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    let inside = |x: f64| x > lower && x < upper;
    let f0 = log_density(current);
    if !f0.is_finite() || !(current >= lower && current <= upper) {
        return Err(Error::NonFinite(format!("slice sampler started at {current} with log density {f0}")));
    }
    if !(width > 0.0) {
        return Err(Error::Argument("slice width must be positive".into()));
    }
    let level = f0 + rng.random::<f64>().ln();
    let mut left = current - width * rng.random::<f64>();
    let mut right = left + width;
    let j = (max_steps as f64 * rng.random::<f64>()).floor() as usize;
    let mut k = max_steps.saturating_sub(1).saturating_sub(j);
    let mut j = j;
    while j > 0 && inside(left) && log_density(left) > level {
        left -= width;
        j -= 1;
    }
    while k > 0 && inside(right) && log_density(right) > level {
        right += width;
        k -= 1;
    }
    left = left.max(lower);
    right = right.min(upper);
    loop {
        let x = left + (right - left) * rng.random::<f64>();
        if inside(x) && log_density(x) > level {
            return Ok(x);
        }
        if x < current {
            left = x;
        } else {
            right = x;
        }
        if right - left <= f64::EPSILON * current.abs().max(1.0) {
            return Ok(current);
        }
    }
}

/// `log Gamma(x; shape, rate)` through the reference implementation.
pub fn gamma_ln_pdf(x: f64, shape: f64, rate: f64) -> f64 {
    match statrs::distribution::Gamma::new(shape, rate) {
        Ok(d) if x > 0.0 => d.ln_pdf(x),
        _ => f64::NEG_INFINITY,
    }
}
