//! Coverage of a fitted linear quantile function.
//!
//! Under `y = <w*, x> + z` with `x ~ N(0, I)`, the residual of a fit
//! `(w, b)` is `z - <w - w*, x>`, whose law only depends on
//! `||w - w*||`, so the coverage is `E[Φ_z(||w - w*|| G + b)]` and needs no
//! test set.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::erm::{Dataset, QuantileFit};
use crate::expectation::coverage_integral;
use crate::noise::NoiseModel;
use crate::quadrature::QuadratureSpec;
use crate::rng::{self, Purpose};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    /// Closed-form coverage, when the generating model is known.
    pub exact: Option<f64>,
    pub empirical: Option<f64>,
    pub n_test: usize,
    pub alpha: f64,
    /// `alpha` minus the exact coverage if present, else the empirical one.
    pub gap: f64,
}

impl CoverageReport {
    /// Exact coverage when `test` carries its generating model, empirical
    /// coverage whenever `test` is given.
    pub fn evaluate(fit: &QuantileFit, alpha: f64, test: Option<&Dataset>, quad: &QuadratureSpec) -> Result<Self> {
        let empirical = test.map(|t| empirical_coverage(fit, t)).transpose()?;
        let exact = match test.and_then(Dataset::truth) {
            Some(truth) => Some(exact_coverage(fit, &truth.w_star, &truth.noise, quad)?),
            None => None,
        };
        let used = exact.or(empirical).unwrap_or(f64::NAN);
        Ok(CoverageReport {
            exact,
            empirical,
            n_test: test.map_or(0, Dataset::n),
            alpha,
            gap: alpha - used,
        })
    }
}

pub fn exact_coverage(fit: &QuantileFit, w_star: &DVector<f64>, noise: &NoiseModel, quad: &QuadratureSpec) -> Result<f64> {
    if fit.w.len() != w_star.len() {
        return Err(Error::DimensionMismatch { expected: w_star.len(), got: fit.w.len() });
    }
    Ok(coverage_integral((&fit.w - w_star).norm(), fit.b, noise, quad))
}

/// Fraction of rows with `y <= <w, x> + b`.
pub fn empirical_coverage(fit: &QuantileFit, test: &Dataset) -> Result<f64> {
    if fit.w.len() != test.d() {
        return Err(Error::DimensionMismatch { expected: test.d(), got: fit.w.len() });
    }
    let pred = fit.predict(test.x());
    let covered = pred.iter().zip(test.y().iter()).filter(|(p, y)| y <= p).count();
    Ok(covered as f64 / test.n() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureLaw {
    Gaussian,
    /// Uniform on `[-half_width, half_width]^d`.
    UniformCube { half_width: f64 },
}

/// Heteroscedastic model `y = mu(x) + sigma(x) z` whose alpha-quantile
/// function is exactly linear, `<w*, x> + b*`.
///
/// `sigma(x) = clip(sigma0 + sigma1 tanh(||x||^2 / d), sigma_min, sigma_max)`
/// is even in `x`, the feature law is symmetric, and `noise` must be
/// centered, symmetric and unimodal.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedModel {
    pub d: usize,
    pub features: FeatureLaw,
    pub sigma0: f64,
    pub sigma1: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub noise: NoiseModel,
}

impl RelaxedModel {
    pub fn builtin(d: usize) -> Self {
        RelaxedModel {
            d,
            features: FeatureLaw::Gaussian,
            sigma0: 0.5,
            sigma1: 0.5,
            sigma_min: 0.25,
            sigma_max: 1.5,
            noise: NoiseModel::standard(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::domain("relaxed model needs d >= 1"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max && self.sigma_max.is_finite()) {
            return Err(Error::domain(format!(
                "need 0 < sigma_min <= sigma_max < inf, got [{}, {}]",
                self.sigma_min, self.sigma_max
            )));
        }
        if let FeatureLaw::UniformCube { half_width } = self.features {
            if !(half_width > 0.0) {
                return Err(Error::domain("cube half-width must be > 0"));
            }
        }
        // Mixtures of zero-mean Gaussians are symmetric and unimodal.
        if self.noise.components().iter().any(|c| c.mean != 0.0) {
            return Err(Error::domain("relaxed-model noise must be a zero-mean (mixture of) Gaussian"));
        }
        Ok(())
    }

    pub fn sigma(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        (self.sigma0 + self.sigma1 * (r2 / self.d as f64).tanh()).clamp(self.sigma_min, self.sigma_max)
    }

    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.features {
            FeatureLaw::Gaussian => out.iter_mut().for_each(|v| *v = StandardNormal.sample(rng)),
            FeatureLaw::UniformCube { half_width } => {
                out.iter_mut().for_each(|v| *v = rng.random_range(-half_width..half_width))
            }
        }
    }

    /// One label for features `x`; `z_alpha` is the noise quantile.
    pub fn sample_y<R: Rng + ?Sized>(&self, rng: &mut R, x: &[f64], w_star: &DVector<f64>, b_star: f64, z_alpha: f64) -> f64 {
        let s = self.sigma(x);
        let mu = dot(w_star.as_slice(), x) + b_star - s * z_alpha;
        mu + s * self.noise.sample(rng)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub coverage: f64,
    pub std_error: f64,
}

const MC_SHARD: usize = 1 << 16;

/// Monte-Carlo estimate of `P(y <= <w_hat, x> + b*)` under `model`, with
/// `b*` the intercept of the true quantile function.
///
/// Given `x` the event has probability `Φ_z(z_alpha + <w_hat - w*, x> / sigma(x))`,
/// which is averaged over sampled `x`. Samples are drawn in fixed-size
/// shards with their own streams, so the result does not depend on the
/// thread count.
pub fn relaxed_coverage(
    w_hat: &DVector<f64>,
    w_star: &DVector<f64>,
    alpha: f64,
    model: &RelaxedModel,
    n_mc: usize,
    seed: u64,
) -> Result<McEstimate> {
    model.validate()?;
    for v in [w_hat, w_star] {
        if v.len() != model.d {
            return Err(Error::DimensionMismatch { expected: model.d, got: v.len() });
        }
    }
    if n_mc < 2 {
        return Err(Error::domain("need at least 2 Monte-Carlo samples"));
    }
    let z_alpha = model.noise.quantile(alpha)?;
    let delta = w_hat - w_star;
    let shards = n_mc.div_ceil(MC_SHARD);
    let sums: Vec<(f64, f64)> = (0..shards)
        .into_par_iter()
        .map(|s| {
            let count = MC_SHARD.min(n_mc - s * MC_SHARD);
            let mut rng = rng::stream(seed, Purpose::MonteCarlo, &[s as u64]);
            let mut x = vec![0.0; model.d];
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for _ in 0..count {
                model.sample_x(&mut rng, &mut x);
                let p = model.noise.cdf(z_alpha + dot(delta.as_slice(), &x) / model.sigma(&x));
                sum += p;
                sum_sq += p * p;
            }
            (sum, sum_sq)
        })
        .collect();
    let (sum, sum_sq) = sums.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let n = n_mc as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(McEstimate { coverage: mean, std_error: (var / n).sqrt() })
}
