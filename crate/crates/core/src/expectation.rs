//! Expectations over `(G, Z) ~ N(0, 1) x P_z` that drive the fixed-point
//! system and the coverage formula.
//!
//! Conditionally on `G = g` the envelope derivative of the shifted pinball
//! loss at `tau g + Z` is piecewise linear in `Z`, with breakpoints at
//! `b - (1 - alpha) lambda - tau g` and `b + alpha lambda - tau g`. Its
//! conditional moments are therefore exact combinations of tail masses and
//! band moments of the noise law; only the outer average over `g` uses
//! Gauss–Hermite quadrature.

use crate::noise::NoiseModel;
use crate::pinball::QuantileLevel;
use crate::quadrature::QuadratureSpec;
use crate::{Error, Result};

/// `E[e'^2]`, `E[e' G]` and `E[e']` where `e' = ∂_x e(tau G + Z; lambda)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemMoments {
    pub m_sq: f64,
    pub m_g: f64,
    pub m_1: f64,
}

/// Conditional moments given one value of `g`.
#[derive(Debug, Clone, Copy)]
struct Conditional {
    first: f64,
    second: f64,
    band_mass: f64,
}

fn conditional(shift: f64, lambda: f64, alpha: f64, noise: &NoiseModel) -> Conditional {
    // Z enters through x = shift' + Z with the band [lo, hi] expressed in Z.
    let lo = shift - (1.0 - alpha) * lambda;
    let hi = shift + alpha * lambda;
    let [m0, m1, m2] = noise.band_moments(lo, hi, shift);
    let below = noise.cdf(lo);
    let above = noise.sf(hi);
    Conditional {
        first: alpha * above - (1.0 - alpha) * below + m1 / lambda,
        second: alpha * alpha * above + (1.0 - alpha) * (1.0 - alpha) * below + m2 / (lambda * lambda),
        band_mass: m0,
    }
}

pub fn system_moments(
    tau: f64,
    lambda: f64,
    b: f64,
    alpha: QuantileLevel,
    noise: &NoiseModel,
    quad: &QuadratureSpec,
) -> Result<SystemMoments> {
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("envelope scale must be > 0, got {lambda}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("tau must be >= 0, got {tau}")));
    }
    if quad.nodes < 2 {
        return Err(Error::domain("quadrature needs at least 2 nodes"));
    }
    let a = alpha.get();
    if tau == 0.0 {
        let c = conditional(b, lambda, a, noise);
        return Ok(SystemMoments { m_sq: c.second, m_g: 0.0, m_1: c.first });
    }
    let rule = quad.rule();
    let mut out = SystemMoments { m_sq: 0.0, m_g: 0.0, m_1: 0.0 };
    for (&g, &w) in rule.nodes.iter().zip(&rule.weights) {
        let c = conditional(b - tau * g, lambda, a, noise);
        out.m_sq += w * c.second;
        out.m_g += w * g * c.first;
        out.m_1 += w * c.first;
    }
    Ok(out)
}

/// `P(prox(tau G + Z) = b)`: the mass of the flat band. By Stein's identity
/// `m_g = tau * band_probability / lambda`.
pub fn band_probability(
    tau: f64,
    lambda: f64,
    b: f64,
    alpha: QuantileLevel,
    noise: &NoiseModel,
    quad: &QuadratureSpec,
) -> f64 {
    let a = alpha.get();
    if tau == 0.0 {
        return conditional(b, lambda, a, noise).band_mass;
    }
    quad.rule()
        .integrate(|g| conditional(b - tau * g, lambda, a, noise).band_mass)
}

/// `E[Φ_z(scale G + shift)]`, clamped to `[0, 1]`.
pub fn coverage_integral(scale: f64, shift: f64, noise: &NoiseModel, quad: &QuadratureSpec) -> f64 {
    let v = if scale == 0.0 {
        noise.cdf(shift)
    } else {
        quad.rule().integrate(|g| noise.cdf(scale * g + shift))
    };
    v.clamp(0.0, 1.0)
}
