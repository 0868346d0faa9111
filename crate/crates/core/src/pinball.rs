//! Pinball loss and the Moreau-envelope calculus of its shifted version
//! `l_b(x) = pinball(x - b)`.
//!
//! For scale `lambda > 0` the prox of `l_b` is a soft-threshold towards `b`
//! with asymmetric band `[b - (1 - alpha) lambda, b + alpha lambda]`:
//! inside the band the prox is `b`, above it is `x - alpha lambda`, below it
//! is `x + (1 - alpha) lambda`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A quantile level in the open interval `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha > 0.0 && alpha < 1.0 {
            Ok(QuantileLevel(alpha))
        } else {
            Err(Error::domain(format!("quantile level must lie in (0,1), got {alpha}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;

    fn try_from(alpha: f64) -> Result<Self> {
        QuantileLevel::new(alpha)
    }
}

/// `-(1 - alpha) t` for `t <= 0`, `alpha t` for `t > 0`.
#[inline]
pub fn pinball_loss(t: f64, alpha: QuantileLevel) -> f64 {
    let a = alpha.0;
    if t > 0.0 {
        a * t
    } else {
        -(1.0 - a) * t
    }
}

/// Subgradient of the pinball loss; at the kink the `t <= 0` branch is used.
#[inline]
pub fn pinball_subgrad(t: f64, alpha: QuantileLevel) -> f64 {
    let a = alpha.0;
    if t > 0.0 {
        a
    } else {
        -(1.0 - a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinballParams {
    pub alpha: QuantileLevel,
    pub b: f64,
    pub lambda: f64,
}

impl PinballParams {
    pub fn new(alpha: f64, b: f64, lambda: f64) -> Result<Self> {
        let alpha = QuantileLevel::new(alpha)?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("envelope scale must be > 0, got {lambda}")));
        }
        if !b.is_finite() {
            return Err(Error::domain(format!("shift must be finite, got {b}")));
        }
        Ok(PinballParams { alpha, b, lambda })
    }

    /// Lower and upper edges of the band on which the prox equals `b`.
    pub fn band(&self) -> (f64, f64) {
        let a = self.alpha.0;
        (self.b - (1.0 - a) * self.lambda, self.b + a * self.lambda)
    }
}

/// Envelope value, prox and first derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxState {
    pub prox: f64,
    pub envelope: f64,
    pub d_x: f64,
    pub d_lambda: f64,
    pub d_b: f64,
    pub in_band: bool,
}

/// Weak second derivatives `(d_xx, d_bx, d_lambda_x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondDerivs {
    pub dxx: f64,
    pub dbx: f64,
    pub dlx: f64,
}

pub fn prox(x: f64, p: &PinballParams) -> f64 {
    let a = p.alpha.0;
    let (lo, hi) = p.band();
    if x > hi {
        x - a * p.lambda
    } else if x < lo {
        x + (1.0 - a) * p.lambda
    } else {
        p.b
    }
}

pub fn envelope(x: f64, p: &PinballParams) -> ProxState {
    let v = prox(x, p);
    let in_band = v == p.b;
    // In the band `x - prox` is exact; outside it is a fixed multiple of lambda.
    let a = p.alpha.0;
    let (lo, hi) = p.band();
    let d_x = if x > hi {
        a
    } else if x < lo {
        -(1.0 - a)
    } else {
        (x - p.b) / p.lambda
    };
    let gap = x - v;
    let envelope = gap * gap / (2.0 * p.lambda) + pinball_loss(v - p.b, p.alpha);
    ProxState {
        prox: v,
        envelope,
        d_x,
        d_lambda: -0.5 * d_x * d_x,
        d_b: -d_x,
        in_band,
    }
}

pub fn envelope_second_derivs(x: f64, p: &PinballParams) -> SecondDerivs {
    let state = envelope(x, p);
    let dxx = if state.in_band { 1.0 / p.lambda } else { 0.0 };
    SecondDerivs {
        dxx,
        dbx: -dxx,
        dlx: -state.d_x * dxx,
    }
}
