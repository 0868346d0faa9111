//! Limiting behaviour of quantile-regression ERM in the proportional regime
//! `d/n -> kappa`.
//!
//! `||w_hat - w*||` and `b_hat` concentrate at `tau` and `b`, where
//! `(tau, lambda, b)` is the root of
//!
//! ```text
//! tau^2 kappa = lambda^2 E[e'(tau G + Z; lambda)^2]
//! tau kappa   = lambda   E[e'(tau G + Z; lambda) G]
//! 0           =          E[e'(tau G + Z; lambda)]
//! ```
//!
//! with `e'` the envelope derivative of the pinball loss shifted by `b`. The
//! limiting coverage is `E[Φ_z(tau G + b)] = alpha - C(alpha, kappa)`.
//!
//! The root is found with Newton's method in rescaled coordinates
//! `tau = t sqrt(kappa)`, `lambda = l kappa`, `b = z_alpha + c kappa`, in
//! which the solution stays O(1) as `kappa -> 0`.

use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::expectation::{coverage_integral, system_moments, SystemMoments};
use crate::noise::NoiseModel;
use crate::pinball::QuantileLevel;
use crate::quadrature::QuadratureSpec;
use crate::{Error, Result};

/// First-order coefficients of the root in `kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpansionConstants {
    pub tau0_sq: f64,
    pub lambda0: f64,
    pub b0: f64,
    pub z_alpha: f64,
}

pub fn expansion_constants(alpha: QuantileLevel, noise: &NoiseModel) -> Result<ExpansionConstants> {
    let a = alpha.get();
    let z = noise.quantile(a)?;
    let dens = noise.density(z);
    if dens < 1e-12 {
        return Err(Error::domain(format!(
            "noise density at the {a}-quantile is {dens:e}; it must be positive"
        )));
    }
    let slope = noise.density_deriv(z);
    Ok(ExpansionConstants {
        tau0_sq: a * (1.0 - a) / (dens * dens),
        lambda0: 1.0 / dens,
        b0: (-a * (1.0 - a) * slope - (2.0 * a - 1.0) * dens * dens) / (2.0 * dens.powi(3)),
        z_alpha: z,
    })
}

/// `alpha - (alpha - 1/2) kappa`.
pub fn coverage_linear_approx(alpha: f64, kappa: f64) -> f64 {
    alpha - (alpha - 0.5) * kappa
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOpts {
    pub tol: f64,
    pub max_iter: usize,
    pub kappa_max: f64,
    pub quad: QuadratureSpec,
}

impl Default for SolveOpts {
    fn default() -> Self {
        SolveOpts {
            tol: 1e-10,
            max_iter: 200,
            kappa_max: 0.95,
            quad: QuadratureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheorySolution {
    pub alpha: f64,
    pub kappa: f64,
    pub tau: f64,
    pub lambda: f64,
    pub b: f64,
    /// Max-norm of the rescaled system at the root.
    pub residual: f64,
    pub coverage: f64,
    pub c_alpha_kappa: f64,
    pub iterations: usize,
    /// Set for `kappa > 0.5`, beyond the small-`kappa` regime the theory covers.
    pub extrapolated: bool,
}

impl TheorySolution {
    pub const CSV_HEADER: &'static str =
        "alpha,kappa,tau,lambda,b,coverage,c_alpha_kappa,residual,iterations,extrapolated";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:e},{},{}",
            self.alpha,
            self.kappa,
            self.tau,
            self.lambda,
            self.b,
            self.coverage,
            self.c_alpha_kappa,
            self.residual,
            self.iterations,
            self.extrapolated
        )
    }
}

/// The rescaled system at a fixed `(alpha, kappa, noise)`.
pub struct RescaledSystem<'a> {
    alpha: QuantileLevel,
    kappa: f64,
    z_alpha: f64,
    noise: &'a NoiseModel,
    quad: QuadratureSpec,
}

const LAMBDA_FLOOR: f64 = 1e-12;

impl<'a> RescaledSystem<'a> {
    pub fn new(alpha: QuantileLevel, kappa: f64, noise: &'a NoiseModel, quad: QuadratureSpec) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::domain(format!("kappa must be > 0, got {kappa}")));
        }
        Ok(RescaledSystem {
            alpha,
            kappa,
            z_alpha: noise.quantile(alpha.get())?,
            noise,
            quad,
        })
    }

    /// `(t, l, c)` to `(tau, lambda, b)`.
    pub fn to_raw(&self, p: &Vector3<f64>) -> (f64, f64, f64) {
        (
            p[0] * self.kappa.sqrt(),
            (p[1] * self.kappa).max(LAMBDA_FLOOR),
            self.z_alpha + p[2] * self.kappa,
        )
    }

    pub fn from_raw(&self, tau: f64, lambda: f64, b: f64) -> Vector3<f64> {
        Vector3::new(tau / self.kappa.sqrt(), lambda / self.kappa, (b - self.z_alpha) / self.kappa)
    }

    /// `(F1, F2, F3)`; zero exactly at a root of the raw system.
    pub fn eval(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let (tau, lambda, b) = self.to_raw(p);
        let SystemMoments { m_sq, m_g, m_1 } =
            system_moments(tau, lambda, b, self.alpha, self.noise, &self.quad)?;
        Ok(Vector3::new(
            p[0] * p[0] - p[1] * p[1] * m_sq,
            p[0] - p[1] * m_g / self.kappa.sqrt(),
            m_1 / self.kappa,
        ))
    }

    /// `F` with its second equation divided by `t`.
    ///
    /// `F` also vanishes as `(t, l) -> 0` at `b = z_alpha`, a degenerate root
    /// that Newton on `F` can slide into from poor starting points. The
    /// normalized system has the same roots with `t > 0` and not that one.
    pub fn eval_normalized(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        Ok(self.eval_both(p)?.1)
    }

    fn eval_both(&self, p: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>)> {
        let f = self.eval(p)?;
        let g = Vector3::new(f[0], f[1] / p[0], f[2]);
        Ok((f, g))
    }

    /// Forward-difference Jacobian of `F` with step `1e-6 max(1, |p_i|)`.
    pub fn jacobian(&self, p: &Vector3<f64>, f0: &Vector3<f64>) -> Result<Matrix3<f64>> {
        fd_jacobian(p, f0, |q| self.eval(q))
    }

    fn normalized_jacobian(&self, p: &Vector3<f64>, g0: &Vector3<f64>) -> Result<Matrix3<f64>> {
        fd_jacobian(p, g0, |q| self.eval_normalized(q))
    }
}

fn fd_jacobian(
    p: &Vector3<f64>,
    f0: &Vector3<f64>,
    f: impl Fn(&Vector3<f64>) -> Result<Vector3<f64>>,
) -> Result<Matrix3<f64>> {
    let mut jac = Matrix3::zeros();
    for i in 0..3 {
        let h = 1e-6 * p[i].abs().max(1.0);
        let mut q = *p;
        q[i] += h;
        jac.set_column(i, &((f(&q)? - f0) / h));
    }
    Ok(jac)
}

fn inf_norm(v: &Vector3<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solve from the small-`kappa` expansion point.
pub fn solve_system(alpha: f64, kappa: f64, noise: &NoiseModel, opts: &SolveOpts) -> Result<TheorySolution> {
    let level = QuantileLevel::new(alpha)?;
    let ec = expansion_constants(level, noise)?;
    solve_system_from(
        alpha,
        kappa,
        noise,
        opts,
        ((ec.tau0_sq * kappa).sqrt(), ec.lambda0 * kappa, ec.z_alpha + ec.b0 * kappa),
    )
}

/// Solve from an explicit starting point `(tau, lambda, b)`.
pub fn solve_system_from(
    alpha: f64,
    kappa: f64,
    noise: &NoiseModel,
    opts: &SolveOpts,
    init: (f64, f64, f64),
) -> Result<TheorySolution> {
    let level = QuantileLevel::new(alpha)?;
    if !(kappa > 0.0 && kappa <= opts.kappa_max) {
        return Err(Error::domain(format!(
            "kappa must lie in (0, {}], got {kappa}",
            opts.kappa_max
        )));
    }
    if !(init.0 > 0.0 && init.1 > 0.0 && init.2.is_finite()) {
        return Err(Error::domain(format!("invalid starting point {init:?}")));
    }
    let sys = RescaledSystem::new(level, kappa, noise, opts.quad)?;
    let mut p = sys.from_raw(init.0, init.1, init.2);
    let (mut f, mut g) = sys.eval_both(&p)?;
    let mut iterations = 0;
    while inf_norm(&f) > opts.tol || inf_norm(&g) > opts.tol {
        let res = inf_norm(&f);
        if iterations >= opts.max_iter {
            return Err(Error::NonConvergence { residual: res, iterations });
        }
        iterations += 1;
        let jac = sys.normalized_jacobian(&p, &g)?;
        let step = jac
            .lu()
            .solve(&(-g))
            .ok_or(Error::NonConvergence { residual: res, iterations })?;
        // Halve until the residual drops; a step may shrink tau or lambda by
        // at most a factor of four.
        let gnorm = inf_norm(&g);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let q = p + step * scale;
            if q[0] >= 0.25 * p[0] && q[1] >= 0.25 * p[1] && q[1] * kappa > LAMBDA_FLOOR {
                let (fq, gq) = sys.eval_both(&q)?;
                if inf_norm(&gq) < gnorm {
                    accepted = Some((q, fq, gq));
                    break;
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((q, fq, gq)) => {
                p = q;
                f = fq;
                g = gq;
            }
            None => return Err(Error::NonConvergence { residual: res, iterations }),
        }
    }
    let res = inf_norm(&f);
    let (tau, lambda, b) = sys.to_raw(&p);
    let coverage = coverage_integral(tau, b, noise, &opts.quad);
    Ok(TheorySolution {
        alpha,
        kappa,
        tau,
        lambda,
        b,
        residual: res,
        coverage,
        c_alpha_kappa: alpha - coverage,
        iterations,
        extrapolated: kappa > 0.5,
    })
}

/// Largest partial derivative of the saddle function
/// `D(tau, b, tau_g, beta) = beta tau_g / 2 + E[e(tau G + Z; tau_g/beta)]/kappa - tau beta`
/// at `(tau, b, tau, tau/lambda)`. Vanishes exactly at a root of the system.
pub fn saddle_stationarity(sol: &TheorySolution, noise: &NoiseModel, quad: &QuadratureSpec) -> Result<f64> {
    let level = QuantileLevel::new(sol.alpha)?;
    let kappa = sol.kappa;
    let (tau, b, tau_g) = (sol.tau, sol.b, sol.tau);
    let beta = sol.tau / sol.lambda;
    let scale = tau_g / beta;
    let m = system_moments(tau, scale, b, level, noise, quad)?;
    let grads = [
        m.m_g / kappa - beta,
        -m.m_1 / kappa,
        beta / 2.0 - m.m_sq / (2.0 * kappa * beta),
        tau_g / 2.0 - tau + tau_g * m.m_sq / (2.0 * kappa * beta * beta),
    ];
    Ok(grads.iter().fold(0.0, |acc, g| acc.max(g.abs())))
}
