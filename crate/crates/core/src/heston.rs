//! Heston characteristic function and the contour-integral call price.
//!
//! The leading-order SPX price of the two-factor model is a Heston price with
//! parameters `(kappa, 2 theta, sqrt(2) sigma, rho / sqrt(2))` and initial
//! variance `2 z`, so this module serves both the single-factor benchmark and
//! the leading term of the multiscale pricer.
//!
//! Conventions: the transform variable `k` enters as `E[exp(-i k log X_T)]`,
//! and the call payoff transform `K^(1+ik) / (ik - k^2)` exists for
//! `Im(k) > 1`, so every integral runs along `k = u + i alpha` with `alpha > 1`.

use std::cell::Cell;
use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::model::{ModelParams, QuadratureConfig};
use crate::quad::{integrate_split, QuadValue};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Parameters of a single-factor Heston model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl HestonParams {
    /// Fitted benchmark values for 2016–2017.
    pub const REFERENCE: HestonParams = HestonParams {
        kappa: 3.43,
        theta: 0.04,
        sigma: 0.424,
        rho: -1.0,
    };

    /// Heston model generated by the averaged operator of the two-factor model.
    pub fn effective(p: &ModelParams) -> HestonParams {
        HestonParams {
            kappa: p.kappa,
            theta: 2.0 * p.theta,
            sigma: SQRT_2 * p.sigma,
            rho: p.rho / SQRT_2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        check_positive("theta", self.theta)?;
        check_positive("sigma", self.sigma)?;
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("must lie in [-1, 1], got {}", self.rho),
            });
        }
        Ok(())
    }
}

/// Solution of the Heston Riccati system at `(tau, k)` together with the
/// auxiliary quantities it is built from.
#[derive(Debug, Clone, Copy)]
pub struct RiccatiTerms {
    /// Constant term `C(tau, k)`.
    pub c: Complex64,
    /// Variance coefficient `D(tau, k)`.
    pub d_coef: Complex64,
    /// `d(k)` on the branch with `kappa + i rho sigma k + d(k) -> 0` as `k -> 0`.
    pub d: Complex64,
    pub g: Complex64,
    /// `exp(tau * d(k))`; bounded by one in modulus on this branch.
    pub exp_td: Complex64,
}

/// Evaluates `C`, `D`, `d` and `g` at `(tau, k)`.
///
/// With the branch `d = -sqrt(...)` (principal root negated) the closed forms
/// only ever exponentiate `tau * d`, whose real part is non-positive, and the
/// logarithm in `C` stays on its principal sheet along the contour.
pub fn riccati_terms(h: &HestonParams, tau: f64, k: Complex64) -> RiccatiTerms {
    let s2 = h.sigma * h.sigma;
    let beta = h.kappa + I * h.rho * h.sigma * k;
    let disc = (s2 * (k * k - I * k) + beta * beta).sqrt();
    let d = -disc;
    let exp_td = (d * tau).exp();
    let num = beta + d;
    let den = beta - d;
    let (d_coef, log_ratio, g) = if den.norm() < 1e-12 {
        // g is unbounded here; work with its reciprocal.
        let hg = den / num;
        let d_coef = num / s2 * hg * (1.0 - exp_td) / (hg - exp_td);
        let log_ratio = ((hg - exp_td) / (hg - 1.0)).ln();
        (d_coef, log_ratio, num / den)
    } else {
        let g = num / den;
        let d_coef = num / s2 * (1.0 - exp_td) / (1.0 - g * exp_td);
        let log_ratio = ((1.0 - g * exp_td) / (1.0 - g)).ln();
        (d_coef, log_ratio, g)
    };
    let c = h.kappa * h.theta / s2 * (num * tau - 2.0 * log_ratio);
    RiccatiTerms {
        c,
        d_coef,
        d,
        g,
        exp_td,
    }
}

/// Characteristic function `exp(C + v D)` of the log-forward return.
pub fn char_fn(h: &HestonParams, tau: f64, k: Complex64, v: f64) -> Result<Complex64> {
    if tau == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let t = riccati_terms(h, tau, k);
    exp_checked(t.c + v * t.d_coef, k)
}

pub(crate) fn exp_checked(exponent: Complex64, k: Complex64) -> Result<Complex64> {
    if exponent.re > 700.0 || !exponent.re.is_finite() {
        return Err(Error::CharFnOverflow {
            exponent: exponent.re,
            k: format!("{k}"),
        });
    }
    Ok(exponent.exp())
}

/// Most doublings of the truncation range before giving up on the tail.
const MAX_DOUBLINGS: usize = 12;

/// Outcome of a contour integration: real parts and the largest imaginary residue.
pub(crate) struct ContourIntegral<const N: usize> {
    pub values: [f64; N],
    pub residue: f64,
}

/// Computes `e^{-r tau} / (2 pi) * integral of e^{-ikq} h(k) F(k) dk` along
/// `k = u + i alpha`, `q = r tau + log x`, for each component of `F`.
///
/// The integrand is Hermitian in `u` for real prices, so the routine integrates
/// `F(u) + F(-u)` over `u >= 0` with both halves evaluated independently; the
/// imaginary part of the sum is the residue reported back.
pub(crate) fn contour_price<const N: usize, F>(
    x: f64,
    strike: f64,
    tau: f64,
    r: f64,
    quad: &QuadratureConfig,
    mut factors: F,
) -> Result<ContourIntegral<N>>
where
    F: FnMut(Complex64) -> Result<[Complex64; N]>,
{
    quad.validate()?;
    let alpha = quad.contour_shift;
    let q = r * tau + x.ln();
    let log_k = strike.ln();
    let failure: Cell<Option<Error>> = Cell::new(None);

    let mut integrand = |u: f64| -> [Complex64; N] {
        let mut acc = [Complex64::new(0.0, 0.0); N];
        for uu in [u, -u] {
            let k = Complex64::new(uu, alpha);
            let payoff = ((1.0 + I * k) * log_k - I * k * q).exp() / (I * k - k * k);
            match factors(k) {
                Ok(f) => {
                    for (a, fi) in acc.iter_mut().zip(f) {
                        *a += payoff * fi;
                    }
                }
                Err(e) => {
                    failure.set(Some(e));
                    return [Complex64::new(f64::NAN, 0.0); N];
                }
            }
        }
        acc
    };

    let tol = quad.tolerance(strike * 2.0 * PI / (-r * tau).exp());
    let mut run = |a: f64, b: f64, panels: usize| -> Result<[Complex64; N]> {
        match integrate_split(&mut integrand, a, b, panels, &tol) {
            Ok(r) => Ok(r.value),
            Err(e) => Err(failure.take().unwrap_or(Error::Quadrature(e))),
        }
    };

    let mut limit = quad.truncation;
    let mut total = run(0.0, limit, 16)?;
    let mut converged = false;
    for _ in 0..MAX_DOUBLINGS {
        let tail = run(limit, 2.0 * limit, 4)?;
        total = total.add(tail);
        limit *= 2.0;
        if tail.norm() < tol.abs {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Quadrature(crate::error::QuadError::NoConvergence {
            max_nodes: quad.max_nodes,
            estimate: total.norm(),
            error: f64::NAN,
        }));
    }

    let scale = (-r * tau).exp() / (2.0 * PI);
    let mut values = [0.0; N];
    let mut residue: f64 = 0.0;
    for (v, t) in values.iter_mut().zip(total) {
        *v = scale * t.re;
        residue = residue.max((scale * t.im).abs());
    }
    Ok(ContourIntegral { values, residue })
}

/// Heston call price with initial variance `v`.
pub fn heston_call(
    h: &HestonParams,
    x: f64,
    strike: f64,
    tau: f64,
    r: f64,
    v: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    h.validate()?;
    check_positive("x", x)?;
    check_positive("strike", strike)?;
    check_positive("tau", tau)?;
    crate::error::check_non_negative("v", v)?;
    let out = contour_price::<1, _>(x, strike, tau, r, quad, |k| Ok([char_fn(h, tau, k, v)?]))?;
    let price = out.values[0];
    check_residue(out.residue, price, strike, quad)?;
    Ok(price)
}

/// Heston put price by parity.
pub fn heston_put(
    h: &HestonParams,
    x: f64,
    strike: f64,
    tau: f64,
    r: f64,
    v: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    Ok(heston_call(h, x, strike, tau, r, v, quad)? - x + strike * (-r * tau).exp())
}

/// The imaginary part of a real price must vanish up to rounding.
pub(crate) fn check_residue(
    residue: f64,
    price: f64,
    strike: f64,
    quad: &QuadratureConfig,
) -> Result<()> {
    // Relative to the price, floored at the quadrature's own absolute scale.
    let reference = price.abs().max(quad.abs_tol * strike);
    if residue > 1e-10 * reference {
        return Err(Error::ImaginaryResidue { residue, price });
    }
    Ok(())
}
