//! Implied volatilities: Black–Scholes for SPX options and the normal model
//! `dVIX = sigma dW` for VIX options.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{check_positive, Error, Result};

/// Iteration budget of both root finders.
pub const MAX_ITERATIONS: usize = 100;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Black–Scholes call on a spot `x` with rate `r`.
pub fn bs_call(x: f64, strike: f64, tau: f64, r: f64, sigma: f64) -> f64 {
    let disc_k = strike * (-r * tau).exp();
    let s = sigma * tau.sqrt();
    if s <= 0.0 {
        return (x - disc_k).max(0.0);
    }
    let n = std_normal();
    let d1 = ((x / disc_k).ln() + 0.5 * s * s) / s;
    x * n.cdf(d1) - disc_k * n.cdf(d1 - s)
}

/// Black–Scholes vega, `dC/dsigma`.
pub fn bs_vega(x: f64, strike: f64, tau: f64, r: f64, sigma: f64) -> f64 {
    let s = sigma * tau.sqrt();
    if s <= 0.0 {
        return 0.0;
    }
    let d1 = ((x / (strike * (-r * tau).exp())).ln() + 0.5 * s * s) / s;
    x * std_normal().pdf(d1) * tau.sqrt()
}

/// Normal-model VIX call: `(V - K) N(m) + s n(m)`, `s = sigma sqrt(tau)`, `m = (V - K)/s`.
pub fn vix_normal_price(vix_level: f64, strike: f64, tau: f64, sigma_n: f64) -> f64 {
    let s = sigma_n * tau.sqrt();
    let m = vix_level - strike;
    if s <= 0.0 {
        return m.max(0.0);
    }
    let n = std_normal();
    m * n.cdf(m / s) + s * n.pdf(m / s)
}

/// Outcome of one inversion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inversion {
    pub vol: f64,
    pub iterations: usize,
}

/// Newton steps on a bracketed increasing function, falling back to bisection
/// whenever a step leaves the bracket or stalls.
fn safeguarded_newton<F>(mut f: F, mut lo: f64, mut hi: f64, guess: f64, tol: f64) -> Result<Inversion>
where
    F: FnMut(f64) -> (f64, f64),
{
    let mut x = guess.clamp(lo, hi);
    for it in 1..=MAX_ITERATIONS {
        let (value, slope) = f(x);
        if value.abs() < tol {
            return Ok(Inversion {
                vol: x,
                iterations: it,
            });
        }
        if value > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - value / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= 4.0 * f64::EPSILON * hi {
            return Ok(Inversion {
                vol: next,
                iterations: it,
            });
        }
        x = next;
    }
    Err(Error::NoRoot(format!(
        "no convergence within {MAX_ITERATIONS} iterations (bracket [{lo}, {hi}])"
    )))
}

/// Grows `hi` until `f(hi) > 0`.
fn bracket<F: FnMut(f64) -> f64>(mut f: F, mut hi: f64, limit: f64) -> Result<f64> {
    while f(hi) <= 0.0 {
        hi *= 2.0;
        if hi > limit {
            return Err(Error::NoRoot(format!(
                "price above the large-volatility asymptote (searched up to {limit})"
            )));
        }
    }
    Ok(hi)
}

/// Normal-model implied volatility in VIX points per square-root year.
pub fn vix_normal_implied_vol(price: f64, vix_level: f64, strike: f64, tau: f64) -> Result<Inversion> {
    check_positive("tau", tau)?;
    let intrinsic = (vix_level - strike).max(0.0);
    if !price.is_finite() || price <= intrinsic {
        return Err(Error::NoRoot(format!(
            "price {price} is not above intrinsic value {intrinsic}"
        )));
    }
    let sq = tau.sqrt();
    let target = |s: f64| vix_normal_price(vix_level, strike, tau, s) - price;
    // Time value at the money is s n(0); use it as the starting point.
    let guess = (price - intrinsic) * (2.0 * std::f64::consts::PI).sqrt() / sq;
    let hi = bracket(target, guess.max(1e-3), 1e8)?;
    let tol = 1e-12 * (1.0 + price);
    safeguarded_newton(
        |s| {
            let m = (vix_level - strike) / (s * sq);
            (target(s), sq * std_normal().pdf(m))
        },
        0.0,
        hi,
        guess,
        tol,
    )
}

/// Black–Scholes implied volatility.
pub fn bs_implied_vol(price: f64, x: f64, strike: f64, tau: f64, r: f64) -> Result<Inversion> {
    check_positive("x", x)?;
    check_positive("strike", strike)?;
    check_positive("tau", tau)?;
    let lower = (x - strike * (-r * tau).exp()).max(0.0);
    if !price.is_finite() || price <= lower || price >= x {
        return Err(Error::NoRoot(format!(
            "price {price} outside the no-arbitrage band ({lower}, {x})"
        )));
    }
    let target = |s: f64| bs_call(x, strike, tau, r, s) - price;
    // Brenner–Subrahmanyam ATM approximation.
    let guess = (price * (2.0 * std::f64::consts::PI / tau).sqrt() / x).clamp(0.01, 2.0);
    let hi = bracket(target, guess.max(0.5), 1e4)?;
    let tol = 1e-12 * (1.0 + price);
    safeguarded_newton(
        |s| (target(s), bs_vega(x, strike, tau, r, s)),
        0.0,
        hi,
        guess,
        tol,
    )
}

/// One cell of an implied-volatility surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImpliedVolPoint {
    pub strike: f64,
    pub maturity: f64,
    pub implied_vol: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl ImpliedVolPoint {
    pub fn from_result(strike: f64, maturity: f64, r: Result<Inversion>) -> Self {
        match r {
            Ok(inv) => ImpliedVolPoint {
                strike,
                maturity,
                implied_vol: inv.vol,
                converged: true,
                iterations: inv.iterations,
            },
            Err(_) => ImpliedVolPoint {
                strike,
                maturity,
                implied_vol: f64::NAN,
                converged: false,
                iterations: MAX_ITERATIONS,
            },
        }
    }
}

/// Writes a strike-by-maturity grid as CSV: one row per strike, one column per maturity.
/// Unconverged cells are left empty.
pub fn write_surface_csv<W: Write>(
    out: &mut W,
    strikes: &[f64],
    maturities: &[f64],
    cell: impl Fn(usize, usize) -> Option<f64>,
) -> Result<()> {
    write!(out, "strike")?;
    for t in maturities {
        write!(out, ",{}", crate::data::fmt_sig(*t))?;
    }
    writeln!(out)?;
    for (i, k) in strikes.iter().enumerate() {
        write!(out, "{}", crate::data::fmt_sig(*k))?;
        for j in 0..maturities.len() {
            match cell(i, j) {
                Some(v) if v.is_finite() => write!(out, ",{}", crate::data::fmt_sig(v))?,
                _ => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
