//! SPX option prices: the effective Heston price plus the first-order
//! correction from the fast factor, both from one contour integral.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_positive, Error, Result};
use crate::heston::{check_residue, contour_price, exp_checked, riccati_terms, HestonParams};
use crate::model::{HiddenState, ModelParams, QuadratureConfig};
use crate::price::{maturity_warnings, PriceDecomposition};
use crate::quad::{integrate, Tolerance};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// One European SPX option.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpxOptionSpec {
    /// Spot index level.
    pub x: f64,
    pub strike: f64,
    /// Time to maturity in years.
    pub tau: f64,
    pub is_call: bool,
}

impl SpxOptionSpec {
    pub fn call(x: f64, strike: f64, tau: f64) -> Self {
        SpxOptionSpec {
            x,
            strike,
            tau,
            is_call: true,
        }
    }

    pub fn put(x: f64, strike: f64, tau: f64) -> Self {
        SpxOptionSpec {
            is_call: false,
            ..Self::call(x, strike, tau)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("x", self.x)?;
        check_positive("strike", self.strike)?;
        check_positive("tau", self.tau)
    }
}

/// Every `k`-dependent quantity entering the two price integrals.
#[derive(Debug, Clone, Copy)]
pub struct CharFnTerms {
    pub c: Complex64,
    pub d_coef: Complex64,
    pub d: Complex64,
    pub g: Complex64,
    pub b: Complex64,
    pub f0_hat: Complex64,
    pub f1_hat: Complex64,
}

/// `exp(C + xi D)` for the averaged dynamics of the two-factor model.
pub fn char_fn_g(params: &ModelParams, tau: f64, k: Complex64, xi: f64) -> Result<Complex64> {
    crate::heston::char_fn(&HestonParams::effective(params), tau, k, xi)
}

/// `b(k) = -W3 (i k^3 + k^2) / 2`.
pub fn correction_coefficient(w3_eps: f64, k: Complex64) -> Complex64 {
    -0.5 * w3_eps * (I * k * k * k + k * k)
}

// Below this |tau d| the closed forms lose digits to cancellation.
const SMALL_TAU_D: f64 = 1e-2;

/// Returns `(f0_hat, f1_hat, b)` at `(tau, k)`.
pub fn correction_factors(
    params: &ModelParams,
    tau: f64,
    k: Complex64,
) -> Result<(Complex64, Complex64, Complex64)> {
    check_positive("tau", tau)?;
    let t = riccati_terms(&HestonParams::effective(params), tau, k);
    let (f0, f1) = f_hats(tau, t.d, t.g, k)?;
    Ok((f0, f1, correction_coefficient(params.w3_eps, k)))
}

fn f_hats(tau: f64, d: Complex64, g: Complex64, k: Complex64) -> Result<(Complex64, Complex64)> {
    let e = (tau * d).exp();
    let pole = g * e - 1.0;
    if pole.norm() < 1e-12 || !pole.is_finite() {
        return Err(Error::CorrectionPole {
            distance: pole.norm(),
            k: format!("{k}"),
        });
    }
    if (tau * d).norm() < SMALL_TAU_D {
        return Ok(f_hats_by_quadrature(tau, d, g));
    }
    let f1 = (e * (g * g * (e - 1.0) - 2.0 * tau * d * g + 1.0) - 1.0) / (d * pole * pole);
    let f0 = (2.0 * tau * d * g + g * g - 1.0) / (d * d * g * pole)
        + (tau * d * g - g - 1.0) / (d * d * g);
    Ok((f0, f1))
}

/// Integral definitions of the correction factors, used where `tau d` is tiny.
fn f_hats_by_quadrature(tau: f64, d: Complex64, g: Complex64) -> (Complex64, Complex64) {
    let tol = Tolerance::new(1e-300, 1e-13, 10_000);
    let f1 = |t: f64| -> Complex64 {
        let den = g * (t * d).exp() - 1.0;
        let inner = |s: f64| {
            let q = (g * (s * d).exp() - 1.0) / den;
            q * q * (d * (t - s)).exp()
        };
        integrate(inner, 0.0, t, &tol).map_or(Complex64::new(f64::NAN, 0.0), |r| r.value)
    };
    let f0 = integrate(f1, 0.0, tau, &tol).map_or(Complex64::new(f64::NAN, 0.0), |r| r.value);
    (f0, f1(tau))
}

/// All terms at `(tau, k)`.
pub fn char_fn_terms(params: &ModelParams, tau: f64, k: Complex64) -> Result<CharFnTerms> {
    check_positive("tau", tau)?;
    let t = riccati_terms(&HestonParams::effective(params), tau, k);
    let (f0_hat, f1_hat) = f_hats(tau, t.d, t.g, k)?;
    Ok(CharFnTerms {
        c: t.c,
        d_coef: t.d_coef,
        d: t.d,
        g: t.g,
        b: correction_coefficient(params.w3_eps, k),
        f0_hat,
        f1_hat,
    })
}

/// Leading price and correction of an SPX call.
///
/// The correction weights `f0_hat` by the long-run level `2 theta` of the
/// averaged variance `2 Z`, i.e. the source term is `b (2 kappa theta f0 + 2 z f1)`.
pub fn price_spx_call(
    spec: &SpxOptionSpec,
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<PriceDecomposition> {
    spec.validate()?;
    params.validate()?;
    crate::error::check_non_negative("z", state.z)?;
    let h = HestonParams::effective(params);
    let xi = 2.0 * state.z;
    let tau = spec.tau;
    let with_correction = params.w3_eps != 0.0;
    let source = 2.0 * params.kappa * params.theta;

    let out = contour_price::<2, _>(spec.x, spec.strike, tau, params.r, quad, |k| {
        let t = riccati_terms(&h, tau, k);
        let phi = exp_checked(t.c + xi * t.d_coef, k)?;
        let corr = if with_correction {
            let (f0, f1) = f_hats(tau, t.d, t.g, k)?;
            correction_coefficient(params.w3_eps, k) * (source * f0 + xi * f1) * phi
        } else {
            Complex64::new(0.0, 0.0)
        };
        Ok([phi, corr])
    })?;

    let [leading, correction] = out.values;
    check_residue(out.residue, leading.abs().max(correction.abs()), spec.strike, quad)?;
    let mut p = PriceDecomposition::new(leading, correction);
    p.warnings = maturity_warnings(tau);
    Ok(p)
}

/// Put by parity, with the whole parity adjustment in the leading term.
pub fn price_spx_put(
    spec: &SpxOptionSpec,
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<PriceDecomposition> {
    let call = price_spx_call(spec, state, params, quad)?;
    let adj = spec.strike * (-params.r * spec.tau).exp() - spec.x;
    let mut p = PriceDecomposition::new(call.leading + adj, call.correction);
    p.warnings = call.warnings;
    Ok(p)
}

/// Prices a call or a put according to `spec.is_call`.
pub fn price_spx(
    spec: &SpxOptionSpec,
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<PriceDecomposition> {
    if spec.is_call {
        price_spx_call(spec, state, params, quad)
    } else {
        price_spx_put(spec, state, params, quad)
    }
}

/// Prices many options concurrently; output order follows input order.
pub fn price_spx_batch(
    specs: &[SpxOptionSpec],
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Vec<Result<PriceDecomposition>> {
    specs
        .par_iter()
        .map(|s| price_spx(s, state, params, quad))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: ModelParams = ModelParams::REFERENCE;
    const S: HiddenState = HiddenState::new(0.0234, 0.0194);

    /// RK4 on the Riccati system of the averaged dynamics.
    fn riccati_rk4(tau: f64, k: Complex64, steps: usize) -> (Complex64, Complex64) {
        let h = HestonParams::effective(&P);
        let beta = h.kappa + I * h.rho * h.sigma * k;
        let rhs = |dv: Complex64| {
            let dd = 0.5 * h.sigma * h.sigma * dv * dv - beta * dv + 0.5 * (I * k - k * k);
            (dd, h.kappa * h.theta * dv)
        };
        let dt = tau / steps as f64;
        let (mut c, mut dv) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for _ in 0..steps {
            let (k1, l1) = rhs(dv);
            let (k2, l2) = rhs(dv + 0.5 * dt * k1);
            let (k3, l3) = rhs(dv + 0.5 * dt * k2);
            let (k4, l4) = rhs(dv + dt * k3);
            dv += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            c += dt / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
        }
        (c, dv)
    }

    #[test]
    fn char_fn_matches_riccati_ode() {
        let k = Complex64::new(1.0, 1.5);
        let (c, dv) = riccati_rk4(0.25, k, 4000);
        let ode = (c + 0.042 * dv).exp();
        let closed = char_fn_g(&P, 0.25, k, 0.042).unwrap();
        assert!((ode - closed).norm() < 1e-8, "{ode} vs {closed}");
        let t = char_fn_terms(&P, 0.25, k).unwrap();
        assert!((t.c - c).norm() < 1e-10);
        assert!((t.d_coef - dv).norm() < 1e-10);
    }

    #[test]
    fn char_fn_normalization() {
        assert_eq!(char_fn_g(&P, 0.0, Complex64::new(5.0, 1.5), 0.04).unwrap(), 1.0.into());
        let near_zero = char_fn_g(&P, 0.25, Complex64::new(1e-10, 1e-10), 0.04).unwrap();
        assert!((near_zero - 1.0).norm() < 1e-8);
    }

    #[test]
    fn correction_factors_match_integral_definitions() {
        let k = Complex64::new(1.0, 1.5);
        let tau = 0.25;
        let (f0, f1, _) = correction_factors(&P, tau, k).unwrap();
        let t = riccati_terms(&HestonParams::effective(&P), tau, k);
        let (q0, q1) = f_hats_by_quadrature(tau, t.d, t.g);
        assert!((f1 - q1).norm() < 1e-8, "{f1} vs {q1}");
        assert!((f0 - q0).norm() < 1e-8, "{f0} vs {q0}");
    }

    #[test]
    fn correction_factors_vanish_at_zero_maturity() {
        let k = Complex64::new(3.0, 1.5);
        let (f0, f1, _) = correction_factors(&P, 1e-9, k).unwrap();
        assert!(f0.norm() < 1e-15 && f1.norm() < 1e-8);
        // Both branches agree across the switch.
        let t = riccati_terms(&HestonParams::effective(&P), 0.002, k);
        let closed = f_hats(0.002, t.d, t.g, k).unwrap();
        let quad = f_hats_by_quadrature(0.002, t.d, t.g);
        assert!((closed.1 - quad.1).norm() < 1e-10);
    }

    #[test]
    fn zero_w3_switches_correction_off() {
        let p = ModelParams { w3_eps: 0.0, ..P };
        let (_, _, b) = correction_factors(&p, 0.25, Complex64::new(2.0, 1.5)).unwrap();
        assert_eq!(b, 0.0.into());
        let spec = SpxOptionSpec::call(2000.0, 2000.0, 0.25);
        let r = price_spx_call(&spec, S, &p, &QuadratureConfig::default()).unwrap();
        assert_eq!(r.correction, 0.0);
    }

    #[test]
    fn correction_is_linear_in_w3() {
        let spec = SpxOptionSpec::call(2000.0, 1900.0, 0.25);
        let q = QuadratureConfig::default();
        let a = price_spx_call(&spec, S, &P, &q).unwrap();
        let b = price_spx_call(&spec, S, &ModelParams { w3_eps: 0.5 * P.w3_eps, ..P }, &q).unwrap();
        assert!((a.correction - 2.0 * b.correction).abs() < 1e-9 * a.correction.abs().max(1.0));
        assert!((a.leading - b.leading).abs() < 1e-12 * a.leading);
    }

    #[test]
    fn homogeneity_and_parity() {
        let q = QuadratureConfig::default();
        let s1 = SpxOptionSpec::call(2000.0, 2100.0, 0.25);
        let s2 = SpxOptionSpec::call(4000.0, 4200.0, 0.25);
        let a = price_spx_call(&s1, S, &P, &q).unwrap();
        let b = price_spx_call(&s2, S, &P, &q).unwrap();
        assert!((b.total - 2.0 * a.total).abs() < 1e-10 * b.total.abs());
        let put = price_spx_put(&SpxOptionSpec::put(2000.0, 2100.0, 0.25), S, &P, &q).unwrap();
        let resid = a.total - put.total - 2000.0 + 2100.0 * (-P.r * 0.25f64).exp();
        assert!(resid.abs() < 1e-12 * 2000.0);
        assert_eq!(put.correction, a.correction);
    }

    #[test]
    fn deep_itm_put_tends_to_discounted_strike() {
        let q = QuadratureConfig::default();
        let k = 6000.0;
        let put = price_spx_put(&SpxOptionSpec::put(2000.0, k, 0.25), S, &P, &q).unwrap();
        let bound = k * (-P.r * 0.25f64).exp() - 2000.0;
        assert!((put.total - bound).abs() < 1e-3, "{} vs {bound}", put.total);
    }

    #[test]
    fn leading_term_is_monotone_convex_and_above_intrinsic() {
        let q = QuadratureConfig::default();
        let tau = 0.25;
        let strikes: Vec<f64> = (0..21).map(|i| 1600.0 + 40.0 * i as f64).collect();
        let specs: Vec<_> = strikes.iter().map(|&k| SpxOptionSpec::call(2000.0, k, tau)).collect();
        let prices: Vec<f64> = price_spx_batch(&specs, S, &P, &q)
            .into_iter()
            .map(|r| r.unwrap().leading)
            .collect();
        let tol = q.abs_tol * 2000.0;
        for (p, k) in prices.iter().zip(&strikes) {
            assert!(*p >= (2000.0 - k * (-P.r * tau).exp()).max(0.0) - tol);
        }
        for w in prices.windows(2) {
            assert!(w[1] <= w[0] + tol);
        }
        for w in prices.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -tol);
        }
    }

    #[test]
    fn contour_shift_must_exceed_one() {
        let bad = QuadratureConfig {
            contour_shift: 0.9,
            ..Default::default()
        };
        let spec = SpxOptionSpec::call(2000.0, 2000.0, 0.25);
        assert!(matches!(
            price_spx_call(&spec, S, &P, &bad),
            Err(Error::ContourViolation { .. })
        ));
    }

    #[test]
    fn short_maturity_carries_a_warning() {
        let spec = SpxOptionSpec::call(2000.0, 2000.0, 0.5 / 365.0);
        let r = price_spx_call(&spec, S, &P, &QuadratureConfig::default()).unwrap();
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn tiny_budget_reports_non_convergence() {
        let q = QuadratureConfig {
            max_nodes: 300,
            abs_tol: 1e-14,
            rel_tol: 1e-14,
            ..Default::default()
        };
        let spec = SpxOptionSpec::call(2000.0, 2000.0, 0.25);
        assert!(matches!(
            price_spx_call(&spec, S, &P, &q),
            Err(Error::Quadrature(_))
        ));
    }
}
