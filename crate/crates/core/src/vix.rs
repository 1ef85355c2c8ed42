//! VIX option prices from the transition law of the slow factor.
//!
//! To leading order the terminal VIX is a function of `Z_T` alone, and `Z_T`
//! is a scaled non-central chi-square variable. The first correction adds a
//! linear term in `Z_T` and in the current gap `y - z`, damped by
//! `exp(-tau / epsilon)`.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, Error, Result};
use crate::heston::HestonParams;
use crate::model::{HiddenState, ModelParams, QuadratureConfig, VixWeights};
use crate::ncx2::{expect, expect_segments, Ncx2Params};
use crate::price::{maturity_warnings, PriceDecomposition};

/// One VIX option. The strike is in index points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VixOptionSpec {
    pub strike: f64,
    pub tau: f64,
    pub is_call: bool,
}

impl VixOptionSpec {
    pub fn call(strike: f64, tau: f64) -> Self {
        VixOptionSpec {
            strike,
            tau,
            is_call: true,
        }
    }

    pub fn put(strike: f64, tau: f64) -> Self {
        VixOptionSpec {
            is_call: false,
            ..Self::call(strike, tau)
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("strike", self.strike)?;
        check_positive("tau", self.tau)
    }
}

/// Limiting VIX level `100 sqrt(a2* v + (1 + a4*) theta)` at slow variance `v`.
fn limit_level(v: f64, w: &VixWeights, theta: f64) -> f64 {
    100.0 * (w.a2_star * v + (1.0 + w.a4_star) * theta).sqrt()
}

/// Smallest `v` at which the limiting VIX reaches `strike`.
pub fn payoff_threshold(strike: f64, params: &ModelParams) -> Result<f64> {
    let w = params.weights()?;
    Ok(((strike / 100.0).powi(2) - (1.0 + w.a4_star) * params.theta) / w.a2_star)
}

/// Leading-order payoff `(VIX*(v) - K)+` on `{v >= v*}`.
pub fn payoff_h0(v: f64, params: &ModelParams, strike: f64) -> Result<f64> {
    let w = params.weights()?;
    Ok(h0(v, &w, params.theta, strike))
}

fn h0(v: f64, w: &VixWeights, theta: f64, strike: f64) -> f64 {
    (limit_level(v, w, theta) - strike).max(0.0)
}

/// First-order payoff correction
/// `100 (2 e^{-tau/eps} a1 (y - z) + kappa eps a2* (v - theta)) / (4 sqrt(a2* v + (1 + a4*) theta))`
/// on `{v >= v*}`.
pub fn payoff_h1star(
    v: f64,
    state: HiddenState,
    tau: f64,
    params: &ModelParams,
    strike: f64,
) -> Result<f64> {
    let w = params.weights()?;
    let threshold = payoff_threshold(strike, params)?;
    if v < threshold {
        return Ok(0.0);
    }
    Ok(H1::new(state, tau, params, &w).eval(v))
}

/// `h1*` with its `v`-independent pieces precomputed.
struct H1 {
    gap: f64,
    slope: f64,
    theta: f64,
    a2_star: f64,
    floor: f64,
}

impl H1 {
    fn new(state: HiddenState, tau: f64, params: &ModelParams, w: &VixWeights) -> Self {
        // exp(-tau/eps) underflows to exactly zero once tau/eps > 745.
        let damp = if params.epsilon > 0.0 {
            (-tau / params.epsilon).exp()
        } else {
            0.0
        };
        H1 {
            gap: 2.0 * damp * w.a1 * (state.y - state.z),
            slope: params.kappa * params.epsilon * w.a2_star,
            theta: params.theta,
            a2_star: w.a2_star,
            floor: (1.0 + w.a4_star) * params.theta,
        }
    }

    fn eval(&self, v: f64) -> f64 {
        let root = (self.a2_star * v + self.floor).sqrt();
        100.0 * (self.gap + self.slope * (v - self.theta)) / (4.0 * root)
    }
}

/// Leading price and correction of a VIX call.
pub fn price_vix_call(
    spec: &VixOptionSpec,
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<PriceDecomposition> {
    spec.validate()?;
    params.validate()?;
    check_non_negative("y", state.y)?;
    check_non_negative("z", state.z)?;
    let w = params.weights()?;
    let law = Ncx2Params::for_cir(params.kappa, params.theta, params.sigma, state.z, spec.tau)?;
    let threshold = payoff_threshold(spec.strike, params)?;
    let h1 = H1::new(state, spec.tau, params, &w);
    let delta = law.delta;
    let theta = params.theta;
    let strike = spec.strike;

    let [p0, p1] = expect(
        &law,
        threshold / delta,
        |zeta| {
            let v = delta * zeta;
            [h0(v, &w, theta, strike), h1.eval(v)]
        },
        &quad.tolerance(1.0),
    )?;
    let disc = (-params.r * spec.tau).exp();
    let mut out = PriceDecomposition::new(disc * p0, disc * p1);
    if out.total < 0.0 && out.total > -quad.abs_tol {
        out.total = 0.0;
    }
    out.warnings = maturity_warnings(spec.tau);
    Ok(out)
}

/// VIX put by parity against the forward, taken as the undiscounted zero-strike call.
pub fn price_vix_put(
    spec: &VixOptionSpec,
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<PriceDecomposition> {
    let call = price_vix_call(&VixOptionSpec::call(spec.strike, spec.tau), state, params, quad)?;
    let forward = price_vix_call(&VixOptionSpec::call(0.0, spec.tau), state, params, quad)?;
    let disc_k = spec.strike * (-params.r * spec.tau).exp();
    let mut p = PriceDecomposition::new(
        call.leading - forward.leading + disc_k,
        call.correction - forward.correction,
    );
    p.warnings = call.warnings;
    Ok(p)
}

pub fn price_vix(
    spec: &VixOptionSpec,
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<PriceDecomposition> {
    if spec.is_call {
        price_vix_call(spec, state, params, quad)
    } else {
        price_vix_put(spec, state, params, quad)
    }
}

/// Prices several VIX options sharing one maturity with a single pass over the
/// transition density.
///
/// Every call price is `A(v*) - K B(v*)` plus the correction `C(v*)`, where
/// `A`, `B` and `C` are tail integrals of the limiting level, of one and of
/// `h1*` above the strike's threshold. Puts use parity against the zero-strike call.
pub fn price_vix_strip(
    specs: &[VixOptionSpec],
    state: HiddenState,
    params: &ModelParams,
    quad: &QuadratureConfig,
) -> Result<Vec<PriceDecomposition>> {
    let Some(first) = specs.first() else {
        return Ok(Vec::new());
    };
    let tau = first.tau;
    for s in specs {
        s.validate()?;
        if s.tau != tau {
            return Err(Error::InvalidParameter {
                name: "tau",
                reason: "all options of a strip must share one maturity".into(),
            });
        }
    }
    params.validate()?;
    check_non_negative("y", state.y)?;
    check_non_negative("z", state.z)?;
    let w = params.weights()?;
    let law = Ncx2Params::for_cir(params.kappa, params.theta, params.sigma, state.z, tau)?;
    let h1 = H1::new(state, tau, params, &w);
    let delta = law.delta;
    let theta = params.theta;

    let mut strikes: Vec<f64> = specs.iter().map(|s| s.strike).collect();
    if specs.iter().any(|s| !s.is_call) {
        strikes.push(0.0);
    }
    strikes.sort_by(f64::total_cmp);
    strikes.dedup();
    let cuts = strikes
        .iter()
        .map(|&k| payoff_threshold(k, params).map(|t| t / delta))
        .collect::<Result<Vec<f64>>>()?;
    let pieces = expect_segments(
        &law,
        &cuts,
        |zeta| {
            let v = delta * zeta;
            [limit_level(v, &w, theta), 1.0, h1.eval(v)]
        },
        &quad.tolerance(1.0),
    )?;
    let mut tails = pieces.clone();
    for i in (0..tails.len().saturating_sub(1)).rev() {
        for c in 0..3 {
            tails[i][c] += tails[i + 1][c];
        }
    }
    let disc = (-params.r * tau).exp();
    let call_at = |k: f64| -> (f64, f64) {
        let i = strikes.partition_point(|&s| s < k);
        let t = tails[i];
        (disc * (t[0] - k * t[1]), disc * t[2])
    };
    let warnings = maturity_warnings(tau);
    Ok(specs
        .iter()
        .map(|s| {
            let (lead, corr) = call_at(s.strike);
            let mut p = if s.is_call {
                PriceDecomposition::new(lead.max(0.0), corr)
            } else {
                let (f_lead, f_corr) = call_at(0.0);
                PriceDecomposition::new(lead - f_lead + s.strike * disc, corr - f_corr)
            };
            p.warnings = warnings.clone();
            p
        })
        .collect())
}

/// Leading-order model whose VIX price equals the Heston one.
///
/// Heston variance `v` with `(kappa, theta_h, sigma_h)` has the same law as
/// `2 Z` with `(kappa, theta_h / 2, sigma_h / sqrt 2)`, and the Heston VIX
/// weights are half the limiting weights of the two-factor model.
pub fn heston_as_leading_order(h: &HestonParams, r: f64) -> ModelParams {
    ModelParams {
        kappa: h.kappa,
        theta: 0.5 * h.theta,
        sigma: h.sigma / std::f64::consts::SQRT_2,
        rho: h.rho,
        epsilon: 0.0,
        w3_eps: 0.0,
        r,
    }
}

/// Heston VIX call with current variance `v`.
pub fn heston_vix_call(
    h: &HestonParams,
    v: f64,
    strike: f64,
    tau: f64,
    r: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    h.validate()?;
    let p = heston_as_leading_order(h, r);
    let state = HiddenState::new(0.5 * v, 0.5 * v);
    Ok(price_vix_call(&VixOptionSpec::call(strike, tau), state, &p, quad)?.leading)
}

/// Rejects negative totals beyond tolerance, which only arise from a broken state.
pub fn check_non_negative_price(p: &PriceDecomposition) -> Result<()> {
    if p.total < 0.0 {
        return Err(Error::InvalidParameter {
            name: "price",
            reason: format!("negative VIX option price {}", p.total),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{vix_weights, TAU0};

    const P: ModelParams = ModelParams::REFERENCE;
    const S1: HiddenState = HiddenState::new(0.0234, 0.0194);
    const S2: HiddenState = HiddenState::new(0.0110, 0.0203);

    #[test]
    fn h0_examples() {
        let w = vix_weights(P.kappa, P.epsilon).unwrap();
        let kink = payoff_threshold(18.0, &P).unwrap();
        assert!(payoff_h0(kink, &P, 18.0).unwrap().abs() < 1e-12);
        let v = 0.013;
        let full = 100.0 * (w.a2_star * v + (1.0 + w.a4_star) * P.theta).sqrt();
        assert!((payoff_h0(v, &P, 0.0).unwrap() - full).abs() < 1e-12);
        let at_theta = payoff_h0(P.theta, &P, 15.0).unwrap();
        assert!((at_theta - (100.0 * (2.0 * P.theta).sqrt() - 15.0)).abs() < 1e-12);
        assert!((at_theta - 5.494).abs() < 1e-3);
    }

    #[test]
    fn h1star_examples() {
        let flat = HiddenState::new(0.02, 0.02);
        assert!(payoff_h1star(P.theta, flat, 0.1, &P, 0.0).unwrap().abs() < 1e-15);

        // tau/eps large: the kappa eps term dominates.
        let w = vix_weights(P.kappa, P.epsilon).unwrap();
        let v = 0.03;
        let root = (w.a2_star * v + (1.0 + w.a4_star) * P.theta).sqrt();
        let gap = 2.0 * (-0.25 / P.epsilon).exp() * w.a1 * (S1.y - S1.z);
        let expected = 100.0 * (gap + P.kappa * P.epsilon * w.a2_star * (v - P.theta)) / (4.0 * root);
        assert!(gap.abs() < 1e-8 * expected.abs());
        let got = payoff_h1star(v, S1, 0.25, &P, 0.0).unwrap();
        assert!((got - expected).abs() < 1e-12 * expected.abs());
        assert_eq!(payoff_h1star(0.0, S1, 0.25, &P, 30.0).unwrap(), 0.0);
    }

    #[test]
    fn h1star_matches_first_order_expansion() {
        // Second route: eps * H'(VIX*^2) * ΔVIX^2 with u = v + e^{-tau/eps}(y - z).
        let (v, tau, k) = (0.03, TAU0, 18.0);
        let eps = P.epsilon;
        let u = v + (-tau / eps).exp() * (S1.y - S1.z);
        let vix_star_sq = 1e4 * (2.0 * (1.0 - (-P.kappa * TAU0).exp()) / (P.kappa * TAU0) * v
            + (2.0 - 2.0 * (1.0 - (-P.kappa * TAU0).exp()) / (P.kappa * TAU0)) * P.theta);
        let dvix_sq = 1e4
            * (eps / TAU0)
            * ((1.0 - (-TAU0 / eps).exp()) * (u - v) + (1.0 - (-P.kappa * TAU0).exp()) * (v - P.theta));
        let expected = dvix_sq / (2.0 * vix_star_sq.sqrt());
        let got = payoff_h1star(v, S1, tau, &P, k).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn prices_decrease_and_are_convex_in_strike() {
        let q = QuadratureConfig::default();
        let strikes: Vec<f64> = (0..16).map(|i| 15.0 + i as f64).collect();
        let prices: Vec<f64> = strikes
            .iter()
            .map(|&k| price_vix_call(&VixOptionSpec::call(k, TAU0), S1, &P, &q).unwrap().total)
            .collect();
        for w in prices.windows(2) {
            assert!(w[1] < w[0]);
        }
        for w in prices.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -q.abs_tol);
        }
        assert!(prices.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn zero_strike_leading_term_is_expected_limit_vix() {
        let q = QuadratureConfig::default();
        let tau = 0.1;
        let law = Ncx2Params::for_cir(P.kappa, P.theta, P.sigma, S2.z, tau).unwrap();
        let w = vix_weights(P.kappa, P.epsilon).unwrap();
        // Independent route: integrate in v against the scaled density.
        let tol = crate::quad::Tolerance::new(1e-12, 1e-12, 400_000);
        let direct: f64 = crate::quad::integrate(
            |v: f64| {
                limit_level(v, &w, P.theta) * crate::ncx2::ncx2_pdf(v / law.delta, &law).unwrap()
                    / law.delta
            },
            0.0,
            0.5,
            &tol,
        )
        .unwrap()
        .value;
        let p = price_vix_call(&VixOptionSpec::call(0.0, tau), S2, &P, &q).unwrap();
        assert!((p.leading - (-P.r * tau).exp() * direct).abs() < 1e-7);
    }

    #[test]
    fn correction_increases_with_y_when_gap_is_live() {
        let q = QuadratureConfig::default();
        let tau = 2.0 * P.epsilon;
        let spec = VixOptionSpec::call(20.0, tau);
        let lo = price_vix_call(&spec, HiddenState::new(0.015, 0.02), &P, &q).unwrap();
        let hi = price_vix_call(&spec, HiddenState::new(0.025, 0.02), &P, &q).unwrap();
        assert!(hi.correction > lo.correction);
        assert_eq!(hi.leading, lo.leading);
    }

    #[test]
    fn put_call_parity() {
        let q = QuadratureConfig::default();
        let call = price_vix_call(&VixOptionSpec::call(21.0, TAU0), S1, &P, &q).unwrap();
        let put = price_vix_put(&VixOptionSpec::put(21.0, TAU0), S1, &P, &q).unwrap();
        let fwd = price_vix_call(&VixOptionSpec::call(0.0, TAU0), S1, &P, &q).unwrap();
        let lhs = call.total - put.total;
        let rhs = fwd.total - 21.0 * (-P.r * TAU0).exp();
        assert!((lhs - rhs).abs() < 1e-12);
        assert!(put.total > 0.0);
    }

    #[test]
    fn heston_vix_at_zero_strike_matches_heston_level_expectation() {
        let h = HestonParams::REFERENCE;
        let q = QuadratureConfig::default();
        let tau = 0.2;
        let v0 = 0.05;
        let price = heston_vix_call(&h, v0, 0.0, tau, 0.0, &q).unwrap();
        // Direct: E[100 sqrt(b2 V_T + b4 theta)] with V_T scaled ncx2 under Heston parameters.
        let law = Ncx2Params::for_cir(h.kappa, h.theta, h.sigma, v0, tau).unwrap();
        let (b2, b4) = vix_weights(h.kappa, 0.0).unwrap().heston_weights();
        let tol = crate::quad::Tolerance::new(1e-12, 1e-12, 400_000);
        let direct: f64 = expect(&law, 0.0, |zeta| 100.0 * (b2 * law.delta * zeta + b4 * h.theta).sqrt(), &tol)
            .unwrap();
        assert!((price - direct).abs() < 1e-7, "{price} vs {direct}");
    }

    #[test]
    fn strip_matches_single_options() {
        let quad = QuadratureConfig::default();
        let tau = 30.0 / 365.0;
        let specs = [
            VixOptionSpec::call(25.0, tau),
            VixOptionSpec::put(15.0, tau),
            VixOptionSpec::call(18.0, tau),
            VixOptionSpec::call(0.0, tau),
            VixOptionSpec::put(20.0, tau),
            VixOptionSpec::call(18.0, tau),
        ];
        for state in [S1, HiddenState::new(0.0110, 0.0203)] {
            let strip = price_vix_strip(&specs, state, &P, &quad).unwrap();
            for (s, got) in specs.iter().zip(&strip) {
                let single = price_vix(s, state, &P, &quad).unwrap();
                assert!((got.leading - single.leading).abs() < 1e-7, "{s:?}: {got:?} vs {single:?}");
                assert!((got.correction - single.correction).abs() < 1e-8);
            }
        }
        assert!(price_vix_strip(&[VixOptionSpec::call(20.0, 0.1), VixOptionSpec::call(20.0, 0.2)], S1, &P, &quad).is_err());
    }

}
