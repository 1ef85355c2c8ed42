//! Model parameters, hidden states and the algebra linking the VIX to the
//! two variance factors.
//!
//! The VIX squared is the risk-neutral expectation of average spot variance
//! `Y + Z` over the next thirty days. Because both factors have affine
//! conditional means, that expectation is linear in the current state:
//!
//! ```text
//! (VIX / 100)^2 = a1 * y + a2 * z + (a3 + a4) * theta
//! ```
//!
//! with weights that depend only on `kappa` and `epsilon`.

use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, Error, Result};
use crate::quad::Tolerance;

/// Thirty calendar days, the horizon of the VIX, in years.
pub const TAU0: f64 = 30.0 / 365.0;

/// Parameters of the two-factor model under the pricing measure.
///
/// `epsilon = 0` is accepted and denotes the `epsilon -> 0` limit model, in
/// which only the leading-order prices survive (set `w3_eps = 0` as well to
/// switch the SPX correction off).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Mean-reversion rate of the slow factor (1/year).
    pub kappa: f64,
    /// Long-run level of the slow factor (annualized variance).
    pub theta: f64,
    /// Volatility of the slow factor.
    pub sigma: f64,
    /// Correlation between the second price driver and the slow factor.
    pub rho: f64,
    /// Fast time scale (years).
    pub epsilon: f64,
    /// Coefficient of the first-order SPX correction.
    pub w3_eps: f64,
    /// Risk-free rate (1/year).
    pub r: f64,
}

impl ModelParams {
    /// Values fitted to 2016–2017 SPX and VIX options, with a 2% rate.
    pub const REFERENCE: ModelParams = ModelParams {
        kappa: 3.58,
        theta: 0.021,
        sigma: 0.347,
        rho: -1.0,
        epsilon: 0.0096,
        w3_eps: 0.0150,
        r: 0.02,
    };

    pub fn validate(&self) -> Result<()> {
        check_positive("kappa", self.kappa)?;
        check_positive("theta", self.theta)?;
        check_positive("sigma", self.sigma)?;
        check_non_negative("epsilon", self.epsilon)?;
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("must lie in [-1, 1], got {}", self.rho),
            });
        }
        if !self.w3_eps.is_finite() {
            return Err(Error::InvalidParameter {
                name: "w3_eps",
                reason: "must be finite".into(),
            });
        }
        if !self.r.is_finite() {
            return Err(Error::InvalidParameter {
                name: "r",
                reason: "must be finite".into(),
            });
        }
        if self.kappa * self.epsilon >= 1.0 {
            return Err(Error::TimeScaleSeparation {
                product: self.kappa * self.epsilon,
            });
        }
        Ok(())
    }

    /// Same parameters with the fast factor switched off (`epsilon = 0`, `w3_eps = 0`).
    pub fn leading_order(&self) -> ModelParams {
        ModelParams {
            epsilon: 0.0,
            w3_eps: 0.0,
            ..*self
        }
    }

    /// `2 kappa theta > sigma^2`. Recorded only; nothing enforces it.
    pub fn satisfies_feller(&self) -> bool {
        2.0 * self.kappa * self.theta > self.sigma * self.sigma
    }

    pub fn weights(&self) -> Result<VixWeights> {
        vix_weights(self.kappa, self.epsilon)
    }
}

/// Latent variance pair on one date.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenState {
    /// Fast factor.
    pub y: f64,
    /// Slow factor.
    pub z: f64,
}

impl HiddenState {
    pub const fn new(y: f64, z: f64) -> Self {
        HiddenState { y, z }
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("y", self.y)?;
        check_non_negative("z", self.z)?;
        if self.y == 0.0 && self.z == 0.0 {
            return Err(Error::InvalidParameter {
                name: "state",
                reason: "y and z cannot both be zero".into(),
            });
        }
        Ok(())
    }
}

/// Weights of the VIX-to-state relation and their `epsilon -> 0` limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VixWeights {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a2_star: f64,
    pub a4_star: f64,
    pub tau0: f64,
}

impl VixWeights {
    /// Coefficient of `theta` in the squared VIX.
    pub fn theta_weight(&self) -> f64 {
        self.a3 + self.a4
    }

    /// Heston-model weights: `b2* = a2*/2`, `b4* = (1 + a4*)/2`.
    pub fn heston_weights(&self) -> (f64, f64) {
        (0.5 * self.a2_star, 0.5 * (1.0 + self.a4_star))
    }
}

/// `(1 - e^{-x}) / x`, accurate for small `x`.
fn relaxation(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - 0.5 * x
    } else {
        -(-x).exp_m1() / x
    }
}

/// Computes the VIX weights for a given mean-reversion rate and fast time scale.
///
/// `epsilon = 0` returns the limiting weights (`a1 = 0`, `a2 = a2*`).
pub fn vix_weights(kappa: f64, epsilon: f64) -> Result<VixWeights> {
    check_positive("kappa", kappa)?;
    check_non_negative("epsilon", epsilon)?;
    if kappa * epsilon >= 1.0 {
        return Err(Error::TimeScaleSeparation {
            product: kappa * epsilon,
        });
    }
    let slow = relaxation(kappa * TAU0);
    let a1 = if epsilon == 0.0 {
        0.0
    } else {
        relaxation(TAU0 / epsilon)
    };
    let a2 = slow + (slow - a1) / (1.0 - kappa * epsilon);
    let a2_star = 2.0 * slow;
    Ok(VixWeights {
        a1,
        a2,
        a3: 1.0 - a1,
        a4: 1.0 - a2,
        a2_star,
        a4_star: 1.0 - a2_star,
        tau0: TAU0,
    })
}

/// Model VIX level (index points) implied by a hidden state.
pub fn vix_from_state(state: HiddenState, params: &ModelParams) -> Result<f64> {
    check_non_negative("y", state.y)?;
    check_non_negative("z", state.z)?;
    let w = params.weights()?;
    let radicand = w.a1 * state.y + w.a2 * state.z + w.theta_weight() * params.theta;
    if radicand < 0.0 || !radicand.is_finite() {
        return Err(Error::NegativeRadicand { radicand });
    }
    Ok(100.0 * radicand.sqrt())
}

/// `epsilon -> 0` limit of the model VIX, which depends on `z` only.
pub fn vix_limit_from_z(z: f64, params: &ModelParams) -> Result<f64> {
    check_non_negative("z", z)?;
    let w = params.weights()?;
    let radicand = w.a2_star * z + (1.0 + w.a4_star) * params.theta;
    if radicand < 0.0 {
        return Err(Error::NegativeRadicand { radicand });
    }
    Ok(100.0 * radicand.sqrt())
}

/// Solves the VIX constraint for the slow factor given the fast factor.
pub fn z_from_vix_given_y(vix: f64, y: f64, params: &ModelParams) -> Result<f64> {
    check_positive("vix", vix)?;
    check_non_negative("y", y)?;
    let w = params.weights()?;
    let level = (vix / 100.0).powi(2);
    let z = (level - w.a1 * y - w.theta_weight() * params.theta) / w.a2;
    if z < 0.0 {
        return Err(Error::InfeasibleState { z });
    }
    Ok(z)
}

/// Largest fast-factor value compatible with a VIX print (the one giving `z = 0`).
pub fn max_y_for_vix(vix: f64, params: &ModelParams) -> Result<f64> {
    check_positive("vix", vix)?;
    let w = params.weights()?;
    if w.a1 == 0.0 {
        return Err(Error::InvalidParameter {
            name: "epsilon",
            reason: "fast factor does not enter the VIX when epsilon = 0".into(),
        });
    }
    Ok(((vix / 100.0).powi(2) - w.theta_weight() * params.theta) / w.a1)
}

/// Heston variance implied by a VIX print: `(VIX/100)^2 = b2* v + b4* theta`.
pub fn z_from_vix_heston(vix: f64, kappa: f64, theta: f64) -> Result<f64> {
    check_positive("vix", vix)?;
    check_positive("theta", theta)?;
    let (b2, b4) = vix_weights(kappa, 0.0)?.heston_weights();
    let z = ((vix / 100.0).powi(2) - b4 * theta) / b2;
    if z < 0.0 {
        return Err(Error::InfeasibleState { z });
    }
    Ok(z)
}

/// Heston-model VIX implied by the variance `v`.
pub fn vix_from_heston_variance(v: f64, kappa: f64, theta: f64) -> Result<f64> {
    check_non_negative("v", v)?;
    let (b2, b4) = vix_weights(kappa, 0.0)?.heston_weights();
    Ok(100.0 * (b2 * v + b4 * theta).sqrt())
}

/// Settings for the Fourier-contour and density integrations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Imaginary part of the integration contour `k = u + i * contour_shift`.
    pub contour_shift: f64,
    /// Initial half-width `L` of the `u` range; doubled until the tail is negligible.
    pub truncation: f64,
    /// Absolute tolerance per unit of strike (SPX uses `abs_tol * K`).
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_nodes: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            contour_shift: 1.5,
            truncation: 200.0,
            abs_tol: 1e-8,
            rel_tol: 1e-8,
            max_nodes: 200_000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.contour_shift > 1.0) {
            return Err(Error::ContourViolation {
                shift: self.contour_shift,
            });
        }
        check_positive("truncation", self.truncation)?;
        check_positive("abs_tol", self.abs_tol)?;
        check_positive("rel_tol", self.rel_tol)?;
        if self.max_nodes < 15 {
            return Err(Error::InvalidParameter {
                name: "max_nodes",
                reason: "at least one Kronrod panel (15 nodes) is required".into(),
            });
        }
        Ok(())
    }

    pub(crate) fn tolerance(&self, scale: f64) -> Tolerance {
        Tolerance::new(self.abs_tol * scale, self.rel_tol, self.max_nodes)
    }
}
