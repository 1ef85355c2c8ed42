//! Monte Carlo simulation of the full two-factor dynamics.
//!
//! Full-truncation Euler on both variance factors, log-Euler on the price.
//! A quadratic-exponential step is available as a cross-check.
//! Each antithetic pair draws from its own ChaCha stream, indexed by the pair
//! number, so results do not depend on how pairs are scheduled across threads.
//! Chunk sums are reduced in chunk order, which keeps estimates bitwise
//! reproducible for a given seed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_non_negative, check_positive, Error, Result};
use crate::model::{HiddenState, ModelParams, VixWeights};
use crate::quad::{integrate, Tolerance};
use crate::spx::SpxOptionSpec;
use crate::vix::VixOptionSpec;

/// Model parameters together with the fast-factor inputs that the analytic
/// formulas only see through `w3_eps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McModelParams {
    pub model: ModelParams,
    /// Correlation between the first price driver and the fast factor.
    pub eta: f64,
    /// Volatility of the fast factor.
    pub nu: f64,
}

/// Default fast-factor volatility for oracle runs.
pub const DEFAULT_NU: f64 = 0.433;

/// `W3 = -eta nu sqrt(eps) / sqrt 2`.
pub fn w3_from(eta: f64, nu: f64, epsilon: f64) -> f64 {
    -eta * nu * epsilon.sqrt() / std::f64::consts::SQRT_2
}

impl McModelParams {
    /// Checks that `(eta, nu)` reproduce `model.w3_eps`.
    pub fn new(model: ModelParams, eta: f64, nu: f64) -> Result<Self> {
        let p = McModelParams { model, eta, nu };
        p.validate()?;
        let implied = w3_from(eta, nu, model.epsilon);
        if (implied - model.w3_eps).abs() > 1e-10 * model.w3_eps.abs().max(1.0) {
            return Err(Error::McConfig(format!(
                "eta = {eta}, nu = {nu} give W3 = {implied}, not {}",
                model.w3_eps
            )));
        }
        Ok(p)
    }

    /// Solves for `eta` given `nu` so that `W3` matches the model.
    pub fn with_nu(model: ModelParams, nu: f64) -> Result<Self> {
        check_positive("nu", nu)?;
        check_positive("epsilon", model.epsilon)?;
        let eta = -std::f64::consts::SQRT_2 * model.w3_eps / (nu * model.epsilon.sqrt());
        Self::new(model, eta, nu)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        check_positive("epsilon", self.model.epsilon)?;
        check_non_negative("nu", self.nu)?;
        if !(self.eta.abs() <= 1.0) {
            return Err(Error::InvalidParameter {
                name: "eta",
                reason: format!("|eta| must be at most 1, got {}", self.eta),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    FullTruncationEuler,
    /// Andersen's quadratic-exponential step for both variance factors with the
    /// matching log-price update. The fast factor reverts to the step's average
    /// slow factor.
    QuadraticExponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of paths, antithetic partners included.
    pub paths: usize,
    /// Time step; `None` selects `min(epsilon / 20, 1 / 2000)`.
    pub dt: Option<f64>,
    pub seed: u64,
    pub antithetic: bool,
    pub scheme: Scheme,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            paths: 100_000,
            dt: None,
            seed: 20240501,
            antithetic: true,
            scheme: Scheme::FullTruncationEuler,
        }
    }
}

impl McConfig {
    pub fn with_paths(paths: usize) -> Self {
        McConfig {
            paths,
            ..Default::default()
        }
    }

    pub fn default_dt(epsilon: f64) -> f64 {
        (epsilon / 20.0).min(1.0 / 2000.0)
    }

    pub fn step(&self, epsilon: f64) -> f64 {
        self.dt.unwrap_or_else(|| Self::default_dt(epsilon))
    }

    pub fn validate(&self, epsilon: f64) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::McConfig("at least one path is required".into()));
        }
        let dt = self.step(epsilon);
        if !(dt > 0.0) {
            return Err(Error::McConfig(format!("time step must be positive, got {dt}")));
        }
        if dt > epsilon / 20.0 * (1.0 + 1e-12) {
            return Err(Error::McConfig(format!(
                "time step {dt} exceeds epsilon / 20 = {}",
                epsilon / 20.0
            )));
        }
        Ok(())
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub standard_error: f64,
    pub paths_used: usize,
}

/// Terminal values of all three state variables, one entry per path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TerminalSamples {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

struct Stepper {
    r: f64,
    kappa: f64,
    theta: f64,
    sigma: f64,
    inv_eps: f64,
    fast_vol: f64,
    eta_c: f64,
    rho: f64,
    rho_c: f64,
    eta: f64,
    dt: f64,
    sqrt_dt: f64,
    steps: usize,
    scheme: Scheme,
    qe_y: QeFactor,
    qe_z: QeFactor,
}

/// Step-size dependent constants of one CIR factor under the QE step.
struct QeFactor {
    decay: f64,
    /// `vol^2 e (1 - e) / speed`
    c1: f64,
    /// `vol^2 (1 - e)^2 / (2 speed)`
    c2: f64,
}

impl QeFactor {
    fn new(speed: f64, vol: f64, dt: f64) -> Self {
        let e = (-speed * dt).exp();
        QeFactor {
            decay: e,
            c1: vol * vol * e * (1.0 - e) / speed,
            c2: vol * vol * (1.0 - e) * (1.0 - e) / (2.0 * speed),
        }
    }

    /// Next value from a standard normal draw; the uniform of the exponential branch is `N(g)`.
    fn step(&self, v: f64, level: f64, g: f64) -> f64 {
        let m = level + (v - level) * self.decay;
        if m <= 0.0 {
            return 0.0;
        }
        let s2 = v * self.c1 + level * self.c2;
        let psi = s2 / (m * m);
        if psi <= 1.5 {
            let k = 2.0 / psi;
            let b2 = k - 1.0 + (k * (k - 1.0)).sqrt();
            let a = m / (1.0 + b2);
            a * (b2.sqrt() + g).powi(2)
        } else {
            let p = (psi - 1.0) / (psi + 1.0);
            let beta = (1.0 - p) / m;
            // 1 - U computed directly to keep precision in the upper tail.
            let one_minus_u = 0.5 * statrs::function::erf::erfc(g / std::f64::consts::SQRT_2);
            if one_minus_u >= 1.0 - p {
                0.0
            } else {
                ((1.0 - p) / one_minus_u).ln() / beta
            }
        }
    }
}

impl Stepper {
    fn new(p: &McModelParams, horizon: f64, dt: f64, scheme: Scheme) -> Self {
        let steps = (horizon / dt).ceil().max(1.0) as usize;
        let dt = horizon / steps as f64;
        let m = &p.model;
        Stepper {
            r: m.r,
            kappa: m.kappa,
            theta: m.theta,
            sigma: m.sigma,
            inv_eps: 1.0 / m.epsilon,
            fast_vol: std::f64::consts::SQRT_2 * p.nu / m.epsilon.sqrt(),
            eta: p.eta,
            eta_c: (1.0 - p.eta * p.eta).max(0.0).sqrt(),
            rho: m.rho,
            rho_c: (1.0 - m.rho * m.rho).max(0.0).sqrt(),
            dt,
            sqrt_dt: dt.sqrt(),
            steps,
            scheme,
            qe_y: QeFactor::new(1.0 / m.epsilon, std::f64::consts::SQRT_2 * p.nu / m.epsilon.sqrt(), dt),
            qe_z: QeFactor::new(m.kappa, m.sigma, dt),
        }
    }

    /// Advances one pair of antithetic paths (or one path when `pair` is false).
    fn run(&self, rng: &mut ChaCha8Rng, start: (f64, f64, f64), pair: bool) -> [(f64, f64, f64); 2] {
        let (lx0, y0, z0) = start;
        let mut s = [(lx0, y0, z0); 2];
        let legs = if pair { 2 } else { 1 };
        for _ in 0..self.steps {
            let g: [f64; 4] = [
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
                rng.sample(StandardNormal),
            ];
            for (leg, st) in s.iter_mut().enumerate().take(legs) {
                let sign = if leg == 0 { 1.0 } else { -1.0 };
                let w1 = sign * g[0];
                let wy = sign * (self.eta * g[0] + self.eta_c * g[1]);
                let w2 = sign * g[2];
                let wz = sign * (self.rho * g[2] + self.rho_c * g[3]);
                let (lx, y, z) = *st;
                if self.scheme == Scheme::QuadraticExponential {
                    *st = self.qe_step(lx, y, z, sign, &g);
                    continue;
                }
                let yp = y.max(0.0);
                let zp = z.max(0.0);
                let lx = lx + (self.r - 0.5 * (yp + zp)) * self.dt
                    + self.sqrt_dt * (yp.sqrt() * w1 + zp.sqrt() * w2);
                let y = y + self.inv_eps * (zp - yp) * self.dt + self.fast_vol * (yp * self.dt).sqrt() * wy;
                let z = z + self.kappa * (self.theta - zp) * self.dt + self.sigma * (zp * self.dt).sqrt() * wz;
                *st = (lx, y, z);
            }
        }
        s
    }

    fn qe_step(&self, lx: f64, y: f64, z: f64, sign: f64, g: &[f64; 4]) -> (f64, f64, f64) {
        let dt = self.dt;
        let z1 = self.qe_z.step(z, self.theta, sign * g[3]);
        let zbar = 0.5 * (z + z1);
        let y1 = self.qe_y.step(y, zbar, sign * g[1]);
        let ybar = 0.5 * (y + y1);
        // Stochastic integrals recovered from the factor increments.
        let int_y = if self.fast_vol > 0.0 {
            (y1 - y - self.inv_eps * (zbar - ybar) * dt) / self.fast_vol
        } else {
            0.0
        };
        let int_z = (z1 - z - self.kappa * (self.theta - zbar) * dt) / self.sigma;
        let lx = lx
            + (self.r - 0.5 * (ybar + zbar)) * dt
            + self.eta * int_y
            + self.eta_c * (ybar * dt).sqrt() * sign * g[0]
            + self.rho * int_z
            + self.rho_c * (zbar * dt).sqrt() * sign * g[2];
        (lx, y1, z1)
    }
}

const PAIRS_PER_CHUNK: usize = 2048;

/// Runs the simulation and accumulates `N` payoff functionals of `(X_T, Y_T, Z_T)`.
///
/// With antithetics on, each pair contributes the average of its two payoffs
/// as one sample; `paths` is rounded up to an even number.
pub fn simulate_functionals<const N: usize, F>(
    params: &McModelParams,
    state0: HiddenState,
    x0: f64,
    horizon: f64,
    cfg: &McConfig,
    payoff: F,
) -> Result<[McEstimate; N]>
where
    F: Fn(f64, f64, f64) -> [f64; N] + Sync,
{
    params.validate()?;
    cfg.validate(params.model.epsilon)?;
    check_positive("x0", x0)?;
    check_positive("horizon", horizon)?;
    check_non_negative("y", state0.y)?;
    check_non_negative("z", state0.z)?;
    let stepper = Stepper::new(params, horizon, cfg.step(params.model.epsilon), cfg.scheme);
    let samples = if cfg.antithetic {
        cfg.paths.div_ceil(2)
    } else {
        cfg.paths
    };
    let chunks = samples.div_ceil(PAIRS_PER_CHUNK);
    let start = (x0.ln(), state0.y, state0.z);

    let partial: Vec<([f64; N], [f64; N])> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut sum = [0.0; N];
            let mut sq = [0.0; N];
            let lo = c * PAIRS_PER_CHUNK;
            let hi = (lo + PAIRS_PER_CHUNK).min(samples);
            for i in lo..hi {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(i as u64);
                let legs = stepper.run(&mut rng, start, cfg.antithetic);
                let mut v = payoff(legs[0].0.exp(), legs[0].1, legs[0].2);
                if cfg.antithetic {
                    let w = payoff(legs[1].0.exp(), legs[1].1, legs[1].2);
                    for (a, b) in v.iter_mut().zip(w) {
                        *a = 0.5 * (*a + b);
                    }
                }
                for k in 0..N {
                    sum[k] += v[k];
                    sq[k] += v[k] * v[k];
                }
            }
            (sum, sq)
        })
        .collect();

    let mut sum = [0.0; N];
    let mut sq = [0.0; N];
    for (s, q) in &partial {
        for k in 0..N {
            sum[k] += s[k];
            sq[k] += q[k];
        }
    }
    let n = samples as f64;
    let paths_used = if cfg.antithetic { 2 * samples } else { samples };
    Ok(std::array::from_fn(|k| {
        let mean = sum[k] / n;
        let var = if samples > 1 {
            ((sq[k] - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            standard_error: (var / n).sqrt(),
            paths_used,
        }
    }))
}

/// Terminal samples for every path, in path order (antithetic partners adjacent).
pub fn simulate_terminal(
    params: &McModelParams,
    state0: HiddenState,
    x0: f64,
    horizon: f64,
    cfg: &McConfig,
) -> Result<TerminalSamples> {
    params.validate()?;
    cfg.validate(params.model.epsilon)?;
    check_positive("x0", x0)?;
    check_positive("horizon", horizon)?;
    check_non_negative("y", state0.y)?;
    check_non_negative("z", state0.z)?;
    let stepper = Stepper::new(params, horizon, cfg.step(params.model.epsilon), cfg.scheme);
    let samples = if cfg.antithetic {
        cfg.paths.div_ceil(2)
    } else {
        cfg.paths
    };
    let start = (x0.ln(), state0.y, state0.z);
    let legs: Vec<[(f64, f64, f64); 2]> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            stepper.run(&mut rng, start, cfg.antithetic)
        })
        .collect();
    let mut out = TerminalSamples::default();
    for pair in legs {
        let take = if cfg.antithetic { 2 } else { 1 };
        for &(lx, y, z) in pair.iter().take(take) {
            out.x.push(lx.exp());
            out.y.push(y);
            out.z.push(z);
        }
    }
    Ok(out)
}

/// Discounted call or put prices at several strikes from one set of paths.
pub fn mc_price_spx_strikes(
    params: &McModelParams,
    state0: HiddenState,
    x0: f64,
    strikes: &[f64],
    tau: f64,
    is_call: bool,
    cfg: &McConfig,
) -> Result<Vec<McEstimate>> {
    let disc = (-params.model.r * tau).exp();
    let mut out = Vec::with_capacity(strikes.len());
    // Const-generic batches keep the accumulator on the stack.
    for chunk in strikes.chunks(8) {
        let mut ks = [f64::NAN; 8];
        ks[..chunk.len()].copy_from_slice(chunk);
        let est = simulate_functionals::<8, _>(params, state0, x0, tau, cfg, |x, _, _| {
            std::array::from_fn(|i| {
                let k = ks[i];
                if k.is_nan() {
                    0.0
                } else if is_call {
                    disc * (x - k).max(0.0)
                } else {
                    disc * (k - x).max(0.0)
                }
            })
        })?;
        out.extend_from_slice(&est[..chunk.len()]);
    }
    Ok(out)
}

pub fn mc_price_spx(
    params: &McModelParams,
    state0: HiddenState,
    spec: &SpxOptionSpec,
    cfg: &McConfig,
) -> Result<McEstimate> {
    spec.validate()?;
    Ok(mc_price_spx_strikes(params, state0, spec.x, &[spec.strike], spec.tau, spec.is_call, cfg)?[0])
}

/// Terminal VIX from the exact state relation (no expansion in `epsilon`).
fn terminal_vix(w: &VixWeights, theta: f64, y: f64, z: f64) -> f64 {
    100.0 * (w.a1 * y.max(0.0) + w.a2 * z.max(0.0) + w.theta_weight() * theta).sqrt()
}

/// Discounted VIX call or put prices at several strikes from one set of paths.
pub fn mc_price_vix_strikes(
    params: &McModelParams,
    state0: HiddenState,
    strikes: &[f64],
    tau: f64,
    is_call: bool,
    cfg: &McConfig,
) -> Result<Vec<McEstimate>> {
    let w = params.model.weights()?;
    let theta = params.model.theta;
    let disc = (-params.model.r * tau).exp();
    let mut out = Vec::with_capacity(strikes.len());
    for chunk in strikes.chunks(8) {
        let mut ks = [f64::NAN; 8];
        ks[..chunk.len()].copy_from_slice(chunk);
        let est = simulate_functionals::<8, _>(params, state0, 1.0, tau, cfg, |_, y, z| {
            let v = terminal_vix(&w, theta, y, z);
            std::array::from_fn(|i| {
                let k = ks[i];
                if k.is_nan() {
                    0.0
                } else if is_call {
                    disc * (v - k).max(0.0)
                } else {
                    disc * (k - v).max(0.0)
                }
            })
        })?;
        out.extend_from_slice(&est[..chunk.len()]);
    }
    Ok(out)
}

pub fn mc_price_vix(
    params: &McModelParams,
    state0: HiddenState,
    spec: &VixOptionSpec,
    cfg: &McConfig,
) -> Result<McEstimate> {
    spec.validate()?;
    Ok(mc_price_vix_strikes(params, state0, &[spec.strike], spec.tau, spec.is_call, cfg)?[0])
}

/// `E[Z_T]` for the slow factor.
pub fn slow_mean(p: &ModelParams, z: f64, t: f64) -> f64 {
    let e = (-p.kappa * t).exp();
    z * e + p.theta * (1.0 - e)
}

/// `Var[Z_T]` for the slow factor.
pub fn slow_variance(p: &ModelParams, z: f64, t: f64) -> f64 {
    let e = (-p.kappa * t).exp();
    let s2k = p.sigma * p.sigma / p.kappa;
    z * s2k * (e - e * e) + p.theta * s2k * 0.5 * (1.0 - e).powi(2)
}

/// `E[Y_T]` for the fast factor.
pub fn fast_mean(p: &ModelParams, y: f64, z: f64, t: f64) -> f64 {
    let ez = slow_mean(p, z, t);
    let fast = (-t / p.epsilon).exp();
    let ke = p.kappa * p.epsilon;
    ez + fast * (y - z) + ke / (1.0 - ke) * ((ez - p.theta) - fast * (z - p.theta))
}

/// Projection of `y - z` on the `n`-th normalized Laguerre eigenfunction of the
/// fast factor's generator, under its Gamma(`z / nu^2`, `nu^2`) invariant law.
pub fn spectral_coefficient_check(nu: f64, z: f64, n: usize) -> Result<f64> {
    check_positive("nu", nu)?;
    check_positive("z", z)?;
    let gamma = z / (nu * nu);
    let alpha = gamma - 1.0;
    let ln_norm = 0.5
        * (statrs::function::gamma::ln_gamma(n as f64 + 1.0) + statrs::function::gamma::ln_gamma(gamma)
            - statrs::function::gamma::ln_gamma(n as f64 + gamma));
    let norm = ln_norm.exp();
    // In units of w = y / nu^2: (y - z) = nu^2 (w - gamma).
    let g = |w: f64| nu * nu * (w - gamma) * norm * laguerre(n, alpha, w);
    let upper = gamma + 60.0 * gamma.sqrt() + 60.0 + 4.0 * n as f64;
    let tol = Tolerance::new(1e-15, 1e-14, 2_000_000);
    let value = if gamma < 1.0 {
        // w = t^(1/gamma) removes the w^(gamma-1) singularity at the origin.
        let inv = 1.0 / gamma;
        let ln_gamma1 = statrs::function::gamma::ln_gamma(gamma + 1.0);
        integrate(
            |t: f64| {
                let w = t.powf(inv);
                g(w) * (-w - ln_gamma1).exp()
            },
            0.0,
            upper.powf(gamma),
            &tol,
        )?
        .value
    } else {
        let ln_g = statrs::function::gamma::ln_gamma(gamma);
        integrate(
            |w: f64| {
                if w == 0.0 {
                    return if alpha == 0.0 { g(0.0) * (-ln_g).exp() } else { 0.0 };
                }
                g(w) * (alpha * w.ln() - w - ln_g).exp()
            },
            0.0,
            upper,
            &tol,
        )?
        .value
    };
    Ok(value)
}

/// Generalized Laguerre polynomial `L_n^(alpha)(x)` by three-term recurrence.
pub fn laguerre(n: usize, alpha: f64, x: f64) -> f64 {
    let mut prev = 1.0;
    if n == 0 {
        return prev;
    }
    let mut cur = 1.0 + alpha - x;
    for k in 1..n {
        let k = k as f64;
        let next = ((2.0 * k + 1.0 + alpha - x) * cur - (k + alpha) * prev) / (k + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::implied::bs_call;

    const P: ModelParams = ModelParams::REFERENCE;

    fn oracle() -> McModelParams {
        McModelParams::with_nu(P, DEFAULT_NU).unwrap()
    }

    #[test]
    fn default_split_is_admissible() {
        let p = oracle();
        assert!((p.eta + 0.5).abs() < 0.01, "eta = {}", p.eta);
        assert!((w3_from(p.eta, p.nu, P.epsilon) - P.w3_eps).abs() < 1e-15);
        assert!(McModelParams::new(P, -0.9, 0.433).is_err());
        assert!(McModelParams::with_nu(P, 0.1).is_err());
    }

    #[test]
    fn coarse_steps_are_rejected() {
        let cfg = McConfig {
            dt: Some(P.epsilon / 10.0),
            ..McConfig::with_paths(1000)
        };
        let spec = SpxOptionSpec::call(2000.0, 2000.0, 0.1);
        assert!(matches!(
            mc_price_spx(&oracle(), HiddenState::new(0.02, 0.02), &spec, &cfg),
            Err(Error::McConfig(_))
        ));
    }

    #[test]
    fn deterministic_variance_limit_is_black_scholes() {
        // sigma = nu = 0 and y = z = theta: constant variance 2 theta.
        let m = ModelParams {
            sigma: 1e-300,
            rho: 0.0,
            w3_eps: 0.0,
            ..P
        };
        let p = McModelParams { model: m, eta: 0.0, nu: 0.0 };
        let cfg = McConfig::with_paths(20_000);
        let s = HiddenState::new(P.theta, P.theta);
        let est = mc_price_spx_strikes(&p, s, 100.0, &[0.0001, 100.0], 0.5, true, &cfg).unwrap();
        assert!((est[0].mean - 100.0).abs() < 3.0 * est[0].standard_error + 1e-9);
        let bs = bs_call(100.0, 100.0, 0.5, P.r, (2.0 * P.theta).sqrt());
        assert!((est[1].mean - bs).abs() < 3.0 * est[1].standard_error, "{est:?} vs {bs}");
    }

    #[test]
    fn deterministic_factors_relax() {
        let m = ModelParams { sigma: 1e-300, ..P };
        let p = McModelParams { model: m, eta: 0.0, nu: 0.0 };
        let cfg = McConfig::with_paths(4);
        let s = simulate_terminal(&p, HiddenState::new(0.05, 0.01), 1.0, 0.2, &cfg).unwrap();
        let z = slow_mean(&m, 0.01, 0.2);
        let y = fast_mean(&m, 0.05, 0.01, 0.2);
        assert!((s.z[0] - z).abs() < 1e-3 * z, "{} vs {z}", s.z[0]);
        assert!((s.y[0] - y).abs() < 2e-3 * y, "{} vs {y}", s.y[0]);
    }

    #[test]
    fn martingale_and_factor_moments() {
        let p = oracle();
        let s0 = HiddenState::new(0.0234, 0.0194);
        let t = 0.1;
        let cfg = McConfig::with_paths(40_000);
        let [x, z, z2] = simulate_functionals(&p, s0, 2000.0, t, &cfg, |x, _, z| [x, z, z * z]).unwrap();
        let disc = (-P.r * t).exp();
        assert!((disc * x.mean - 2000.0).abs() < 3.0 * disc * x.standard_error);
        let ez = slow_mean(&P, s0.z, t);
        assert!((z.mean - ez).abs() < 3.0 * z.standard_error);
        let var = z2.mean - z.mean * z.mean;
        let exact = slow_variance(&P, s0.z, t);
        assert!((var - exact).abs() < 0.05 * exact, "{var} vs {exact}");
    }

    #[test]
    fn fast_factor_mean() {
        // Invariant shape z / nu^2 near 2; truncation bias is negligible there.
        let p = McModelParams { model: P, eta: 0.0, nu: 0.1 };
        let s0 = HiddenState::new(0.0234, 0.0194);
        let t = 0.1;
        let [y] = simulate_functionals(&p, s0, 2000.0, t, &McConfig::with_paths(20_000), |_, y, _| [y]).unwrap();
        let ey = fast_mean(&P, s0.y, s0.z, t);
        assert!((y.mean - ey).abs() < 3.0 * y.standard_error + 1e-4 * ey, "{} vs {ey}", y.mean);
    }

    #[test]
    fn seed_determinism_and_sensitivity() {
        let p = oracle();
        let s0 = HiddenState::new(0.0234, 0.0194);
        let spec = VixOptionSpec::call(20.0, 0.05);
        let cfg = McConfig::with_paths(4000);
        let a = mc_price_vix(&p, s0, &spec, &cfg).unwrap();
        let b = mc_price_vix(&p, s0, &spec, &cfg).unwrap();
        assert_eq!(a, b);
        let c = mc_price_vix(&p, s0, &spec, &McConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn terminal_samples_agree_with_functionals() {
        let p = oracle();
        let s0 = HiddenState::new(0.02, 0.02);
        let cfg = McConfig::with_paths(1000);
        let s = simulate_terminal(&p, s0, 100.0, 0.02, &cfg).unwrap();
        assert_eq!(s.x.len(), 1000);
        let [m] = simulate_functionals(&p, s0, 100.0, 0.02, &cfg, |x, _, _| [x]).unwrap();
        let direct = s.x.iter().sum::<f64>() / s.x.len() as f64;
        assert!((direct - m.mean).abs() < 1e-9 * direct);
    }

    #[test]
    fn zero_strike_vix_matches_expected_level() {
        let p = oracle();
        let s0 = HiddenState::new(0.0110, 0.0203);
        let cfg = McConfig::with_paths(20_000);
        let [c0, v] = {
            let w = P.weights().unwrap();
            let disc = (-P.r * 0.05f64).exp();
            simulate_functionals(&p, s0, 1.0, 0.05, &cfg, |_, y, z| {
                let v = terminal_vix(&w, P.theta, y, z);
                [disc * v, v]
            })
            .unwrap()
        };
        let direct = mc_price_vix(&p, s0, &VixOptionSpec::call(0.0, 0.05), &cfg).unwrap();
        assert!((direct.mean - c0.mean).abs() < 1e-12);
        assert!(v.mean > 0.0);
    }

    #[test]
    fn laguerre_low_orders() {
        let (a, x) = (0.7, 1.3);
        assert_eq!(laguerre(0, a, x), 1.0);
        assert!((laguerre(1, a, x) - (1.0 + a - x)).abs() < 1e-15);
        let l2 = 0.5 * (x * x - 2.0 * (a + 2.0) * x + (a + 1.0) * (a + 2.0));
        assert!((laguerre(2, a, x) - l2).abs() < 1e-14);
    }

    #[test]
    fn spectral_coefficients() {
        let (nu, z) = (0.4, 0.04);
        assert!(spectral_coefficient_check(nu, z, 0).unwrap().abs() < 1e-10);
        let c1 = spectral_coefficient_check(nu, z, 1).unwrap();
        assert!((c1 + 0.08).abs() < 1e-8 * 0.08, "{c1}");
        assert!(spectral_coefficient_check(nu, z, 2).unwrap().abs() < 1e-8);
        assert!(spectral_coefficient_check(nu, z, 3).unwrap().abs() < 1e-8);
        // gamma above one takes the direct route.
        let c1 = spectral_coefficient_check(0.1, 0.04, 1).unwrap();
        assert!((c1 + 0.1 * 0.2).abs() < 1e-8 * 0.02);
    }

    #[test]
    fn quadratic_exponential_moments_and_martingale() {
        let p = oracle();
        let s0 = HiddenState::new(0.0234, 0.0194);
        let t = 0.1;
        let cfg = McConfig {
            scheme: Scheme::QuadraticExponential,
            ..McConfig::with_paths(40_000)
        };
        let [x, y, z, z2] = simulate_functionals(&p, s0, 2000.0, t, &cfg, |x, y, z| [x, y, z, z * z]).unwrap();
        let disc = (-P.r * t).exp();
        assert!((disc * x.mean - 2000.0).abs() < 3.0 * disc * x.standard_error);
        let ez = slow_mean(&P, s0.z, t);
        assert!((z.mean - ez).abs() < 3.0 * z.standard_error);
        // The QE step keeps the fast factor's mean even with a tiny invariant shape.
        let ey = fast_mean(&P, s0.y, s0.z, t);
        assert!((y.mean - ey).abs() < 3.0 * y.standard_error + 2e-3 * ey, "{} vs {ey}", y.mean);
        let var = z2.mean - z.mean * z.mean;
        let exact = slow_variance(&P, s0.z, t);
        assert!((var - exact).abs() < 0.05 * exact);
    }

    #[test]
    fn schemes_agree_on_spx_prices() {
        let p = oracle();
        let s0 = HiddenState::new(0.0234, 0.0194);
        let euler = McConfig::with_paths(100_000);
        let qe = McConfig {
            scheme: Scheme::QuadraticExponential,
            ..euler
        };
        let a = mc_price_spx_strikes(&p, s0, 2000.0, &[1900.0, 2100.0], 30.0 / 365.0, true, &euler).unwrap();
        let b = mc_price_spx_strikes(&p, s0, 2000.0, &[1900.0, 2100.0], 30.0 / 365.0, true, &qe).unwrap();
        for (a, b) in a.iter().zip(&b) {
            let se = (a.standard_error.powi(2) + b.standard_error.powi(2)).sqrt();
            assert!((a.mean - b.mean).abs() < 4.0 * se, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn price_depends_on_the_split_only_through_higher_orders() {
        let s0 = HiddenState::new(0.0234, 0.0194);
        let a = oracle();
        let b = McModelParams::with_nu(P, 0.3).unwrap();
        assert!((w3_from(b.eta, b.nu, P.epsilon) - P.w3_eps).abs() < 1e-12);
        let cfg = McConfig::with_paths(100_000);
        let spec = SpxOptionSpec::call(2000.0, 2000.0, 0.25);
        let pa = mc_price_spx(&a, s0, &spec, &cfg).unwrap();
        let pb = mc_price_spx(&b, s0, &spec, &cfg).unwrap();
        let se = (pa.standard_error.powi(2) + pb.standard_error.powi(2)).sqrt();
        assert!((pa.mean - pb.mean).abs() < 3.0 * se + P.epsilon * pa.mean, "{pa:?} vs {pb:?}");
    }

}
