//! Two-step calibration to VIX and SPX option quotes.
//!
//! Step one fits the variance dynamics to VIX options alone. For each trial
//! parameter set every trade date gets its own hidden state, tied to the
//! observed VIX level: in the Heston model the variance follows from the VIX
//! directly, in the multiscale model the constraint leaves the fast factor
//! free and a one-dimensional search picks it. Step two holds all of that
//! fixed and fits the remaining correlation parameters to SPX options.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{error_report, ErrorReport, OptionQuote, OptionType, Underlying};
use crate::error::{Error, Result};
use crate::heston::{heston_call, heston_put, HestonParams};
use crate::model::{max_y_for_vix, z_from_vix_given_y, z_from_vix_heston, HiddenState, ModelParams, QuadratureConfig};
use crate::optim::{golden_section, minimize, Minimum, NelderMeadConfig, Transform};
use crate::spx::{price_spx, SpxOptionSpec};
use crate::vix::{heston_as_leading_order, price_vix, price_vix_strip, VixOptionSpec};

/// Closed interval bounds on each parameter. Lower bounds of the positive
/// parameters are open.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub kappa: (f64, f64),
    pub theta: (f64, f64),
    pub sigma: (f64, f64),
    pub rho: (f64, f64),
    pub epsilon: (f64, f64),
    pub w3_eps: (f64, f64),
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            kappa: (0.0, 20.0),
            theta: (0.0, 1.0),
            sigma: (0.0, 3.0),
            rho: (-1.0, 0.0),
            epsilon: (1e-4, 0.1),
            w3_eps: (-0.5, 0.5),
        }
    }
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("kappa", self.kappa),
            ("theta", self.theta),
            ("sigma", self.sigma),
            ("rho", self.rho),
            ("epsilon", self.epsilon),
            ("w3_eps", self.w3_eps),
        ] {
            if !(lo < hi) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("empty bound interval [{lo}, {hi}]"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub outer: NelderMeadConfig,
    /// Tolerance on the fast factor in the per-date search.
    pub inner_tol: f64,
    pub inner_max_iterations: usize,
    pub bounds: Bounds,
    /// Floor added to market prices in the residual weights.
    pub weight_floor: f64,
    pub r: f64,
    pub quad: QuadratureConfig,
    /// Parameters are snapped to a closed bound when within this distance and
    /// the objective does not get worse.
    pub snap_distance: f64,
    /// Evaluate dates on the rayon pool; results are identical either way.
    pub parallel: bool,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            outer: NelderMeadConfig {
                f_target: 1e-18,
                ..Default::default()
            },
            inner_tol: 1e-7,
            inner_max_iterations: 80,
            bounds: Bounds::default(),
            weight_floor: 0.1,
            r: 0.02,
            quad: QuadratureConfig {
                abs_tol: 1e-9,
                rel_tol: 1e-9,
                ..Default::default()
            },
            snap_distance: 1e-3,
            parallel: true,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if !(self.weight_floor > 0.0) {
            return Err(Error::InvalidParameter {
                name: "weight_floor",
                reason: "must be positive".into(),
            });
        }
        self.quad.validate()
    }
}

/// `sum(((m - p) / (floor + p))^2)` with the default floor of 0.1.
pub fn weighted_sse(model_prices: &[f64], market_prices: &[f64]) -> Result<f64> {
    weighted_sse_with_floor(model_prices, market_prices, 0.1)
}

pub fn weighted_sse_with_floor(model: &[f64], market: &[f64], floor: f64) -> Result<f64> {
    if model.len() != market.len() {
        return Err(Error::LengthMismatch {
            left: model.len(),
            right: market.len(),
        });
    }
    Ok(model
        .iter()
        .zip(market)
        .map(|(m, p)| ((m - p) / (floor + p)).powi(2))
        .sum())
}

/// All quotes of one trade date.
#[derive(Debug, Clone, PartialEq)]
pub struct DateSlice {
    pub date: NaiveDate,
    pub vix_level: Option<f64>,
    pub spx_level: Option<f64>,
    pub vix: Vec<OptionQuote>,
    pub spx: Vec<OptionQuote>,
}

/// Groups quotes by trade date, in date order.
pub fn group_by_date(quotes: &[OptionQuote]) -> Vec<DateSlice> {
    let mut map: BTreeMap<NaiveDate, DateSlice> = BTreeMap::new();
    for q in quotes {
        let s = map.entry(q.trade_date).or_insert_with(|| DateSlice {
            date: q.trade_date,
            vix_level: None,
            spx_level: None,
            vix: Vec::new(),
            spx: Vec::new(),
        });
        match q.underlying {
            Underlying::Vix => {
                s.vix_level.get_or_insert(q.underlying_close);
                s.vix.push(q.clone());
            }
            Underlying::Spx => {
                s.spx_level.get_or_insert(q.underlying_close);
                s.spx.push(q.clone());
            }
        }
    }
    map.into_values().collect()
}

/// Fitted parameters of either model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Fitted {
    Heston { params: HestonParams, r: f64 },
    Multiscale { params: ModelParams },
}

impl Fitted {
    pub fn r(&self) -> f64 {
        match self {
            Fitted::Heston { r, .. } => *r,
            Fitted::Multiscale { params } => params.r,
        }
    }
}

/// Hidden state of one date. For the Heston model both components hold the variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DateState {
    pub date: NaiveDate,
    pub vix_level: f64,
    pub state: HiddenState,
    /// VIX-quote objective of the date at the fitted state.
    pub objective: f64,
}

/// Summary of one optimization step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Running best objective; non-increasing.
    pub trace: Vec<f64>,
    /// Dates that could not be given a feasible state at the final parameters.
    pub infeasible_dates: usize,
    /// Fewer quotes than free parameters.
    pub underdetermined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub fitted: Fitted,
    pub states: Vec<DateState>,
    pub step1: StepReport,
    pub step2: StepReport,
    /// Training-set errors by underlying and maturity bucket.
    pub report: Option<ErrorReport>,
}

impl CalibrationResult {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Price of one quote under fitted parameters and a date state.
pub fn model_price(fitted: &Fitted, q: &OptionQuote, state: HiddenState, quad: &QuadratureConfig) -> Result<f64> {
    let tau = q.tau();
    let call = q.option_type == OptionType::Call;
    match (fitted, q.underlying) {
        (Fitted::Multiscale { params }, Underlying::Vix) => {
            let spec = if call {
                VixOptionSpec::call(q.strike, tau)
            } else {
                VixOptionSpec::put(q.strike, tau)
            };
            Ok(price_vix(&spec, state, params, quad)?.total)
        }
        (Fitted::Multiscale { params }, Underlying::Spx) => {
            let spec = if call {
                SpxOptionSpec::call(q.underlying_close, q.strike, tau)
            } else {
                SpxOptionSpec::put(q.underlying_close, q.strike, tau)
            };
            Ok(price_spx(&spec, state, params, quad)?.total)
        }
        (Fitted::Heston { params, r }, Underlying::Vix) => {
            let p = heston_as_leading_order(params, *r);
            let half = HiddenState::new(0.5 * state.z, 0.5 * state.z);
            let spec = if call {
                VixOptionSpec::call(q.strike, tau)
            } else {
                VixOptionSpec::put(q.strike, tau)
            };
            Ok(price_vix(&spec, half, &p, quad)?.leading)
        }
        (Fitted::Heston { params, r }, Underlying::Spx) => {
            let f = if call { heston_call } else { heston_put };
            f(params, q.underlying_close, q.strike, tau, *r, state.z, quad)
        }
    }
}

/// Prices of several quotes sharing one state. VIX options with a common
/// expiry are priced together.
pub fn model_prices(fitted: &Fitted, quotes: &[OptionQuote], state: HiddenState, quad: &QuadratureConfig) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; quotes.len()];
    let mut strips: BTreeMap<NaiveDate, Vec<usize>> = BTreeMap::new();
    for (i, q) in quotes.iter().enumerate() {
        match q.underlying {
            Underlying::Vix => strips.entry(q.expiry).or_default().push(i),
            Underlying::Spx => out[i] = model_price(fitted, q, state, quad)?,
        }
    }
    for idx in strips.values() {
        let specs: Vec<VixOptionSpec> = idx
            .iter()
            .map(|&i| {
                let q = &quotes[i];
                VixOptionSpec {
                    strike: q.strike,
                    tau: q.tau(),
                    is_call: q.option_type == OptionType::Call,
                }
            })
            .collect();
        let prices: Vec<f64> = match fitted {
            Fitted::Multiscale { params } => price_vix_strip(&specs, state, params, quad)?
                .into_iter()
                .map(|p| p.total)
                .collect(),
            Fitted::Heston { params, r } => {
                let half = HiddenState::new(0.5 * state.z, 0.5 * state.z);
                price_vix_strip(&specs, half, &heston_as_leading_order(params, *r), quad)?
                    .into_iter()
                    .map(|p| p.leading)
                    .collect()
            }
        };
        for (&i, p) in idx.iter().zip(prices) {
            out[i] = p;
        }
    }
    Ok(out)
}

fn quotes_objective(fitted: &Fitted, quotes: &[OptionQuote], state: HiddenState, cfg: &CalibrationConfig) -> f64 {
    match model_prices(fitted, quotes, state, &cfg.quad) {
        Ok(m) => m
            .iter()
            .zip(quotes)
            .map(|(m, q)| ((m - q.price) / (cfg.weight_floor + q.price)).powi(2))
            .sum(),
        Err(_) => f64::INFINITY,
    }
}

fn clamp_tiny_negative(r: Result<f64>) -> Result<f64> {
    match r {
        Err(Error::InfeasibleState { z }) if z > -1e-14 => Ok(0.0),
        other => other,
    }
}

/// Best fast-factor value for one date under the VIX constraint.
///
/// Searches `y` on `[0, y_max]`, where `y_max` makes the slow factor zero, and
/// returns the state with the smallest weighted error on the given VIX quotes.
pub fn inner_state_fit(
    date_quotes: &[OptionQuote],
    vix_level: f64,
    globals: &ModelParams,
    cfg: &CalibrationConfig,
) -> Result<(HiddenState, f64)> {
    let y_max = max_y_for_vix(vix_level, globals)?;
    if !(y_max > 0.0) {
        return Err(Error::EmptyFeasibleInterval { y_max });
    }
    let vix_quotes: Vec<OptionQuote> = date_quotes
        .iter()
        .filter(|q| q.underlying == Underlying::Vix)
        .cloned()
        .collect();
    if vix_quotes.is_empty() {
        return Err(Error::Calibration("no VIX quotes on this date".into()));
    }
    let fitted = Fitted::Multiscale { params: *globals };
    let state_at = |y: f64| -> Result<HiddenState> {
        Ok(HiddenState::new(y, clamp_tiny_negative(z_from_vix_given_y(vix_level, y, globals))?))
    };
    let objective = |y: f64| match state_at(y) {
        Ok(s) => quotes_objective(&fitted, &vix_quotes, s, cfg),
        Err(_) => f64::INFINITY,
    };
    let (y, value) = golden_section(objective, 0.0, y_max, cfg.inner_tol * y_max.max(1e-3), cfg.inner_max_iterations);
    Ok((state_at(y)?, value))
}

/// Per-date outcome inside one outer objective evaluation.
type DateFit = Option<(HiddenState, f64)>;

fn map_dates<F>(slices: &[DateSlice], parallel: bool, f: F) -> Vec<DateFit>
where
    F: Fn(&DateSlice) -> DateFit + Sync + Send,
{
    if parallel {
        slices.par_iter().map(&f).collect()
    } else {
        slices.iter().map(&f).collect()
    }
}

/// Sums date objectives in date order. Infeasible dates pay ten times the median feasible objective.
fn total_with_penalty(fits: &[DateFit]) -> (f64, usize) {
    let mut feasible: Vec<f64> = fits.iter().flatten().map(|(_, v)| *v).filter(|v| v.is_finite()).collect();
    let infeasible = fits.len() - feasible.len();
    if feasible.is_empty() {
        return (1e6 * fits.len().max(1) as f64, infeasible);
    }
    let sum: f64 = feasible.iter().sum();
    feasible.sort_by(f64::total_cmp);
    let median = feasible[feasible.len() / 2];
    (sum + infeasible as f64 * 10.0 * median.max(1e-12), infeasible)
}

fn vix_slices(slices: &[DateSlice]) -> Vec<DateSlice> {
    slices
        .iter()
        .filter(|s| s.vix_level.is_some() && !s.vix.is_empty())
        .cloned()
        .collect()
}

struct Coordinates {
    transforms: Vec<Transform>,
    /// `(lo, hi, index)` of bounds that may be attained.
    closed: Vec<(f64, f64, usize)>,
}

impl Coordinates {
    fn to_free(&self, x: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(x).map(|(t, v)| t.to_free(*v)).collect()
    }

    fn to_bounded(&self, u: &[f64]) -> Vec<f64> {
        self.transforms.iter().zip(u).map(|(t, v)| t.to_bounded(*v)).collect()
    }
}

/// Tries to move coordinates near a closed bound onto it; keeps a move only if
/// the objective does not increase.
fn snap<F: FnMut(&[f64]) -> f64>(x: &mut Vec<f64>, value: &mut f64, coords: &Coordinates, distance: f64, mut f: F) {
    for &(lo, hi, i) in &coords.closed {
        for bound in [lo, hi] {
            if bound.is_finite() && (x[i] - bound).abs() < distance && x[i] != bound {
                let mut trial = x.clone();
                trial[i] = bound;
                let v = f(&trial);
                if v <= *value {
                    *x = trial;
                    *value = v;
                }
            }
        }
    }
}

fn step_report(m: &Minimum, value: f64, infeasible: usize, quotes: usize, dims: usize) -> StepReport {
    let mut trace = m.trace.clone();
    if trace.last().map_or(true, |&t| value < t) {
        trace.push(value);
    }
    StepReport {
        objective: value,
        iterations: m.iterations,
        evaluations: m.evaluations,
        converged: m.converged,
        trace,
        infeasible_dates: infeasible,
        underdetermined: quotes < dims,
    }
}

/// Starting values for the multiscale fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsvStart {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub epsilon: f64,
    pub rho: f64,
    pub w3_eps: f64,
}

impl Default for MsvStart {
    fn default() -> Self {
        MsvStart {
            kappa: 2.5,
            theta: 0.03,
            sigma: 0.45,
            epsilon: 0.015,
            rho: -0.5,
            w3_eps: 0.0,
        }
    }
}

/// Largest admissible `epsilon` for a given `kappa`.
fn epsilon_cap(kappa: f64, bounds: &Bounds) -> f64 {
    bounds.epsilon.1.min((1.0 - 1e-6) / kappa)
}

/// Multiscale step one: `(kappa, theta, sigma, epsilon)` and the date states.
///
/// `epsilon` is parametrized as a fraction of its `kappa`-dependent cap so that
/// `kappa * epsilon < 1` holds everywhere in the search space.
fn msv_globals(u: &[f64], b: &Bounds, r: f64) -> ModelParams {
    let kappa = Transform::Logit { lo: b.kappa.0, hi: b.kappa.1 }.to_bounded(u[0]);
    let theta = Transform::Logit { lo: b.theta.0, hi: b.theta.1 }.to_bounded(u[1]);
    let sigma = Transform::Logit { lo: b.sigma.0, hi: b.sigma.1 }.to_bounded(u[2]);
    let cap = epsilon_cap(kappa, b);
    let epsilon = Transform::Logit { lo: b.epsilon.0, hi: cap.max(b.epsilon.0 * (1.0 + 1e-9)) }.to_bounded(u[3]);
    ModelParams {
        kappa,
        theta,
        sigma,
        rho: 0.0,
        epsilon,
        w3_eps: 0.0,
        r,
    }
}

fn msv_globals_free(p: &ModelParams, b: &Bounds) -> Vec<f64> {
    let cap = epsilon_cap(p.kappa, b);
    vec![
        Transform::Logit { lo: b.kappa.0, hi: b.kappa.1 }.to_free(p.kappa),
        Transform::Logit { lo: b.theta.0, hi: b.theta.1 }.to_free(p.theta),
        Transform::Logit { lo: b.sigma.0, hi: b.sigma.1 }.to_free(p.sigma),
        Transform::Logit { lo: b.epsilon.0, hi: cap }.to_free(p.epsilon),
    ]
}

fn msv_date_fits(slices: &[DateSlice], globals: &ModelParams, cfg: &CalibrationConfig) -> Vec<DateFit> {
    map_dates(slices, cfg.parallel, |s| {
        inner_state_fit(&s.vix, s.vix_level?, globals, cfg)
            .ok()
            .filter(|(_, v)| v.is_finite())
    })
}

pub fn calibrate_msv(train: &[OptionQuote], cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    calibrate_msv_from(train, cfg, &MsvStart::default())
}

pub fn calibrate_msv_from(train: &[OptionQuote], cfg: &CalibrationConfig, start: &MsvStart) -> Result<CalibrationResult> {
    cfg.validate()?;
    let slices = group_by_date(train);
    let vix_dates = vix_slices(&slices);
    if vix_dates.is_empty() {
        return Err(Error::Calibration("no dates with VIX quotes".into()));
    }
    let b = cfg.bounds;

    // Step one.
    let x0 = ModelParams {
        kappa: start.kappa,
        theta: start.theta,
        sigma: start.sigma,
        rho: 0.0,
        epsilon: start.epsilon.min(0.9 * epsilon_cap(start.kappa, &b)),
        w3_eps: 0.0,
        r: cfg.r,
    };
    let objective1 = |u: &[f64]| {
        let g = msv_globals(u, &b, cfg.r);
        total_with_penalty(&msv_date_fits(&vix_dates, &g, cfg)).0
    };
    let m1 = minimize(objective1, &msv_globals_free(&x0, &b), &cfg.outer);
    let mut globals = msv_globals(&m1.x, &b, cfg.r);
    let mut value1 = m1.value;
    {
        // Snap in bounded coordinates.
        let mut x = vec![globals.kappa, globals.theta, globals.sigma, globals.epsilon];
        let coords = Coordinates {
            transforms: vec![],
            closed: vec![
                (f64::NAN, b.kappa.1, 0),
                (f64::NAN, b.theta.1, 1),
                (f64::NAN, b.sigma.1, 2),
                (f64::NAN, b.epsilon.1, 3),
            ],
        };
        snap(&mut x, &mut value1, &coords, cfg.snap_distance, |x| {
            let g = ModelParams {
                kappa: x[0],
                theta: x[1],
                sigma: x[2],
                epsilon: x[3],
                ..globals
            };
            if g.validate().is_err() {
                return f64::INFINITY;
            }
            total_with_penalty(&msv_date_fits(&vix_dates, &g, cfg)).0
        });
        globals = ModelParams {
            kappa: x[0],
            theta: x[1],
            sigma: x[2],
            epsilon: x[3],
            ..globals
        };
    }
    let fits = msv_date_fits(&vix_dates, &globals, cfg);
    let (_, infeasible) = total_with_penalty(&fits);
    let states: Vec<DateState> = vix_dates
        .iter()
        .zip(&fits)
        .filter_map(|(s, f)| {
            f.map(|(state, objective)| DateState {
                date: s.date,
                vix_level: s.vix_level.unwrap_or(f64::NAN),
                state,
                objective,
            })
        })
        .collect();
    let n_vix: usize = vix_dates.iter().map(|s| s.vix.len()).sum();
    let step1 = step_report(&m1, value1, infeasible, n_vix, 4 + vix_dates.len());

    // Step two: (rho, w3) on SPX quotes with everything else frozen.
    let spx_sets = spx_with_states(&slices, &states);
    let n_spx: usize = spx_sets.iter().map(|(q, _)| q.len()).sum();
    let coords = Coordinates {
        transforms: vec![
            Transform::Logit { lo: b.rho.0, hi: b.rho.1 },
            Transform::Logit { lo: b.w3_eps.0, hi: b.w3_eps.1 },
        ],
        closed: vec![(b.rho.0, b.rho.1, 0), (b.w3_eps.0, b.w3_eps.1, 1)],
    };
    let objective2 = |x: &[f64]| {
        let p = ModelParams {
            rho: x[0],
            w3_eps: x[1],
            ..globals
        };
        spx_objective(&Fitted::Multiscale { params: p }, &spx_sets, cfg)
    };
    let (params, step2) = if n_spx == 0 {
        (
            ModelParams {
                rho: start.rho,
                w3_eps: start.w3_eps,
                ..globals
            },
            StepReport {
                objective: 0.0,
                iterations: 0,
                evaluations: 0,
                converged: false,
                trace: vec![],
                infeasible_dates: 0,
                underdetermined: true,
            },
        )
    } else {
        let m2 = minimize(
            |u: &[f64]| objective2(&coords.to_bounded(u)),
            &coords.to_free(&[start.rho, start.w3_eps]),
            &cfg.outer,
        );
        let mut x = coords.to_bounded(&m2.x);
        let mut v = m2.value;
        snap(&mut x, &mut v, &coords, cfg.snap_distance, objective2);
        (
            ModelParams {
                rho: x[0],
                w3_eps: x[1],
                ..globals
            },
            step_report(&m2, v, 0, n_spx, 2),
        )
    };
    // Step two must leave the step-one outputs untouched.
    assert_eq!(
        (params.kappa, params.theta, params.sigma, params.epsilon),
        (globals.kappa, globals.theta, globals.sigma, globals.epsilon)
    );

    let fitted = Fitted::Multiscale { params };
    let report = training_report(&fitted, &slices, &states, cfg).ok();
    Ok(CalibrationResult {
        fitted,
        states,
        step1,
        step2,
        report,
    })
}

/// SPX quotes of dates that received a state.
fn spx_with_states(slices: &[DateSlice], states: &[DateState]) -> Vec<(Vec<OptionQuote>, HiddenState)> {
    let by_date: BTreeMap<NaiveDate, HiddenState> = states.iter().map(|s| (s.date, s.state)).collect();
    slices
        .iter()
        .filter_map(|s| {
            let st = by_date.get(&s.date)?;
            (!s.spx.is_empty()).then(|| (s.spx.clone(), *st))
        })
        .collect()
}

fn spx_objective(fitted: &Fitted, sets: &[(Vec<OptionQuote>, HiddenState)], cfg: &CalibrationConfig) -> f64 {
    let parts: Vec<f64> = if cfg.parallel {
        sets.par_iter()
            .map(|(q, s)| quotes_objective(fitted, q, *s, cfg))
            .collect()
    } else {
        sets.iter().map(|(q, s)| quotes_objective(fitted, q, *s, cfg)).collect()
    };
    parts.iter().sum()
}

/// Starting values for the Heston fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonStart {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl Default for HestonStart {
    fn default() -> Self {
        HestonStart {
            kappa: 2.5,
            theta: 0.03,
            sigma: 0.5,
            rho: -0.5,
        }
    }
}

fn heston_date_fits(slices: &[DateSlice], h: &HestonParams, cfg: &CalibrationConfig) -> Vec<DateFit> {
    let fitted = Fitted::Heston { params: *h, r: cfg.r };
    map_dates(slices, cfg.parallel, |s| {
        let v = z_from_vix_heston(s.vix_level?, h.kappa, h.theta).ok()?;
        let state = HiddenState::new(v, v);
        let value = quotes_objective(&fitted, &s.vix, state, cfg);
        value.is_finite().then_some((state, value))
    })
}

pub fn calibrate_heston(train: &[OptionQuote], cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    calibrate_heston_from(train, cfg, &HestonStart::default())
}

pub fn calibrate_heston_from(train: &[OptionQuote], cfg: &CalibrationConfig, start: &HestonStart) -> Result<CalibrationResult> {
    cfg.validate()?;
    let slices = group_by_date(train);
    let vix_dates = vix_slices(&slices);
    if vix_dates.is_empty() {
        return Err(Error::Calibration("no dates with VIX quotes".into()));
    }
    let b = cfg.bounds;
    let coords1 = Coordinates {
        transforms: vec![
            Transform::Logit { lo: b.kappa.0, hi: b.kappa.1 },
            Transform::Logit { lo: b.theta.0, hi: b.theta.1 },
            Transform::Logit { lo: b.sigma.0, hi: b.sigma.1 },
        ],
        closed: vec![(f64::NAN, b.kappa.1, 0), (f64::NAN, b.theta.1, 1), (f64::NAN, b.sigma.1, 2)],
    };
    let heston = |x: &[f64], rho: f64| HestonParams {
        kappa: x[0],
        theta: x[1],
        sigma: x[2],
        rho,
    };
    let objective1 = |x: &[f64]| total_with_penalty(&heston_date_fits(&vix_dates, &heston(x, 0.0), cfg)).0;
    let m1 = minimize(
        |u: &[f64]| objective1(&coords1.to_bounded(u)),
        &coords1.to_free(&[start.kappa, start.theta, start.sigma]),
        &cfg.outer,
    );
    let mut x1 = coords1.to_bounded(&m1.x);
    let mut v1 = m1.value;
    snap(&mut x1, &mut v1, &coords1, cfg.snap_distance, objective1);
    let fits = heston_date_fits(&vix_dates, &heston(&x1, 0.0), cfg);
    let (_, infeasible) = total_with_penalty(&fits);
    let states: Vec<DateState> = vix_dates
        .iter()
        .zip(&fits)
        .filter_map(|(s, f)| {
            f.map(|(state, objective)| DateState {
                date: s.date,
                vix_level: s.vix_level.unwrap_or(f64::NAN),
                state,
                objective,
            })
        })
        .collect();
    let n_vix: usize = vix_dates.iter().map(|s| s.vix.len()).sum();
    let step1 = step_report(&m1, v1, infeasible, n_vix, 3);

    let spx_sets = spx_with_states(&slices, &states);
    let n_spx: usize = spx_sets.iter().map(|(q, _)| q.len()).sum();
    let coords2 = Coordinates {
        transforms: vec![Transform::Logit { lo: b.rho.0, hi: b.rho.1 }],
        closed: vec![(b.rho.0, b.rho.1, 0)],
    };
    let objective2 = |x: &[f64]| {
        spx_objective(
            &Fitted::Heston {
                params: heston(&x1, x[0]),
                r: cfg.r,
            },
            &spx_sets,
            cfg,
        )
    };
    let (rho, step2) = if n_spx == 0 {
        (
            start.rho,
            StepReport {
                objective: 0.0,
                iterations: 0,
                evaluations: 0,
                converged: false,
                trace: vec![],
                infeasible_dates: 0,
                underdetermined: true,
            },
        )
    } else {
        let m2 = minimize(
            |u: &[f64]| objective2(&coords2.to_bounded(u)),
            &coords2.to_free(&[start.rho]),
            &cfg.outer,
        );
        let mut x = coords2.to_bounded(&m2.x);
        let mut v = m2.value;
        snap(&mut x, &mut v, &coords2, cfg.snap_distance, objective2);
        (x[0], step_report(&m2, v, 0, n_spx, 1))
    };
    let fitted = Fitted::Heston {
        params: heston(&x1, rho),
        r: cfg.r,
    };
    let report = training_report(&fitted, &slices, &states, cfg).ok();
    Ok(CalibrationResult {
        fitted,
        states,
        step1,
        step2,
        report,
    })
}

fn training_report(fitted: &Fitted, slices: &[DateSlice], states: &[DateState], cfg: &CalibrationConfig) -> Result<ErrorReport> {
    let by_date: BTreeMap<NaiveDate, HiddenState> = states.iter().map(|s| (s.date, s.state)).collect();
    let mut prices = Vec::new();
    let mut quotes = Vec::new();
    for s in slices {
        let Some(state) = by_date.get(&s.date) else { continue };
        for q in s.vix.iter().chain(&s.spx) {
            prices.push(model_price(fitted, q, *state, &cfg.quad)?);
            quotes.push(q.clone());
        }
    }
    error_report(&prices, &quotes)
}

/// Fits a state to every date of `quotes` under fixed parameters and prices all
/// quotes. Quotes on dates without a feasible state are left out; the returned
/// quotes line up with the prices.
pub fn evaluate(fitted: &Fitted, quotes: &[OptionQuote], cfg: &CalibrationConfig) -> Result<(Vec<OptionQuote>, Vec<f64>)> {
    let slices = group_by_date(quotes);
    let states: Vec<Option<HiddenState>> = slices
        .iter()
        .map(|s| {
            let vix = s.vix_level?;
            match fitted {
                Fitted::Heston { params, .. } => {
                    let v = z_from_vix_heston(vix, params.kappa, params.theta).ok()?;
                    Some(HiddenState::new(v, v))
                }
                Fitted::Multiscale { params } => {
                    inner_state_fit(&s.vix, vix, params, cfg).ok().map(|(st, _)| st)
                }
            }
        })
        .collect();
    let mut out_q = Vec::new();
    let mut out_p = Vec::new();
    for (s, st) in slices.iter().zip(states) {
        let Some(st) = st else { continue };
        for q in s.vix.iter().chain(&s.spx) {
            out_p.push(model_price(fitted, q, st, &cfg.quad)?);
            out_q.push(q.clone());
        }
    }
    Ok((out_q, out_p))
}
