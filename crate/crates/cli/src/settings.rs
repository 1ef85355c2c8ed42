//! Resolution of numeric settings: built-in defaults, then the config file, then flags.

use std::str::FromStr;

use clap::Args;
use msvol::calibrate::CalibrationConfig;
use msvol::data::{ConfigFile, FilterRules};
use msvol::mc::{McConfig, Scheme, DEFAULT_NU};
use msvol::{HestonParams, HiddenState, ModelParams, QuadratureConfig, Result};

/// Every key the config file may contain.
pub const KNOWN_KEYS: &[&str] = &[
    // model
    "kappa",
    "theta",
    "sigma",
    "rho",
    "epsilon",
    "w3",
    "r",
    "y",
    "z",
    // quadrature
    "contour_shift",
    "truncation",
    "abs_tol",
    "rel_tol",
    "max_nodes",
    // monte carlo
    "paths",
    "dt",
    "seed",
    "antithetic",
    "scheme",
    "nu",
    // calibration
    "max_iterations",
    "f_tol",
    "x_tol",
    "initial_step",
    "restarts",
    "restart_spread",
    "optimizer_seed",
    "f_target",
    "inner_tol",
    "inner_max_iterations",
    "weight_floor",
    "snap_distance",
    "parallel",
    "calibration_abs_tol",
    "calibration_rel_tol",
    // filters
    "min_volume",
    "min_price",
    "min_days_to_expiry",
];

/// Model parameters and hidden state; unset flags fall back to the config file
/// and then to the reference values.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// First-order SPX correction coefficient.
    #[arg(long, allow_hyphen_values = true)]
    pub w3: Option<f64>,
    /// Risk-free rate.
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    /// Fast factor of the hidden state.
    #[arg(long)]
    pub y: Option<f64>,
    /// Slow factor of the hidden state.
    #[arg(long)]
    pub z: Option<f64>,
}

/// Quadrature overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct QuadArgs {
    #[arg(long)]
    pub abs_tol: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
}

/// Monte Carlo overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct McArgs {
    #[arg(long)]
    pub paths: Option<usize>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fast-factor volatility; the correlation is solved to match `w3`.
    #[arg(long)]
    pub nu: Option<f64>,
    /// `euler` or `qe`.
    #[arg(long)]
    pub scheme: Option<String>,
}

pub struct Settings {
    file: ConfigFile,
}

fn pick<T: FromStr>(flag: Option<T>, file: &ConfigFile, key: &str, default: T) -> Result<T> {
    match flag {
        Some(v) => Ok(v),
        None => Ok(file.get(key)?.unwrap_or(default)),
    }
}

pub fn parse_scheme(s: &str) -> Result<Scheme> {
    match s.to_ascii_lowercase().as_str() {
        "euler" | "full-truncation-euler" => Ok(Scheme::FullTruncationEuler),
        "qe" | "quadratic-exponential" => Ok(Scheme::QuadraticExponential),
        other => Err(msvol::Error::InvalidParameter {
            name: "scheme",
            reason: format!("expected `euler` or `qe`, got `{other}`"),
        }),
    }
}

impl Settings {
    pub fn new(file: ConfigFile) -> Result<Self> {
        file.check_keys(KNOWN_KEYS)?;
        Ok(Settings { file })
    }

    pub fn model(&self, a: &ModelArgs) -> Result<ModelParams> {
        let d = ModelParams::REFERENCE;
        let f = &self.file;
        let p = ModelParams {
            kappa: pick(a.kappa, f, "kappa", d.kappa)?,
            theta: pick(a.theta, f, "theta", d.theta)?,
            sigma: pick(a.sigma, f, "sigma", d.sigma)?,
            rho: pick(a.rho, f, "rho", d.rho)?,
            epsilon: pick(a.epsilon, f, "epsilon", d.epsilon)?,
            w3_eps: pick(a.w3, f, "w3", d.w3_eps)?,
            r: pick(a.r, f, "r", d.r)?,
        };
        p.validate()?;
        Ok(p)
    }

    /// Benchmark parameters from the same keys, with their own reference defaults.
    pub fn heston(&self, a: &ModelArgs) -> Result<HestonParams> {
        let d = HestonParams::REFERENCE;
        let f = &self.file;
        let h = HestonParams {
            kappa: pick(a.kappa, f, "kappa", d.kappa)?,
            theta: pick(a.theta, f, "theta", d.theta)?,
            sigma: pick(a.sigma, f, "sigma", d.sigma)?,
            rho: pick(a.rho, f, "rho", d.rho)?,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn state(&self, a: &ModelArgs) -> Result<HiddenState> {
        let s = HiddenState::new(
            pick(a.y, &self.file, "y", 0.0234)?,
            pick(a.z, &self.file, "z", 0.0194)?,
        );
        s.validate()?;
        Ok(s)
    }

    pub fn rate(&self, a: &ModelArgs) -> Result<f64> {
        pick(a.r, &self.file, "r", ModelParams::REFERENCE.r)
    }

    pub fn quad(&self, a: &QuadArgs) -> Result<QuadratureConfig> {
        let d = QuadratureConfig::default();
        let f = &self.file;
        let q = QuadratureConfig {
            contour_shift: pick(None, f, "contour_shift", d.contour_shift)?,
            truncation: pick(None, f, "truncation", d.truncation)?,
            abs_tol: pick(a.abs_tol, f, "abs_tol", d.abs_tol)?,
            rel_tol: pick(a.rel_tol, f, "rel_tol", d.rel_tol)?,
            max_nodes: pick(None, f, "max_nodes", d.max_nodes)?,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn mc(&self, a: &McArgs) -> Result<(McConfig, f64)> {
        let d = McConfig::default();
        let f = &self.file;
        let scheme = match &a.scheme {
            Some(s) => parse_scheme(s)?,
            None => match f.get::<String>("scheme")? {
                Some(s) => parse_scheme(&s)?,
                None => d.scheme,
            },
        };
        let dt = match a.dt {
            Some(v) => Some(v),
            None => f.get("dt")?,
        };
        let cfg = McConfig {
            paths: pick(a.paths, f, "paths", d.paths)?,
            dt,
            seed: pick(a.seed, f, "seed", d.seed)?,
            antithetic: pick(None, f, "antithetic", d.antithetic)?,
            scheme,
        };
        Ok((cfg, pick(a.nu, f, "nu", DEFAULT_NU)?))
    }

    pub fn calibration(&self, r: Option<f64>) -> Result<CalibrationConfig> {
        let d = CalibrationConfig::default();
        let f = &self.file;
        let mut c = d;
        c.outer.max_iterations = pick(None, f, "max_iterations", d.outer.max_iterations)?;
        c.outer.f_tol = pick(None, f, "f_tol", d.outer.f_tol)?;
        c.outer.x_tol = pick(None, f, "x_tol", d.outer.x_tol)?;
        c.outer.initial_step = pick(None, f, "initial_step", d.outer.initial_step)?;
        c.outer.restarts = pick(None, f, "restarts", d.outer.restarts)?;
        c.outer.restart_spread = pick(None, f, "restart_spread", d.outer.restart_spread)?;
        c.outer.seed = pick(None, f, "optimizer_seed", d.outer.seed)?;
        c.outer.f_target = pick(None, f, "f_target", d.outer.f_target)?;
        c.inner_tol = pick(None, f, "inner_tol", d.inner_tol)?;
        c.inner_max_iterations = pick(None, f, "inner_max_iterations", d.inner_max_iterations)?;
        c.weight_floor = pick(None, f, "weight_floor", d.weight_floor)?;
        c.snap_distance = pick(None, f, "snap_distance", d.snap_distance)?;
        c.parallel = pick(None, f, "parallel", d.parallel)?;
        c.r = pick(r, f, "r", d.r)?;
        c.quad.contour_shift = pick(None, f, "contour_shift", d.quad.contour_shift)?;
        c.quad.truncation = pick(None, f, "truncation", d.quad.truncation)?;
        c.quad.abs_tol = pick(None, f, "calibration_abs_tol", d.quad.abs_tol)?;
        c.quad.rel_tol = pick(None, f, "calibration_rel_tol", d.quad.rel_tol)?;
        c.quad.max_nodes = pick(None, f, "max_nodes", d.quad.max_nodes)?;
        c.validate()?;
        Ok(c)
    }

    pub fn filters(&self) -> Result<FilterRules> {
        let d = FilterRules::default();
        let f = &self.file;
        Ok(FilterRules {
            min_volume: pick(None, f, "min_volume", d.min_volume)?,
            min_price: pick(None, f, "min_price", d.min_price)?,
            min_days_to_expiry: pick(None, f, "min_days_to_expiry", d.min_days_to_expiry)?,
        })
    }
}
