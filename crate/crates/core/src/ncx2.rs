//! Non-central chi-square density and expectations against it.
//!
//! The density is evaluated as a Poisson mixture of central chi-square
//! densities. Terms are summed outward from the largest one, which is located
//! in closed form, so a single pair of log-gamma evaluations suffices and the
//! remaining terms follow by ratio recurrences.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{check_non_negative, check_positive, Error, QuadError, Result};
use crate::quad::{integrate_split, QuadValue, Tolerance};

/// Law of `Z_T / delta` for a CIR factor started at `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ncx2Params {
    pub dof: f64,
    pub lambda: f64,
    /// Scale linking the chi-square variable to the factor: `Z_T = delta * zeta`.
    pub delta: f64,
}

impl Ncx2Params {
    pub fn new(dof: f64, lambda: f64, delta: f64) -> Result<Self> {
        check_positive("dof", dof)?;
        check_non_negative("lambda", lambda)?;
        check_positive("delta", delta)?;
        Ok(Ncx2Params { dof, lambda, delta })
    }

    /// Transition law of `dZ = kappa (theta - Z) dt + sigma sqrt(Z) dW` over `tau`.
    pub fn for_cir(kappa: f64, theta: f64, sigma: f64, z: f64, tau: f64) -> Result<Self> {
        check_positive("kappa", kappa)?;
        check_positive("tau", tau)?;
        check_non_negative("z", z)?;
        let decay = (-kappa * tau).exp();
        let delta = -(-kappa * tau).exp_m1() * sigma * sigma / (4.0 * kappa);
        Self::new(4.0 * kappa * theta / (sigma * sigma), z * decay / delta, delta)
    }

    pub fn mean(&self) -> f64 {
        self.dof + self.lambda
    }

    pub fn variance(&self) -> f64 {
        2.0 * (self.dof + 2.0 * self.lambda)
    }
}

/// Most mixture terms summed before giving up.
pub const MAX_TERMS: usize = 100_000;

/// Density at `zeta`.
pub fn ncx2_pdf(zeta: f64, p: &Ncx2Params) -> Result<f64> {
    if zeta < 0.0 || !zeta.is_finite() {
        return Ok(0.0);
    }
    let half_dof = 0.5 * p.dof;
    let mu = 0.5 * p.lambda;
    if zeta == 0.0 {
        // Only the j = 0 term can be non-zero.
        return Ok(match half_dof.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => 0.5 * (-mu).exp(),
            _ => 0.0,
        });
    }
    let half_x = 0.5 * zeta;
    // log of the j-th term: -mu + j ln mu - ln j! + (h+j-1) ln(x/2) - x/2 - ln Γ(h+j) - ln 2
    let log_term = |j: f64| -> f64 {
        let poisson = if mu > 0.0 {
            -mu + j * mu.ln() - ln_gamma(j + 1.0)
        } else {
            0.0
        };
        poisson + (half_dof + j - 1.0) * half_x.ln() - half_x - ln_gamma(half_dof + j) - std::f64::consts::LN_2
    };
    if mu == 0.0 {
        return Ok(log_term(0.0).exp());
    }
    // Ratio of consecutive terms is mu * x/2 / ((j+1)(h+j)); the peak is where it crosses one.
    let c = mu * half_x;
    let b = half_dof + 1.0;
    let root = 0.5 * (-b + (b * b - 4.0 * (half_dof - c)).max(0.0).sqrt());
    let j0 = root.max(0.0).floor();
    let peak = log_term(j0);
    if !peak.is_finite() {
        return Ok(0.0);
    }

    let mut sum = 1.0;
    let mut term = 1.0;
    let mut j = j0;
    let mut n = 1;
    loop {
        term *= c / ((j + 1.0) * (half_dof + j));
        j += 1.0;
        sum += term;
        n += 1;
        if term < 1e-17 * sum {
            break;
        }
        if n > MAX_TERMS {
            return Err(Error::SeriesNonConvergence {
                terms: MAX_TERMS,
                lambda: p.lambda,
            });
        }
    }
    let mut term = 1.0;
    let mut j = j0;
    while j > 0.0 {
        term *= (j * (half_dof + j - 1.0)) / c;
        j -= 1.0;
        sum += term;
        n += 1;
        if term < 1e-17 * sum {
            break;
        }
        if n > MAX_TERMS {
            return Err(Error::SeriesNonConvergence {
                terms: MAX_TERMS,
                lambda: p.lambda,
            });
        }
    }
    Ok((peak + sum.ln()).exp())
}

/// Upper end of the first integration panel: mean plus 40 standard deviations.
fn initial_upper(p: &Ncx2Params) -> f64 {
    p.mean() + 40.0 * p.variance().sqrt()
}

/// `integral from lo to infinity of g(zeta) f(zeta) d zeta`.
///
/// The range is cut at mean + 40 sd and extended by doubling until an added
/// piece falls below `tol.abs`. For `dof < 2` the density is singular at zero;
/// near the origin the integral is taken in `s = zeta^(dof/2)`, which removes
/// the singularity.
pub fn expect<V, G>(p: &Ncx2Params, lo: f64, g: G, tol: &Tolerance) -> Result<V>
where
    V: QuadValue,
    G: FnMut(f64) -> V,
{
    Ok(expect_segments(p, &[lo], g, tol)?[0])
}

/// Integrals of `g f` over `[c0, c1], [c1, c2], ..., [c_last, infinity)` for
/// ascending cut points. Cuts below zero are moved to zero.
///
/// Placing the kinks of a family of payoffs at the cuts lets one pass over the
/// density price all of them.
pub fn expect_segments<V, G>(p: &Ncx2Params, cuts: &[f64], mut g: G, tol: &Tolerance) -> Result<Vec<V>>
where
    V: QuadValue,
    G: FnMut(f64) -> V,
{
    if cuts.is_empty() {
        return Ok(Vec::new());
    }
    let cuts: Vec<f64> = cuts.iter().map(|c| c.max(0.0)).collect();
    if cuts.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter {
            name: "cuts",
            reason: "must be ascending".into(),
        });
    }
    let failure: std::cell::Cell<Option<Error>> = std::cell::Cell::new(None);
    let mut weighted = |zeta: f64| -> V {
        match ncx2_pdf(zeta, p) {
            Ok(f) if f == 0.0 => V::zero(),
            Ok(f) => g(zeta).scale(f),
            Err(e) => {
                failure.set(Some(e));
                V::zero().scale(f64::NAN)
            }
        }
    };

    let mut out = Vec::with_capacity(cuts.len());
    for w in cuts.windows(2) {
        out.push(segment(&mut weighted, p, w[0], w[1], tol, &failure)?);
    }

    let lo = cuts[cuts.len() - 1];
    let mut upper = initial_upper(p).max(2.0 * lo).max(1.0);
    let mut total = segment(&mut weighted, p, lo, upper, tol, &failure)?;
    for _ in 0..30 {
        let r = integrate_split(&mut weighted, upper, 2.0 * upper, 4, tol);
        let tail = finish(r, &failure)?;
        total = total.add(tail);
        upper *= 2.0;
        if tail.norm() < tol.abs {
            out.push(total);
            return Ok(out);
        }
    }
    Err(Error::Quadrature(QuadError::NoConvergence {
        max_nodes: tol.max_nodes,
        estimate: total.norm(),
        error: f64::NAN,
    }))
}

/// Integral over `[a, b]`, using the singularity-removing substitution below 1 when `dof < 2`.
fn segment<V, F>(
    weighted: &mut F,
    p: &Ncx2Params,
    a: f64,
    b: f64,
    tol: &Tolerance,
    failure: &std::cell::Cell<Option<Error>>,
) -> Result<V>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    if !(b > a) {
        return Ok(V::zero());
    }
    let mut total = V::zero();
    let mut start = a;
    if p.dof < 2.0 && a < 1.0 {
        let power = 2.0 / p.dof;
        let end = b.min(1.0);
        let r = integrate_split(
            |s: f64| {
                let zeta = s.powf(power);
                let jac = if s == 0.0 { 0.0 } else { power * zeta / s };
                if jac == 0.0 {
                    V::zero()
                } else {
                    weighted(zeta).scale(jac)
                }
            },
            a.powf(0.5 * p.dof),
            end.powf(0.5 * p.dof),
            4,
            tol,
        );
        total = total.add(finish(r, failure)?);
        start = end;
    }
    if b > start {
        let r = integrate_split(&mut *weighted, start, b, 8, tol);
        total = total.add(finish(r, failure)?);
    }
    Ok(total)
}

fn finish<V>(
    r: std::result::Result<crate::quad::Integral<V>, QuadError>,
    failure: &std::cell::Cell<Option<Error>>,
) -> Result<V> {
    match r {
        Ok(i) => Ok(i.value),
        Err(e) => Err(failure.take().unwrap_or(Error::Quadrature(e))),
    }
}
