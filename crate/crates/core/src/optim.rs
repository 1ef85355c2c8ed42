//! Derivative-free minimizers: Nelder–Mead in an unconstrained space with
//! bound transforms and seeded restarts, and golden-section search for the
//! one-dimensional inner problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Maps an interval onto the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    /// `x = lo + exp(u)` on `(lo, inf)`.
    Log { lo: f64 },
    /// `x = lo + (hi - lo) / (1 + exp(-u))` on `(lo, hi)`.
    Logit { lo: f64, hi: f64 },
}

impl Transform {
    pub fn to_bounded(&self, u: f64) -> f64 {
        match *self {
            Transform::Log { lo } => lo + u.exp(),
            Transform::Logit { lo, hi } => lo + (hi - lo) / (1.0 + (-u).exp()),
        }
    }

    /// Inverse map; points on or outside the bounds are pulled just inside.
    pub fn to_free(&self, x: f64) -> f64 {
        match *self {
            Transform::Log { lo } => (x - lo).max(1e-300).ln(),
            Transform::Logit { lo, hi } => {
                let p = ((x - lo) / (hi - lo)).clamp(1e-9, 1.0 - 1e-9);
                (p / (1.0 - p)).ln()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_iterations: usize,
    /// Stop when the spread of simplex values is below `f_tol * (|f_best| + 1e-12)`
    /// and its diameter below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
    /// Edge length of the starting simplex in free coordinates.
    pub initial_step: f64,
    /// Extra starts after the first, drawn around the start point.
    pub restarts: usize,
    /// Standard deviation of the restart perturbation in free coordinates.
    pub restart_spread: f64,
    pub seed: u64,
    /// Restarts are skipped once the best value is at or below this.
    #[serde(default)]
    pub f_target: f64,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        NelderMeadConfig {
            max_iterations: 400,
            f_tol: 1e-10,
            x_tol: 1e-7,
            initial_step: 0.3,
            restarts: 3,
            restart_spread: 0.5,
            seed: 17,
            f_target: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Best value after each iteration; non-increasing.
    pub trace: Vec<f64>,
}

/// Plain Nelder–Mead from `x0`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0;
    let mut eval = |x: &[f64]| -> f64 {
        evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += cfg.initial_step;
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if spread.abs() <= cfg.f_tol * (values[0].abs() + 1e-12) && diameter <= cfg.x_tol {
            trace.push(values[0]);
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = toward(-1.0);
        let fr = eval(&reflected);
        if fr < values[0] {
            let expanded = toward(-2.0);
            let fe = eval(&expanded);
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
        } else {
            let (point, fc) = if fr < values[n] {
                let p = toward(-0.5);
                let v = eval(&p);
                (p, v)
            } else {
                let p = toward(0.5);
                let v = eval(&p);
                (p, v)
            };
            if fc < values[n].min(fr) {
                simplex[n] = point;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = best[j] + 0.5 * (simplex[i][j] - best[j]);
                    }
                    values[i] = eval(&simplex[i]);
                }
            }
        }
        trace.push(values.iter().copied().fold(f64::INFINITY, f64::min));
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        evaluations: evals,
        converged,
        trace,
    }
}

/// Nelder–Mead from `x0`, then `cfg.restarts` seeded restarts; the best run wins.
///
/// Each restart perturbs the best point found so far. The returned trace is the
/// running best across all runs.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &NelderMeadConfig) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let mut best = nelder_mead(&mut f, x0, cfg);
    let mut trace = best.trace.clone();
    let mut iterations = best.iterations;
    let mut evaluations = best.evaluations;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.restart_spread.max(1e-12)).expect("finite spread");
    for _ in 0..cfg.restarts {
        if best.value <= cfg.f_target {
            break;
        }
        let start: Vec<f64> = best.x.iter().map(|x| x + noise.sample(&mut rng)).collect();
        let run = nelder_mead(&mut f, &start, cfg);
        iterations += run.iterations;
        evaluations += run.evaluations;
        let floor = trace.last().copied().unwrap_or(f64::INFINITY);
        trace.extend(run.trace.iter().map(|v| v.min(floor)));
        if run.value < best.value {
            best = run;
        }
    }
    Minimum {
        iterations,
        evaluations,
        trace,
        ..best
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes `f` on `[a, b]` by golden-section search, refines with a parabola
/// through the last three points, and compares against both end points.
///
/// Returns `(x, f(x))`.
pub fn golden_section<F>(mut f: F, a: f64, b: f64, x_tol: f64, max_iterations: usize) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
{
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    if hi - lo <= x_tol {
        let m = 0.5 * (lo + hi);
        return (m, f(m));
    }
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..max_iterations {
        if hi - lo <= x_tol {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let (mut best_x, mut best_f) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };

    // Vertex of the parabola through (x1, f1), (x2, f2) and the inner bracket end nearer the best.
    let (x3, f3) = {
        let end = if best_x == x1 { lo } else { hi };
        (end, f(end))
    };
    if let Some(v) = parabola_vertex((x1, f1), (x2, f2), (x3, f3)) {
        if v > lo && v < hi {
            let fv = f(v);
            if fv < best_f {
                best_x = v;
                best_f = fv;
            }
        }
    }
    if f3 < best_f {
        best_x = x3;
        best_f = f3;
    }
    for end in [a.min(b), a.max(b)] {
        let fe = f(end);
        if fe < best_f {
            best_x = end;
            best_f = fe;
        }
    }
    (best_x, best_f)
}

fn parabola_vertex(p: (f64, f64), q: (f64, f64), r: (f64, f64)) -> Option<f64> {
    let num = (q.0 - p.0).powi(2) * (q.1 - r.1) - (q.0 - r.0).powi(2) * (q.1 - p.1);
    let den = (q.0 - p.0) * (q.1 - r.1) - (q.0 - r.0) * (q.1 - p.1);
    if den.abs() < 1e-300 || !den.is_finite() {
        return None;
    }
    let v = q.0 - 0.5 * num / den;
    v.is_finite().then_some(v)
}
