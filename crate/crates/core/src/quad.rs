//! Adaptive Gauss–Kronrod (G7/K15) integration.
//!
//! The integrator is generic over the integrand's value type so a single pass
//! can accumulate several integrals that share their nodes (the leading and
//! correction terms of a price, for instance). Error control uses the largest
//! component error of the vector-valued estimate.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QuadError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Values that can be integrated: scalars, complex numbers and fixed arrays of either.
pub trait QuadValue: Copy {
    fn zero() -> Self;
    fn add(self, other: Self) -> Self;
    fn scale(self, s: f64) -> Self;
    /// Largest component magnitude.
    fn norm(&self) -> f64;
    fn is_finite(&self) -> bool;
}

impl QuadValue for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
}

impl QuadValue for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add(self, other: Self) -> Self {
        self + other
    }
    fn scale(self, s: f64) -> Self {
        self * s
    }
    fn norm(&self) -> f64 {
        self.re.abs().max(self.im.abs())
    }
    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

impl<V: QuadValue, const N: usize> QuadValue for [V; N] {
    fn zero() -> Self {
        [V::zero(); N]
    }
    fn add(mut self, other: Self) -> Self {
        for (a, b) in self.iter_mut().zip(other) {
            *a = a.add(b);
        }
        self
    }
    fn scale(mut self, s: f64) -> Self {
        for a in self.iter_mut() {
            *a = a.scale(s);
        }
        self
    }
    fn norm(&self) -> f64 {
        self.iter().map(QuadValue::norm).fold(0.0, f64::max)
    }
    fn is_finite(&self) -> bool {
        self.iter().all(QuadValue::is_finite)
    }
}

/// Tolerances and node budget for one adaptive integration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_nodes: usize,
}

impl Tolerance {
    pub fn new(abs: f64, rel: f64, max_nodes: usize) -> Self {
        Tolerance {
            abs,
            rel,
            max_nodes,
        }
    }
}

/// Result of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Integral<V> {
    pub value: V,
    pub error: f64,
    pub nodes: usize,
}

struct Panel<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

impl<V> PartialEq for Panel<V> {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl<V> Eq for Panel<V> {}
impl<V> PartialOrd for Panel<V> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<V> Ord for Panel<V> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<V, F>(f: &mut F, a: f64, b: f64) -> std::result::Result<(V, f64), QuadError>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut values = [V::zero(); 15];
    let mut weights = [0.0; 15];
    values[0] = f(centre);
    weights[0] = WGK[7];
    if !values[0].is_finite() {
        return Err(QuadError::NonFinite { at: centre });
    }
    let mut k15 = values[0].scale(WGK[7]);
    let mut g7 = values[0].scale(WG[3]);
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        if !f1.is_finite() {
            return Err(QuadError::NonFinite { at: centre - dx });
        }
        if !f2.is_finite() {
            return Err(QuadError::NonFinite { at: centre + dx });
        }
        values[2 * j + 1] = f1;
        values[2 * j + 2] = f2;
        weights[2 * j + 1] = w;
        weights[2 * j + 2] = w;
        let pair = f1.add(f2);
        k15 = k15.add(pair.scale(w));
        if j % 2 == 1 {
            g7 = g7.add(pair.scale(WG[j / 2]));
        }
    }

    // QUADPACK error heuristic, applied to the largest component.
    let mean = k15.scale(0.5);
    let mut resasc = 0.0;
    let mut resabs = 0.0;
    for (v, w) in values.iter().zip(weights) {
        resasc += w * v.add(mean.scale(-1.0)).norm();
        resabs += w * v.norm();
    }
    let resasc = resasc * half.abs();
    let resabs = resabs * half.abs();
    let k15 = k15.scale(half);
    let g7 = g7.scale(half);
    let mut err = k15.add(g7.scale(-1.0)).norm();
    if resasc > 0.0 && err > 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Ok((k15, err))
}

/// Integrates `f` over `[a, b]`, first splitting the range into `initial_panels` equal pieces.
pub fn integrate_split<V, F>(
    mut f: F,
    a: f64,
    b: f64,
    initial_panels: usize,
    tol: &Tolerance,
) -> std::result::Result<Integral<V>, QuadError>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    if a == b {
        return Ok(Integral {
            value: V::zero(),
            error: 0.0,
            nodes: 0,
        });
    }
    let n0 = initial_panels.max(1);
    let width = (b - a) / n0 as f64;
    let mut heap = BinaryHeap::with_capacity(4 * n0);
    let mut total = V::zero();
    let mut total_err = 0.0;
    let mut nodes = 0;
    for i in 0..n0 {
        let pa = a + width * i as f64;
        let pb = if i + 1 == n0 { b } else { pa + width };
        let (value, error) = kronrod(&mut f, pa, pb)?;
        nodes += 15;
        total = total.add(value);
        total_err += error;
        heap.push(Panel {
            a: pa,
            b: pb,
            value,
            error,
        });
    }

    loop {
        let target = tol.abs.max(tol.rel * total.norm());
        if total_err <= target {
            break;
        }
        if nodes + 30 > tol.max_nodes {
            return Err(QuadError::NoConvergence {
                max_nodes: tol.max_nodes,
                estimate: total.norm(),
                error: total_err,
            });
        }
        let worst = match heap.pop() {
            Some(p) => p,
            None => break,
        };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel cannot be split further in floating point.
            return Err(QuadError::NoConvergence {
                max_nodes: tol.max_nodes,
                estimate: total.norm(),
                error: total_err,
            });
        }
        let (v1, e1) = kronrod(&mut f, worst.a, mid)?;
        let (v2, e2) = kronrod(&mut f, mid, worst.b)?;
        nodes += 30;
        total = total.add(worst.value.scale(-1.0)).add(v1).add(v2);
        total_err += e1 + e2 - worst.error;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            value: v2,
            error: e2,
        });
    }

    // Re-sum to shed the drift accumulated by incremental updates.
    let mut value = V::zero();
    let mut error = 0.0;
    for p in heap.iter() {
        value = value.add(p.value);
        error += p.error;
    }
    Ok(Integral {
        value,
        error,
        nodes,
    })
}

/// Integrates `f` over `[a, b]`.
pub fn integrate<V, F>(f: F, a: f64, b: f64, tol: &Tolerance) -> Result<Integral<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    Ok(integrate_split(f, a, b, 1, tol)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerance {
        Tolerance::new(1e-13, 1e-13, 100_000)
    }

    #[test]
    fn polynomial_exact() {
        // K15 integrates degree-29 polynomials exactly.
        let r = integrate(|x: f64| x.powi(9) - 3.0 * x * x, 0.0, 2.0, &tol()).unwrap();
        assert!((r.value - (102.4 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_and_peaked() {
        let r = integrate(|x: f64| (50.0 * x).cos(), 0.0, 1.0, &tol()).unwrap();
        assert!((r.value - (50.0f64).sin() / 50.0).abs() < 1e-12);
        let r = integrate(|x: f64| 1.0 / (1e-4 + x * x), -1.0, 1.0, &tol()).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((r.value - exact).abs() / exact < 1e-12);
    }

    #[test]
    fn vector_valued_shares_nodes() {
        let mut calls = 0;
        let r = integrate(
            |x: f64| {
                calls += 1;
                [x.exp(), Complex64::new(0.0, x).exp().re]
            },
            0.0,
            1.0,
            &tol(),
        )
        .unwrap();
        assert_eq!(calls, r.nodes);
        assert!((r.value[0] - (1f64.exp() - 1.0)).abs() < 1e-13);
        assert!((r.value[1] - 1f64.sin()).abs() < 1e-13);
    }

    #[test]
    fn budget_exhaustion_reports_estimate() {
        let err = integrate(
            |x: f64| (1.0 / x.max(1e-300)).sin(),
            0.0,
            1.0,
            &Tolerance::new(1e-15, 1e-15, 200),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Quadrature(QuadError::NoConvergence { max_nodes: 200, .. })
        ));
    }

    #[test]
    fn non_finite_is_reported() {
        let err = integrate(|x: f64| if x > 0.5 { f64::NAN } else { x }, 0.0, 1.0, &tol()).unwrap_err();
        assert!(matches!(
            err,
            crate::Error::Quadrature(QuadError::NonFinite { .. })
        ));
    }
}
