use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::grid::{GridError, GridFunction};

type Curve = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Surface = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Tabulated modulus of continuity of a piecewise-linear function.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulusTable {
    /// Lags, starting with `0`, strictly increasing.
    pub eps: Vec<f64>,
    /// Values, starting with `0`, nondecreasing.
    pub omega: Vec<f64>,
    /// Largest cell slope of the underlying interpolant; bounds the modulus
    /// below the first positive lag.
    pub lipschitz: f64,
    /// Length of the domain; past it the modulus is constant.
    pub span: f64,
}

/// A modulus of continuity `ω: [0, ∞) → [0, ∞)`, either tabulated from grid
/// data or given in closed form.
#[derive(Clone)]
pub enum Modulus {
    Tabulated(ModulusTable),
    Analytic { label: String, f: Curve },
}

impl fmt::Debug for Modulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modulus::Tabulated(t) => f
                .debug_struct("Tabulated")
                .field("lags", &t.eps.len())
                .field("max", &t.omega.last())
                .finish(),
            Modulus::Analytic { label, .. } => write!(f, "Analytic({label})"),
        }
    }
}

impl Modulus {
    pub fn zero() -> Self {
        Modulus::Tabulated(ModulusTable {
            eps: vec![0.0],
            omega: vec![0.0],
            lipschitz: 0.0,
            span: f64::INFINITY,
        })
    }

    /// `c ξ^σ`.
    pub fn power(c: f64, sigma: f64) -> Self {
        Modulus::Analytic {
            label: format!("{c}*xi^{sigma}"),
            f: Arc::new(move |xi: f64| if xi <= 0.0 { 0.0 } else { c * xi.powf(sigma) }),
        }
    }

    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Modulus::Analytic {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, eps: f64) -> f64 {
        self.eval_checked(eps).0
    }

    /// Value at `eps` and whether `eps` lies beyond the tabulated range
    /// (the value is then clamped to the last entry).
    pub fn eval_checked(&self, eps: f64) -> (f64, bool) {
        if !(eps > 0.0) {
            return (0.0, false);
        }
        match self {
            Modulus::Analytic { f, .. } => (f(eps), false),
            Modulus::Tabulated(t) => {
                let last = t.eps.len() - 1;
                if last == 0 {
                    return (t.omega[0], false);
                }
                if eps < t.eps[1] {
                    return ((t.lipschitz * eps).min(t.omega[1]), false);
                }
                if eps >= t.eps[last] {
                    return (t.omega[last], eps > t.eps[last] && t.eps[last] < t.span);
                }
                // round up to the next tabulated lag
                let j = t.eps.partition_point(|&e| e < eps);
                (t.omega[j], false)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Modulus::Tabulated(t) => t.omega.iter().all(|&w| w == 0.0),
            Modulus::Analytic { .. } => false,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Modulus::Tabulated(t) => format!("tabulated({} lags)", t.eps.len() - 1),
            Modulus::Analytic { label, .. } => label.clone(),
        }
    }
}

/// Geometric lag ladder from `first` up to `last` (inclusive), four lags per octave.
pub fn geometric_lags(first: f64, last: f64) -> Vec<f64> {
    let mut lags = Vec::new();
    let ratio = 2f64.powf(0.25);
    let mut e = first;
    while e < last * (1.0 - 1e-12) {
        lags.push(e);
        e *= ratio;
    }
    lags.push(last);
    lags
}

/// Lags suited to `h`: from its smallest node spacing up to its span.
pub fn default_lags(h: &GridFunction) -> Vec<f64> {
    let min_gap = (0..h.cells())
        .map(|i| h.cell_width(i))
        .fold(f64::INFINITY, f64::min);
    geometric_lags(min_gap, h.b() - h.a())
}

/// Modulus of continuity of the interpolant of `h`, tabulated at `lags`:
/// `ω_j = max { |h(x) − h(y)| : x, y nodes, |x − y| ≤ ε_j }`.
pub fn estimate_modulus(h: &GridFunction, lags: &[f64]) -> Result<Modulus, GridError> {
    if h.len() < 2 {
        return Err(GridError::EmptyGrid(h.len()));
    }
    let xs = h.nodes();
    let ys = h.values();
    let n = xs.len();
    let mut eps = vec![0.0];
    let mut omega = vec![0.0];
    for &lag in lags {
        if !(lag > 0.0) || lag <= *eps.last().unwrap() {
            continue;
        }
        let reach = lag * (1.0 + 1e-12);
        let mut maxq: VecDeque<usize> = VecDeque::new();
        let mut minq: VecDeque<usize> = VecDeque::new();
        let mut r = 0;
        let mut best = 0.0f64;
        for i in 0..n {
            while r < n && xs[r] - xs[i] <= reach {
                while maxq.back().is_some_and(|&k| ys[k] <= ys[r]) {
                    maxq.pop_back();
                }
                maxq.push_back(r);
                while minq.back().is_some_and(|&k| ys[k] >= ys[r]) {
                    minq.pop_back();
                }
                minq.push_back(r);
                r += 1;
            }
            while maxq.front().is_some_and(|&k| k < i) {
                maxq.pop_front();
            }
            while minq.front().is_some_and(|&k| k < i) {
                minq.pop_front();
            }
            if let (Some(&hi), Some(&lo)) = (maxq.front(), minq.front()) {
                best = best.max(ys[hi] - ys[lo]);
            }
        }
        let prev = *omega.last().unwrap();
        eps.push(lag);
        omega.push(best.max(prev));
    }
    let lipschitz = (0..h.cells())
        .map(|i| h.cell_slope(i).abs())
        .fold(0.0, f64::max);
    Ok(Modulus::Tabulated(ModulusTable {
        eps,
        omega,
        lipschitz,
        span: h.b() - h.a(),
    }))
}

/// `ω(k, ε)`: nondecreasing in both arguments, zero at `ε = 0`.
#[derive(Clone)]
pub struct TwoArgModulus {
    label: String,
    f: Surface,
}

impl fmt::Debug for TwoArgModulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TwoArgModulus({})", self.label)
    }
}

impl TwoArgModulus {
    pub fn zero() -> Self {
        Self::from_fn("0", |_, _| 0.0)
    }

    pub fn from_fn(
        label: impl Into<String>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TwoArgModulus {
            label: label.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, k: f64, eps: f64) -> f64 {
        if !(eps > 0.0) {
            return 0.0;
        }
        (self.f)(k.max(0.0), eps)
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_modulus() {
        let h = GridFunction::sample(0.0, 1.0, 101, |x| 2.0 * x).unwrap();
        let m = estimate_modulus(&h, &[0.1]).unwrap();
        assert!((m.eval(0.1) - 0.2).abs() < 1e-12);
        // below the first lag the Lipschitz ramp applies
        assert!((m.eval(0.01) - 0.02).abs() < 1e-12);
        assert_eq!(m.eval(0.0), 0.0);
    }

    #[test]
    fn constant_function_modulus_vanishes() {
        let h = GridFunction::sample(0.0, 1.0, 11, |_| 3.0).unwrap();
        let m = estimate_modulus(&h, &default_lags(&h)).unwrap();
        assert!(m.is_zero());
        for e in [1e-9, 0.05, 0.5, 2.0] {
            assert_eq!(m.eval(e), 0.0);
        }
    }

    #[test]
    fn square_root_modulus_at_origin() {
        // brute-force pair scan oracle on the same grid
        let h = GridFunction::sample(0.0, 1.0, 10_001, f64::sqrt).unwrap();
        let m = estimate_modulus(&h, &[0.01]).unwrap();
        let xs = h.nodes();
        let ys = h.values();
        let mut brute = 0.0f64;
        for i in 0..xs.len() {
            for j in i..xs.len() {
                if xs[j] - xs[i] > 0.01 * (1.0 + 1e-12) {
                    break;
                }
                brute = brute.max((ys[j] - ys[i]).abs());
            }
            if i > 200 {
                break; // increments of sqrt shrink away from the origin
            }
        }
        assert_eq!(m.eval(0.01), brute);
        assert!((m.eval(0.01) - 0.1).abs() <= 2e-3);
    }

    #[test]
    fn clamps_beyond_last_lag() {
        let h = GridFunction::sample(0.0, 2.0, 21, |x| x * x).unwrap();
        let m = estimate_modulus(&h, &[0.1, 0.5]).unwrap();
        let (v, clamped) = m.eval_checked(1.0);
        assert!(clamped);
        assert_eq!(v, m.eval(0.5));
        let full = estimate_modulus(&h, &default_lags(&h)).unwrap();
        let (v, clamped) = full.eval_checked(10.0);
        assert!(!clamped);
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_is_conservative_on_nonuniform_grid() {
        let mut h = GridFunction::sample(0.0, 1.0, 41, |x| (7.0 * x).sin() + x * x).unwrap();
        h.insert_node(0.3333, 1e-12);
        h.insert_node(0.71, 1e-12);
        let m = estimate_modulus(&h, &default_lags(&h)).unwrap();
        let xs = h.nodes();
        let ys = h.values();
        for i in 0..xs.len() {
            for j in i..xs.len() {
                let d = xs[j] - xs[i];
                assert!((ys[j] - ys[i]).abs() <= m.eval(d) + 1e-15);
            }
        }
    }
}
