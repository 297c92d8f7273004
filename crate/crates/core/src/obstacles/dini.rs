//! Dini-type integrals `∫₀^{eε} m(ξ) dξ/ξ` and their decay along a ladder of ε.
//!
//! The integral is computed in the variable `t = ln ξ` (so `dξ/ξ = dt`) by
//! composite Simpson down to a truncation point `ξ_min`. The remaining tail is
//! extrapolated from the local log-log exponent `p` of the integrand over the
//! decade below `ξ_min` (`tail ≈ m(ξ_min) / p`, exact for power laws). An
//! integrand whose local exponent drifts towards zero, such as
//! `1 / ln(1/ξ)`, is reported as divergent.

use std::f64::consts::E;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiniError {
    #[error("ε ladder must be strictly decreasing and positive")]
    BadLadder,
    #[error(
        "truncation tail {tail:.3e} still exceeds 10% of the integral {value:.3e} at ξ_min = {xi_min:.1e}"
    )]
    QuadratureUnderflow { tail: f64, value: f64, xi_min: f64 },
    #[error("integrand is not finite at ξ = {0:e}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiniOptions {
    /// Initial lower truncation point.
    pub xi_min: f64,
    /// Simpson panels for the initial range `[ln ξ_min, 1 + ln ε]` at `ε = 1`.
    pub panels: usize,
    /// Tail must not exceed this fraction of the total.
    pub tail_fraction: f64,
    /// The truncation point is pushed down by factors of `1e-10` until the
    /// tail is small enough, but never below this.
    pub xi_floor: f64,
    /// Ratio of the local exponent at `ξ²` to the one at `ξ` below which the
    /// integrand is declared divergent.
    pub drift_ratio: f64,
}

impl Default for DiniOptions {
    fn default() -> Self {
        DiniOptions {
            xi_min: 1e-14,
            panels: 2048,
            tail_fraction: 0.1,
            xi_floor: 1e-300,
            drift_ratio: 0.75,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiniIntegral {
    /// Simpson part plus extrapolated tail (the truncated part alone when divergent).
    pub value: f64,
    pub truncated: f64,
    pub tail: f64,
    pub xi_min: f64,
    /// Local log-log exponent of the integrand at `xi_min`.
    pub local_exponent: f64,
    pub divergent: bool,
}

fn simpson_log(m: &dyn Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> Result<f64, DiniError> {
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mut panels = ((hi - lo) / step).ceil() as usize;
    panels = panels.max(2);
    if panels % 2 == 1 {
        panels += 1;
    }
    let h = (hi - lo) / panels as f64;
    let f = |t: f64| -> Result<f64, DiniError> {
        let xi = t.exp();
        let y = m(xi);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(DiniError::NonFinite(xi))
        }
    };
    let mut sum = f(lo)? + f(hi)?;
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(lo + i as f64 * h)?;
    }
    Ok(sum * h / 3.0)
}

/// Local exponent `d ln m / d ln ξ` over the decade below `xi`; `None` when
/// `m` vanishes there.
fn local_exponent(m: &dyn Fn(f64) -> f64, xi: f64) -> Option<f64> {
    let hi = m(xi);
    let lo = m(xi / 10.0);
    if hi <= 0.0 {
        return None;
    }
    if lo <= 0.0 {
        return Some(f64::INFINITY);
    }
    Some((hi / lo).ln() / std::f64::consts::LN_10)
}

/// Drift test: the exponent measured at `ξ⁴` is markedly smaller than the
/// one at `ξ²`. Exponents behaving like `1/ln(1/ξ)` halve between the two,
/// while sums of powers have settled on their smallest power by then.
fn drifts(m: &dyn Fn(f64) -> f64, xi: f64, opts: &DiniOptions) -> bool {
    let deeper = |x: f64| (x * x).max(opts.xi_floor).min(x * 1e-6);
    let mid_xi = deeper(xi);
    let shallow = local_exponent(m, mid_xi);
    let deep = local_exponent(m, deeper(mid_xi));
    match (shallow, deep) {
        (Some(s), Some(d)) => d <= 0.0 || (s.is_finite() && d < opts.drift_ratio * s),
        (Some(s), None) => s <= 0.0,
        _ => false,
    }
}

/// `∫₀^{upper} m(ξ) dξ/ξ`.
pub fn dini_integral(
    m: &dyn Fn(f64) -> f64,
    upper: f64,
    opts: &DiniOptions,
) -> Result<DiniIntegral, DiniError> {
    if !(upper > 0.0) {
        return Ok(DiniIntegral {
            value: 0.0,
            truncated: 0.0,
            tail: 0.0,
            xi_min: 0.0,
            local_exponent: f64::INFINITY,
            divergent: false,
        });
    }
    let step = (1.0 - opts.xi_min.ln()) / opts.panels as f64;
    let mut xi_min = opts.xi_min.min(upper * 1e-6);
    let mut truncated = simpson_log(m, xi_min.ln(), upper.ln(), step)?;
    loop {
        let p = local_exponent(m, xi_min);
        let tail = match p {
            None => 0.0,
            Some(p) if p.is_infinite() => 0.0,
            Some(p) if p > 0.0 => m(xi_min) / p,
            Some(_) => f64::INFINITY,
        };
        let divergent = tail.is_infinite() || drifts(m, xi_min, opts);
        if divergent {
            return Ok(DiniIntegral {
                value: truncated,
                truncated,
                tail: f64::INFINITY,
                xi_min,
                local_exponent: p.unwrap_or(0.0),
                divergent: true,
            });
        }
        let value = truncated + tail;
        if tail <= opts.tail_fraction * value || value == 0.0 {
            return Ok(DiniIntegral {
                value,
                truncated,
                tail,
                xi_min,
                local_exponent: p.unwrap_or(f64::INFINITY),
                divergent: false,
            });
        }
        let next = xi_min * 1e-10;
        if next < opts.xi_floor {
            return Err(DiniError::QuadratureUnderflow {
                tail,
                value,
                xi_min,
            });
        }
        truncated += simpson_log(m, next.ln(), xi_min.ln(), step)?;
        xi_min = next;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Truncated integrals at fixed ε for a sequence of truncation points.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationSweep {
    pub xi_min: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiniReport {
    pub eps: Vec<f64>,
    pub values: Vec<f64>,
    pub divergent: Vec<bool>,
    /// Least-squares slope of `ln value` against `ln ε` (positive means decay as ε → 0).
    pub slope: Option<f64>,
    pub sweep: TruncationSweep,
    pub verdict: Verdict,
}

pub const TRUNCATION_SWEEP: [f64; 3] = [1e-6, 1e-9, 1e-12];

pub fn validate_ladder(eps: &[f64]) -> Result<(), DiniError> {
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(DiniError::BadLadder);
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(DiniError::BadLadder);
    }
    Ok(())
}

pub fn log_log_slope(eps: &[f64], values: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = eps
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(&e, &v)| (e.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

/// Decay verdict for a ladder of Dini integrals of `m`.
pub fn dini_ladder(
    m: &dyn Fn(f64) -> f64,
    eps_ladder: &[f64],
    opts: &DiniOptions,
) -> Result<DiniReport, DiniError> {
    validate_ladder(eps_ladder)?;
    let mut values = Vec::with_capacity(eps_ladder.len());
    let mut divergent = Vec::with_capacity(eps_ladder.len());
    for &eps in eps_ladder {
        let r = dini_integral(m, E * eps, opts)?;
        values.push(r.value);
        divergent.push(r.divergent);
    }
    let upper = E * eps_ladder[0];
    let sweep_points: Vec<f64> = if upper > 1e-3 {
        TRUNCATION_SWEEP.to_vec()
    } else {
        TRUNCATION_SWEEP.iter().map(|x| x * upper * 1e3).collect()
    };
    let sweep_step = (1.0 - opts.xi_min.ln()) / opts.panels as f64;
    let sweep_values = sweep_points
        .iter()
        .map(|&x| simpson_log(m, x.ln(), upper.ln(), sweep_step))
        .collect::<Result<Vec<_>, _>>()?;
    // growth without bound across the sweep: exponent drift at its deepest point
    let sweep_diverges =
        drifts(m, sweep_points[0], opts) || drifts(m, sweep_points[sweep_points.len() - 1], opts);
    let slope = log_log_slope(eps_ladder, &values);
    let first = values[0];
    let last = *values.last().unwrap();
    let verdict = if divergent.iter().any(|&d| d) || (sweep_diverges && first > 0.0) {
        Verdict::Fail
    } else if values.iter().all(|&v| v == 0.0)
        || (last < 0.1 * first && slope.is_some_and(|s| s > 0.0))
    {
        Verdict::Pass
    } else if values.windows(2).all(|w| w[1] >= w[0]) {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    };
    Ok(DiniReport {
        eps: eps_ladder.to_vec(),
        values,
        divergent,
        slope,
        sweep: TruncationSweep {
            xi_min: sweep_points,
            values: sweep_values,
        },
        verdict,
    })
}

/// Ladder `10^{-2}, 10^{-4}, …, 10^{-24}`.
pub fn default_eps_ladder() -> Vec<f64> {
    (1..=12).map(|i| 10f64.powi(-2 * i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_closed_forms() {
        let opts = DiniOptions::default();
        for (sigma, theta) in [(0.5, 1.0), (0.5, 0.5), (1.0, 0.25)] {
            let p: f64 = sigma * theta;
            let m = move |xi: f64| xi.powf(sigma).powf(theta);
            for eps in [1e-1, 1e-2, 1e-4, 1e-6] {
                let r = dini_integral(&m, E * eps, &opts).unwrap();
                let exact = (E * eps).powf(p) / p;
                assert!(!r.divergent);
                assert!(
                    ((r.value - exact) / exact).abs() < 1e-4,
                    "σ={sigma} θ={theta} ε={eps}: {} vs {exact}",
                    r.value
                );
            }
        }
    }

    #[test]
    fn small_exponent_extends_truncation() {
        let p = 1.0 / 16.0;
        let m = move |xi: f64| xi.powf(p);
        let r = dini_integral(&m, E * 1e-2, &DiniOptions::default()).unwrap();
        assert!(r.xi_min < 1e-14);
        let exact = (E * 1e-2f64).powf(p) / p;
        assert!(((r.value - exact) / exact).abs() < 1e-4);
    }

    #[test]
    fn zero_integrand() {
        let m = |_: f64| 0.0;
        let rep = dini_ladder(&m, &[1e-1, 1e-2, 1e-3], &DiniOptions::default()).unwrap();
        assert!(rep.values.iter().all(|&v| v == 0.0));
        assert_eq!(rep.verdict, Verdict::Pass);
    }

    #[test]
    fn logarithmic_modulus_diverges() {
        for theta in [0.5, 1.0] {
            let m = move |xi: f64| (1.0 / (E + 1.0 / xi).ln()).powf(theta);
            let r = dini_integral(&m, E * 1e-2, &DiniOptions::default()).unwrap();
            assert!(r.divergent);
            let rep = dini_ladder(&m, &default_eps_ladder(), &DiniOptions::default()).unwrap();
            assert_eq!(rep.verdict, Verdict::Fail);
            // truncated values keep growing as ξ_min decreases
            let s = &rep.sweep.values;
            assert!(s[1] > s[0] && s[2] > s[1]);
            assert!(s[2] - s[1] > 0.5 * (s[1] - s[0]));
        }
    }

    #[test]
    fn constant_integrand_fails() {
        let m = |_: f64| 0.3;
        let rep = dini_ladder(&m, &[1e-1, 1e-2], &DiniOptions::default()).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
    }

    #[test]
    fn rejects_bad_ladders() {
        let m = |x: f64| x;
        let o = DiniOptions::default();
        assert_eq!(
            dini_ladder(&m, &[1e-2, 1e-1], &o).unwrap_err(),
            DiniError::BadLadder
        );
        assert_eq!(
            dini_ladder(&m, &[1e-2, 0.0], &o).unwrap_err(),
            DiniError::BadLadder
        );
        assert_eq!(dini_ladder(&m, &[], &o).unwrap_err(), DiniError::BadLadder);
    }

    #[test]
    fn underflow_when_tail_cannot_shrink() {
        let opts = DiniOptions {
            xi_floor: 1e-20,
            ..DiniOptions::default()
        };
        let m = |xi: f64| xi.powf(0.01);
        assert!(matches!(
            dini_integral(&m, E * 1e-2, &opts),
            Err(DiniError::QuadratureUnderflow { .. })
        ));
    }
}
