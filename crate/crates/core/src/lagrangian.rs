//! Lagrangians `L(x, u, v)` with their derivatives, plus empirical checks of
//! local Hölder continuity and uniform ellipticity on compact boxes.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::expr::{Expr, ExprError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("L({x}, {u}, {v}) is not finite")]
    NonFinite { x: f64, u: f64, v: f64 },
    #[error("box has zero volume in coordinate {0}")]
    DegenerateBox(&'static str),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("ellipticity constant must be positive, got {0}")]
    BadMu(f64),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type ScalarFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Integrand of the variational functional together with its partial derivatives.
///
/// Derivatives that were not supplied fall back to central differences with
/// step `1e-5 (1 + |arg|)`; see [`Lagrangian::has_exact_derivatives`].
#[derive(Clone)]
pub struct Lagrangian {
    f: ScalarFn,
    f_u: Option<ScalarFn>,
    f_v: Option<ScalarFn>,
    f_uu: Option<ScalarFn>,
    f_uv: Option<ScalarFn>,
    f_vv: Option<ScalarFn>,
    mu: f64,
    source: String,
}

impl fmt::Debug for Lagrangian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Lagrangian")
            .field("source", &self.source)
            .field("mu", &self.mu)
            .field("exact_derivatives", &self.has_exact_derivatives())
            .finish()
    }
}

fn fd_step(t: f64) -> f64 {
    1e-5 * (1.0 + t.abs())
}

fn expr_fn(e: Expr) -> ScalarFn {
    Arc::new(move |x, u, v| e.eval(x, u, v))
}

impl Lagrangian {
    /// Wrap a closure; all derivatives are taken by finite differences.
    pub fn from_fn(
        source: impl Into<String>,
        mu: f64,
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Lagrangian {
            f: Arc::new(f),
            f_u: None,
            f_v: None,
            f_uu: None,
            f_uv: None,
            f_vv: None,
            mu,
            source: source.into(),
        }
    }

    pub fn with_v_derivatives(
        mut self,
        f_v: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        f_vv: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.f_v = Some(Arc::new(f_v));
        self.f_vv = Some(Arc::new(f_vv));
        self
    }

    pub fn with_u_derivatives(
        mut self,
        f_u: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        f_uu: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
        f_uv: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.f_u = Some(Arc::new(f_u));
        self.f_uu = Some(Arc::new(f_uu));
        self.f_uv = Some(Arc::new(f_uv));
        self
    }

    /// Build from an expression; every derivative is obtained symbolically.
    pub fn from_expr(expr: Expr, mu: f64) -> Self {
        let e_u = expr.derivative(Var::U);
        let e_v = expr.derivative(Var::V);
        let e_uu = e_u.derivative(Var::U);
        let e_uv = e_u.derivative(Var::V);
        let e_vv = e_v.derivative(Var::V);
        Lagrangian {
            source: expr.source().to_string(),
            f: expr_fn(expr),
            f_u: Some(expr_fn(e_u)),
            f_v: Some(expr_fn(e_v)),
            f_uu: Some(expr_fn(e_uu)),
            f_uv: Some(expr_fn(e_uv)),
            f_vv: Some(expr_fn(e_vv)),
            mu,
        }
    }

    pub fn parse(src: &str, mu: f64) -> Result<Self, LagrangianError> {
        if !(mu > 0.0) {
            return Err(LagrangianError::BadMu(mu));
        }
        let e = Expr::parse(src, &[Var::X, Var::U, Var::V])?;
        Ok(Self::from_expr(e, mu))
    }

    /// Replace the `v`-derivatives with user-supplied expressions.
    pub fn override_v_derivatives(mut self, e_v: Expr, e_vv: Expr) -> Self {
        self.f_v = Some(expr_fn(e_v));
        self.f_vv = Some(expr_fn(e_vv));
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn has_exact_derivatives(&self) -> bool {
        self.f_v.is_some() && self.f_vv.is_some()
    }

    /// Checked evaluation.
    pub fn evaluate(&self, x: f64, u: f64, v: f64) -> Result<f64, LagrangianError> {
        let y = (self.f)(x, u, v);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(LagrangianError::NonFinite { x, u, v })
        }
    }

    #[inline]
    pub fn eval(&self, x: f64, u: f64, v: f64) -> f64 {
        (self.f)(x, u, v)
    }

    pub fn eval_v(&self, x: f64, u: f64, v: f64) -> f64 {
        match &self.f_v {
            Some(g) => g(x, u, v),
            None => {
                let h = fd_step(v);
                (self.eval(x, u, v + h) - self.eval(x, u, v - h)) / (2.0 * h)
            }
        }
    }

    pub fn eval_vv(&self, x: f64, u: f64, v: f64) -> f64 {
        match (&self.f_vv, &self.f_v) {
            (Some(g), _) => g(x, u, v),
            (None, Some(g)) => {
                let h = fd_step(v);
                (g(x, u, v + h) - g(x, u, v - h)) / (2.0 * h)
            }
            (None, None) => {
                let h = fd_step(v);
                (self.eval(x, u, v + h) - 2.0 * self.eval(x, u, v) + self.eval(x, u, v - h))
                    / (h * h)
            }
        }
    }

    pub fn eval_u(&self, x: f64, u: f64, v: f64) -> f64 {
        match &self.f_u {
            Some(g) => g(x, u, v),
            None => {
                let h = fd_step(u);
                (self.eval(x, u + h, v) - self.eval(x, u - h, v)) / (2.0 * h)
            }
        }
    }

    pub fn eval_uu(&self, x: f64, u: f64, v: f64) -> f64 {
        match &self.f_uu {
            Some(g) => g(x, u, v),
            None => {
                let h = fd_step(u);
                (self.eval(x, u + h, v) - 2.0 * self.eval(x, u, v) + self.eval(x, u - h, v))
                    / (h * h)
            }
        }
    }

    pub fn eval_uv(&self, x: f64, u: f64, v: f64) -> f64 {
        match &self.f_uv {
            Some(g) => g(x, u, v),
            None => {
                let h = fd_step(u);
                (self.eval_v(x, u + h, v) - self.eval_v(x, u - h, v)) / (2.0 * h)
            }
        }
    }
}

/// Axis-aligned box in `(x, u, v)` space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompactBox {
    pub x_lo: f64,
    pub x_hi: f64,
    pub u_lo: f64,
    pub u_hi: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl CompactBox {
    pub fn new(x: (f64, f64), u: (f64, f64), v: (f64, f64)) -> Result<Self, LagrangianError> {
        for (name, (lo, hi)) in [("x", x), ("u", u), ("v", v)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(LagrangianError::DegenerateBox(name));
            }
        }
        Ok(CompactBox {
            x_lo: x.0,
            x_hi: x.1,
            u_lo: u.0,
            u_hi: u.1,
            v_lo: v.0,
            v_hi: v.1,
        })
    }

    fn lo(&self) -> [f64; 3] {
        [self.x_lo, self.u_lo, self.v_lo]
    }

    fn width(&self) -> [f64; 3] {
        [
            self.x_hi - self.x_lo,
            self.u_hi - self.u_lo,
            self.v_hi - self.v_lo,
        ]
    }

    /// `ℓ¹` diameter.
    pub fn diameter(&self) -> f64 {
        self.width().iter().sum()
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        let lo = self.lo();
        let w = self.width();
        (0..3).all(|i| p[i] >= lo[i] && p[i] <= lo[i] + w[i])
    }

    /// Map a point of the unit cube into the box.
    pub fn map_unit(&self, t: [f64; 3]) -> [f64; 3] {
        let lo = self.lo();
        let w = self.width();
        [
            lo[0] + t[0] * w[0],
            lo[1] + t[1] * w[1],
            lo[2] + t[2] * w[2],
        ]
    }

    /// Corners, center and `n` Halton points.
    pub fn sample_points(&self, n: usize) -> Vec<[f64; 3]> {
        let mut pts = Vec::with_capacity(n + 9);
        for mask in 0..8u32 {
            let t = [
                (mask & 1) as f64,
                ((mask >> 1) & 1) as f64,
                ((mask >> 2) & 1) as f64,
            ];
            pts.push(self.map_unit(t));
        }
        pts.push(self.map_unit([0.5; 3]));
        for i in 1..=n {
            pts.push(self.map_unit([halton(i, 2), halton(i, 3), halton(i, 5)]));
        }
        pts
    }

    /// Tensor grid with an odd number of points per axis, so the center is included.
    pub fn tensor_grid(&self, n: usize) -> Vec<[f64; 3]> {
        let mut m = (n as f64).cbrt().ceil() as usize;
        m = m.max(3);
        if m % 2 == 0 {
            m += 1;
        }
        let mut pts = Vec::with_capacity(m * m * m);
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let s = (m - 1) as f64;
                    pts.push(self.map_unit([i as f64 / s, j as f64 / s, k as f64 / s]));
                }
            }
        }
        pts
    }
}

/// Radical inverse of `i` in `base`.
pub fn halton(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

pub const HOLDER_LADDER: [f64; 4] = [1.0, 0.5, 1.0 / 3.0, 0.25];
pub const HOLDER_SAFETY: f64 = 1.1;
const PROBE_SCALES: [f64; 3] = [1e-2, 1e-3, 1e-4];
const STABLE_GROWTH: f64 = 1.5;

#[derive(Debug, Clone, PartialEq)]
pub struct HolderEstimate {
    pub c: f64,
    pub alpha: f64,
    pub bounding_box: CompactBox,
    pub sample_count: usize,
    /// `false` when no exponent on the ladder gave a scale-stable ratio; the
    /// smallest exponent is then reported.
    pub stable: bool,
}

fn l1(p: &[f64; 3], q: &[f64; 3]) -> f64 {
    (p[0] - q[0]).abs() + (p[1] - q[1]).abs() + (p[2] - q[2]).abs()
}

/// Probe pairs `(p, p + d e)` around every sample point at three scales.
fn probe_pairs(bx: &CompactBox, pts: &[[f64; 3]]) -> Vec<(usize, [f64; 3], [f64; 3], f64)> {
    let diam = bx.diameter();
    let w = bx.width();
    let dirs: [[f64; 3]; 4] = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
    ];
    let mut out = Vec::new();
    for p in pts {
        for dir in &dirs {
            for (si, scale) in PROBE_SCALES.iter().enumerate() {
                let d = scale * diam;
                // keep each component step inside the box
                let step: [f64; 3] = std::array::from_fn(|i| (dir[i] * d).min(w[i]));
                if step.iter().all(|&s| s <= 0.0) {
                    continue;
                }
                let lo = bx.lo();
                let q: [f64; 3] = std::array::from_fn(|i| {
                    let fwd = p[i] + step[i];
                    if fwd <= lo[i] + w[i] {
                        fwd
                    } else {
                        (p[i] - step[i]).max(lo[i])
                    }
                });
                let dist = l1(p, &q);
                if dist > 0.0 {
                    out.push((si, *p, q, dist));
                }
            }
        }
    }
    out
}

/// Empirical Hölder pair `(C, α)` of `L` on `bx`.
///
/// `α` is the first exponent of [`HOLDER_LADDER`] whose difference quotient
/// stays bounded (growth below 1.5×) as probe distances shrink from `1e-2` to
/// `1e-4` of the box diameter; `C` is 1.1× the largest quotient over all
/// sampled pairs at that exponent.
pub fn estimate_holder(
    l: &Lagrangian,
    bx: &CompactBox,
    n_samples: usize,
) -> Result<HolderEstimate, LagrangianError> {
    if n_samples < 2 {
        return Err(LagrangianError::TooFewSamples {
            min: 2,
            got: n_samples,
        });
    }
    let pts = bx.sample_points(n_samples);
    let vals: Vec<f64> = pts
        .iter()
        .map(|p| l.evaluate(p[0], p[1], p[2]))
        .collect::<Result<_, _>>()?;
    let probes = probe_pairs(bx, &pts);
    let probe_vals: Vec<(usize, f64, f64)> = probes
        .iter()
        .map(|(si, p, q, d)| {
            let dl = (l.evaluate(p[0], p[1], p[2])? - l.evaluate(q[0], q[1], q[2])?).abs();
            Ok((*si, dl, *d))
        })
        .collect::<Result<_, LagrangianError>>()?;

    let mut chosen = None;
    for &alpha in &HOLDER_LADDER {
        let mut per_scale = [0.0f64; PROBE_SCALES.len()];
        for &(si, dl, d) in &probe_vals {
            per_scale[si] = per_scale[si].max(dl / d.powf(alpha));
        }
        let coarse = per_scale[0];
        let fine = per_scale[PROBE_SCALES.len() - 1];
        if fine <= STABLE_GROWTH * coarse || fine == 0.0 {
            chosen = Some((alpha, true));
            break;
        }
    }
    let (alpha, stable) = chosen.unwrap_or((HOLDER_LADDER[HOLDER_LADDER.len() - 1], false));

    let pair_max = (0..pts.len())
        .into_par_iter()
        .map(|i| {
            let mut m = 0.0f64;
            for j in (i + 1)..pts.len() {
                let d = l1(&pts[i], &pts[j]);
                if d > 0.0 {
                    m = m.max((vals[i] - vals[j]).abs() / d.powf(alpha));
                }
            }
            m
        })
        .reduce(|| 0.0, f64::max);
    let probe_max = probe_vals
        .iter()
        .fold(0.0f64, |m, &(_, dl, d)| m.max(dl / d.powf(alpha)));

    Ok(HolderEstimate {
        c: HOLDER_SAFETY * pair_max.max(probe_max),
        alpha,
        bounding_box: *bx,
        sample_count: pts.len(),
        stable,
    })
}

/// Whether `L_vv ≥ μ` at every point of a tensor grid on `bx`; also returns
/// the smallest observed `L_vv`.
pub fn check_ellipticity(
    l: &Lagrangian,
    bx: &CompactBox,
    n_samples: usize,
) -> Result<(bool, f64), LagrangianError> {
    if n_samples < 1 {
        return Err(LagrangianError::TooFewSamples {
            min: 1,
            got: n_samples,
        });
    }
    let mut observed = f64::INFINITY;
    for p in bx.tensor_grid(n_samples) {
        let d = l.eval_vv(p[0], p[1], p[2]);
        if !d.is_finite() {
            return Err(LagrangianError::NonFinite {
                x: p[0],
                u: p[1],
                v: p[2],
            });
        }
        observed = observed.min(d);
    }
    Ok((observed >= l.mu(), observed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_v_box() -> CompactBox {
        CompactBox::new((0.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let l = Lagrangian::parse("v^2", 2.0).unwrap();
        assert_eq!(l.evaluate(0.0, 0.0, 3.0).unwrap(), 9.0);
        let l = Lagrangian::parse("v^2 + u^2", 2.0).unwrap();
        assert_eq!(l.evaluate(0.5, 2.0, 1.0).unwrap(), 5.0);
        let l = Lagrangian::parse("(1+v^2)^(1/2)", 1.0).unwrap();
        assert_eq!(l.evaluate(0.0, 0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn evaluate_flags_non_finite() {
        let l = Lagrangian::parse("log(v)", 1.0).unwrap();
        assert!(matches!(
            l.evaluate(0.0, 0.0, 0.0),
            Err(LagrangianError::NonFinite { .. })
        ));
        let l = Lagrangian::parse("1 / v", 1.0).unwrap();
        assert!(l.evaluate(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn rejects_nonpositive_mu_and_degenerate_box() {
        assert_eq!(
            Lagrangian::parse("v^2", 0.0).unwrap_err(),
            LagrangianError::BadMu(0.0)
        );
        assert_eq!(
            CompactBox::new((0.0, 1.0), (0.0, 0.0), (0.0, 1.0)).unwrap_err(),
            LagrangianError::DegenerateBox("u")
        );
    }

    #[test]
    fn symbolic_v_derivative_matches_central_difference() {
        let l = Lagrangian::parse("v^2 + u^2", 2.0).unwrap();
        let h = 1e-4;
        for i in 0..10 {
            for j in 0..10 {
                for k in 0..10 {
                    let (x, u, v) = (i as f64 / 9.0, -2.0 + j as f64 * 0.4, -3.0 + k as f64 * 0.6);
                    let fd = (l.eval(x, u, v + h) - l.eval(x, u, v - h)) / (2.0 * h);
                    assert!((l.eval_v(x, u, v) - fd).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn finite_difference_fallback_is_reasonable() {
        let l = Lagrangian::from_fn("v^2 + u^2", 2.0, |_, u, v| v * v + u * u);
        assert!(!l.has_exact_derivatives());
        for &(u, v) in &[(0.3, -1.2), (2.0, 0.5), (-1.0, 4.0)] {
            assert!((l.eval_v(0.0, u, v) - 2.0 * v).abs() < 1e-6);
            assert!((l.eval_u(0.0, u, v) - 2.0 * u).abs() < 1e-6);
            assert!((l.eval_vv(0.0, u, v) - 2.0).abs() < 1e-3);
            assert!((l.eval_uu(0.0, u, v) - 2.0).abs() < 1e-3);
            assert!(l.eval_uv(0.0, u, v).abs() < 1e-3);
        }
    }

    #[test]
    fn holder_of_quadratic_is_lipschitz() {
        let l = Lagrangian::parse("v^2", 2.0).unwrap();
        let est = estimate_holder(&l, &unit_v_box(), 150).unwrap();
        assert_eq!(est.alpha, 1.0);
        assert!(est.stable);
        assert!(est.c <= 2.2 + 1e-12, "C = {}", est.c);
        assert!(est.c > 1.0);
    }

    #[test]
    fn holder_of_constant_is_zero() {
        let l = Lagrangian::parse("3", 1.0).unwrap();
        let est = estimate_holder(&l, &unit_v_box(), 50).unwrap();
        assert_eq!(est.alpha, 1.0);
        assert_eq!(est.c, 0.0);
    }

    #[test]
    fn holder_of_square_root_cusp() {
        let l = Lagrangian::parse("sqrt(abs(v))", 1.0).unwrap();
        let bx = unit_v_box();
        let est = estimate_holder(&l, &bx, 150).unwrap();
        assert_eq!(est.alpha, 0.5);
        // brute force over the same sample set
        let pts = bx.sample_points(150);
        let mut max_ratio = 0.0f64;
        for i in 0..pts.len() {
            for j in 0..i {
                let d = l1(&pts[i], &pts[j]);
                let dl = (l.eval(pts[i][0], pts[i][1], pts[i][2])
                    - l.eval(pts[j][0], pts[j][1], pts[j][2]))
                .abs();
                max_ratio = max_ratio.max(dl / d.sqrt());
            }
        }
        assert!(est.c >= 1.1 * max_ratio);
        assert!(est.c <= 1.1 * 1.0 + 1e-12);
    }

    #[test]
    fn holder_rejects_too_few_samples() {
        let l = Lagrangian::parse("v^2", 2.0).unwrap();
        assert!(matches!(
            estimate_holder(&l, &unit_v_box(), 1),
            Err(LagrangianError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn ellipticity_examples() {
        let bx = CompactBox::new((0.0, 1.0), (-2.0, 2.0), (-1.0, 1.0)).unwrap();
        let l = Lagrangian::parse("v^2", 2.0).unwrap();
        assert_eq!(check_ellipticity(&l, &bx, 100).unwrap(), (true, 2.0));
        let l = Lagrangian::parse("v^2 + u^2", 2.0).unwrap();
        assert_eq!(check_ellipticity(&l, &bx, 100).unwrap(), (true, 2.0));
        let l = Lagrangian::parse("v^4", 0.1).unwrap();
        let (ok, min) = check_ellipticity(&l, &bx, 100).unwrap();
        assert!(!ok);
        assert_eq!(min, 0.0);
    }

    #[test]
    fn holder_monotone_on_nested_boxes() {
        let l = Lagrangian::parse("v^2 + u^2 + sin(3*x) * v", 2.0).unwrap();
        let mut prev: Option<HolderEstimate> = None;
        for r in [0.5, 1.0, 2.0, 4.0] {
            let bx = CompactBox::new((0.0, 1.0), (-r, r), (-r, r)).unwrap();
            let est = estimate_holder(&l, &bx, 120).unwrap();
            if let Some(p) = &prev {
                assert!(est.alpha <= p.alpha);
                assert!(est.c >= p.c, "C shrank: {} < {}", est.c, p.c);
            }
            prev = Some(est);
        }
    }
}
