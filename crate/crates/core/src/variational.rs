//! The discrete obstacle problem: functional, chord replacements, clipping,
//! a projected Newton solver, the taut-string oracle and the class checks
//! (graph confinement, energy bound, almost-minimality).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridError, GridFunction};
use crate::lagrangian::{Lagrangian, LagrangianError};
use crate::obstacles::{ObstaclePair, TwoArgModulus};

#[derive(Debug, Error, Clone)]
pub enum VariationalError {
    #[error("pair ({s}, {t}) must satisfy a ≤ s < t ≤ b")]
    DegeneratePair { s: f64, t: f64 },
    #[error("infeasible problem: {0}")]
    InfeasibleSpec(String),
    #[error("no convergence after {} iterations (KKT residual {:.3e})", best.iterations, best.kkt_residual)]
    MaxIterations { best: Box<SolveResult> },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}

/// Problem data: minimize `∫ L(x, u, u′)` over `u(a) = A`, `u(b) = B`,
/// `f ≤ u ≤ g`, discretized on `n` uniform nodes.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub a: f64,
    pub b: f64,
    pub left: f64,
    pub right: f64,
    pub lagrangian: Lagrangian,
    pub obstacles: ObstaclePair,
    pub n: usize,
}

impl ProblemSpec {
    pub fn new(
        lagrangian: Lagrangian,
        obstacles: ObstaclePair,
        left: f64,
        right: f64,
        n: usize,
    ) -> Result<Self, VariationalError> {
        let (a, b) = (obstacles.a(), obstacles.b());
        if n < 3 {
            return Err(VariationalError::Grid(GridError::EmptyGrid(n)));
        }
        if !left.is_finite() || !right.is_finite() {
            return Err(VariationalError::InfeasibleSpec(
                "boundary values must be finite".into(),
            ));
        }
        for (name, x, y) in [("A", a, left), ("B", b, right)] {
            let (lo, hi) = (obstacles.lower(x), obstacles.upper(x));
            if !(lo <= y && y <= hi) {
                return Err(VariationalError::InfeasibleSpec(format!(
                    "{name} = {y} outside [f, g] = [{lo}, {hi}] at x = {x}"
                )));
            }
        }
        Ok(ProblemSpec {
            a,
            b,
            left,
            right,
            lagrangian,
            obstacles,
            n,
        })
    }

    pub fn with_n(&self, n: usize) -> Result<Self, VariationalError> {
        Self::new(
            self.lagrangian.clone(),
            self.obstacles.clone(),
            self.left,
            self.right,
            n,
        )
    }

    pub fn nodes(&self) -> Vec<f64> {
        crate::grid::uniform_nodes(self.a, self.b, self.n)
    }

    /// Nodal bounds with the endpoints pinned to the boundary values.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let xs = self.nodes();
        let mut lo: Vec<f64> = xs.iter().map(|&x| self.obstacles.lower(x)).collect();
        let mut hi: Vec<f64> = xs.iter().map(|&x| self.obstacles.upper(x)).collect();
        let last = self.n - 1;
        lo[0] = self.left;
        hi[0] = self.left;
        lo[last] = self.right;
        hi[last] = self.right;
        (lo, hi)
    }
}

/// `Σ_cells h L(x_mid, u_mid, slope)`.
pub fn functional(l: &Lagrangian, u: &GridFunction) -> Result<f64, LagrangianError> {
    local_functional(l, u, 0, u.len() - 1)
}

/// The functional restricted to the cells between nodes `from` and `to`.
pub fn local_functional(
    l: &Lagrangian,
    u: &GridFunction,
    from: usize,
    to: usize,
) -> Result<f64, LagrangianError> {
    let xs = u.nodes();
    let ys = u.values();
    let mut sum = 0.0;
    for i in from..to {
        let h = xs[i + 1] - xs[i];
        let v = (ys[i + 1] - ys[i]) / h;
        sum += h * l.evaluate(0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[i] + ys[i + 1]), v)?;
    }
    Ok(sum)
}

fn check_pair(u: &GridFunction, s: f64, t: f64) -> Result<(), VariationalError> {
    if !(s < t) || s < u.a() || t > u.b() {
        return Err(VariationalError::DegeneratePair { s, t });
    }
    Ok(())
}

/// `(u(s) − u(t)) / (s − t)`.
pub fn chord_slope(u: &GridFunction, s: f64, t: f64) -> Result<f64, VariationalError> {
    check_pair(u, s, t)?;
    Ok((u.eval(s) - u.eval(t)) / (s - t))
}

fn snap_tol(u: &GridFunction) -> f64 {
    1e-12 * (u.b() - u.a())
}

/// Copy of `u` with nodes at `s` and `t`, and their indices.
fn with_pair_nodes(u: &GridFunction, s: f64, t: f64) -> (GridFunction, usize, usize) {
    let mut w = u.clone();
    let tol = snap_tol(u);
    let is = w.insert_node(s, tol);
    let it = w.insert_node(t, tol);
    (w, is, it)
}

/// `u` with its graph over `[s, t]` replaced by the chord.
pub fn linear_replace(u: &GridFunction, s: f64, t: f64) -> Result<GridFunction, VariationalError> {
    check_pair(u, s, t)?;
    let (mut w, is, it) = with_pair_nodes(u, s, t);
    chord_fill(&mut w, is, it);
    Ok(w)
}

fn chord_fill(w: &mut GridFunction, is: usize, it: usize) {
    let (xs, ys) = (w.nodes().to_vec(), w.values_mut());
    let k = (ys[it] - ys[is]) / (xs[it] - xs[is]);
    for i in is + 1..it {
        ys[i] = ys[is] + k * (xs[i] - xs[is]);
    }
}

/// Nodewise median of `f`, `w`, `g`, after inserting the points where `w`
/// crosses the (nodally interpolated) obstacles.
pub fn clip_to_admissible(w: &GridFunction, pair: &ObstaclePair) -> GridFunction {
    let xs = w.nodes();
    let ys = w.values();
    let tol = snap_tol(w);
    let mut nodes = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        nodes.push(xs[i]);
        if i + 1 == xs.len() {
            break;
        }
        let mut cuts = Vec::new();
        for bound in [
            |p: &ObstaclePair, x| p.lower(x),
            |p: &ObstaclePair, x| p.upper(x),
        ] {
            let d0 = ys[i] - bound(pair, xs[i]);
            let d1 = ys[i + 1] - bound(pair, xs[i + 1]);
            if (d0 < 0.0 && d1 > 0.0) || (d0 > 0.0 && d1 < 0.0) {
                let x = xs[i] + d0 / (d0 - d1) * (xs[i + 1] - xs[i]);
                if x - xs[i] > tol && xs[i + 1] - x > tol {
                    cuts.push(x);
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() <= tol);
        nodes.extend(cuts);
    }
    let values = nodes
        .iter()
        .map(|&x| w.eval(x).clamp(pair.lower(x), pair.upper(x)))
        .collect();
    GridFunction::from_nodes(nodes, values).expect("clipping keeps nodes sorted and values finite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Stop when the KKT residual is below `tol (1 + |J|)`, or below its
    /// rounding floor on fine grids.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-8,
            max_iter: 100_000,
            armijo: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub u: GridFunction,
    pub energy: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Nodes where `u = f`.
    pub active_lower: Vec<usize>,
    /// Nodes where `u = g`.
    pub active_upper: Vec<usize>,
    pub converged: bool,
}

/// Gradient and a positive semidefinite tridiagonal model Hessian of the
/// discrete functional with respect to all nodal values.
struct Model {
    energy: f64,
    grad: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
}

fn model(l: &Lagrangian, xs: &[f64], ys: &[f64]) -> Result<Model, LagrangianError> {
    let n = xs.len();
    let mut m = Model {
        energy: 0.0,
        grad: vec![0.0; n],
        diag: vec![0.0; n],
        off: vec![0.0; n - 1],
    };
    for c in 0..n - 1 {
        let h = xs[c + 1] - xs[c];
        let x = 0.5 * (xs[c] + xs[c + 1]);
        let u = 0.5 * (ys[c] + ys[c + 1]);
        let v = (ys[c + 1] - ys[c]) / h;
        m.energy += h * l.evaluate(x, u, v)?;
        let lu = l.eval_u(x, u, v);
        let lv = l.eval_v(x, u, v);
        let luu = l.eval_uu(x, u, v).max(0.0);
        let lvv = l.eval_vv(x, u, v).max(1e-12);
        let bound = (luu * lvv).sqrt();
        let luv = l.eval_uv(x, u, v).clamp(-bound, bound);
        if !(lu.is_finite() && lv.is_finite() && luu.is_finite() && luv.is_finite()) {
            return Err(LagrangianError::NonFinite { x, u, v });
        }
        m.grad[c] += 0.5 * h * lu - lv;
        m.grad[c + 1] += 0.5 * h * lu + lv;
        m.diag[c] += 0.25 * h * luu - luv + lvv / h;
        m.diag[c + 1] += 0.25 * h * luu + luv + lvv / h;
        m.off[c] += 0.25 * h * luu - lvv / h;
    }
    Ok(m)
}

fn energy(l: &Lagrangian, xs: &[f64], ys: &[f64]) -> Result<f64, LagrangianError> {
    let mut e = 0.0;
    for c in 0..xs.len() - 1 {
        let h = xs[c + 1] - xs[c];
        let v = (ys[c + 1] - ys[c]) / h;
        e += h * l.evaluate(0.5 * (xs[c] + xs[c + 1]), 0.5 * (ys[c] + ys[c + 1]), v)?;
    }
    Ok(e)
}

/// Thomas algorithm for a symmetric tridiagonal system.
fn thomas(diag: &[f64], off: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut denom = diag[0];
    c[0] = if n > 1 { off[0] / denom } else { 0.0 };
    d[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / denom;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

fn node_masses(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { xs[i] - xs[i - 1] } else { 0.0 };
            let right = if i + 1 < n { xs[i + 1] - xs[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Level below which the residual is rounding noise: differencing nodal
/// values loses `ε‖u‖`, amplified by the stiffness `diag/m`.
fn residual_floor(m: &Model, ys: &[f64], mass: &[f64]) -> f64 {
    let sup = ys.iter().fold(0.0f64, |a, y| a.max(y.abs()));
    let stiff = (0..ys.len()).fold(0.0f64, |a, i| a.max(m.diag[i] / mass[i]));
    4.0 * f64::EPSILON * (1.0 + sup) * stiff
}

/// `‖P(u − ∇J/m) − u‖∞` with the nodal masses `m`.
fn kkt_residual(ys: &[f64], grad: &[f64], mass: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..ys.len())
        .map(|i| ((ys[i] - grad[i] / mass[i]).clamp(lo[i], hi[i]) - ys[i]).abs())
        .fold(0.0, f64::max)
}

fn project(ys: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..ys.len() {
        ys[i] = ys[i].clamp(lo[i], hi[i]);
    }
}

/// Newton direction on the free nodes (tridiagonal solve along each maximal
/// run of free nodes), diagonally scaled gradient on the rest.
fn newton_direction(m: &Model, free: &[bool], fixed: &[bool]) -> Vec<f64> {
    let n = m.grad.len();
    let mut d = vec![0.0; n];
    let mut i = 0;
    while i < n {
        if fixed[i] {
            i += 1;
            continue;
        }
        if !free[i] {
            d[i] = -m.grad[i] / m.diag[i].max(1e-300);
            i += 1;
            continue;
        }
        let start = i;
        while i < n && free[i] && !fixed[i] {
            i += 1;
        }
        let dg = &m.diag[start..i];
        let of = &m.off[start..i - 1];
        let rhs: Vec<f64> = m.grad[start..i].iter().map(|g| -g).collect();
        let sol = thomas(dg, of, &rhs);
        d[start..i].copy_from_slice(&sol);
    }
    d
}

/// Projected Newton with an Armijo search along the projection arc.
pub fn solve(spec: &ProblemSpec, opts: &SolverOptions) -> Result<SolveResult, VariationalError> {
    let l = &spec.lagrangian;
    let xs = spec.nodes();
    let (lo, hi) = spec.bounds();
    let n = xs.len();
    let fixed: Vec<bool> = (0..n).map(|i| lo[i] == hi[i]).collect();
    let mass = node_masses(&xs);
    let mut ys: Vec<f64> = xs
        .iter()
        .map(|&x| spec.left + (spec.right - spec.left) * (x - spec.a) / (spec.b - spec.a))
        .collect();
    project(&mut ys, &lo, &hi);
    ys[0] = spec.left;
    ys[n - 1] = spec.right;

    let mut m = model(l, &xs, &ys)?;
    let mut residual = kkt_residual(&ys, &m.grad, &mass, &lo, &hi);
    let mut iterations = 0;
    let target = |m: &Model, ys: &[f64]| {
        (opts.tol * (1.0 + m.energy.abs())).max(residual_floor(m, ys, &mass))
    };
    let mut converged = residual <= target(&m, &ys);
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let eps = residual.min(1e-3);
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = ys[i] <= lo[i] + eps && m.grad[i] > 0.0;
                let at_hi = ys[i] >= hi[i] - eps && m.grad[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let newton = newton_direction(&m, &free, &fixed);
        let scaled: Vec<f64> = (0..n)
            .map(|i| {
                if fixed[i] {
                    0.0
                } else {
                    -m.grad[i] / m.diag[i].max(1e-300)
                }
            })
            .collect();
        let slack = 1e-14 * (1.0 + m.energy.abs());
        let mut accepted = None;
        for dir in [&newton, &scaled] {
            let mut step = 1.0;
            for _ in 0..60 {
                let mut trial: Vec<f64> = (0..n).map(|i| ys[i] + step * dir[i]).collect();
                project(&mut trial, &lo, &hi);
                let decrease: f64 = (0..n).map(|i| m.grad[i] * (trial[i] - ys[i])).sum();
                if decrease < 0.0 {
                    let e = energy(l, &xs, &trial)?;
                    if e <= m.energy + opts.armijo * decrease + slack {
                        accepted = Some(trial);
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some(next) = accepted else {
            break;
        };
        ys = next;
        m = model(l, &xs, &ys)?;
        residual = kkt_residual(&ys, &m.grad, &mass, &lo, &hi);
        converged = residual <= target(&m, &ys);
    }
    let active_lower = (1..n - 1).filter(|&i| ys[i] <= lo[i]).collect();
    let active_upper = (1..n - 1).filter(|&i| ys[i] >= hi[i]).collect();
    let result = SolveResult {
        u: GridFunction::from_nodes(xs, ys)?,
        energy: m.energy,
        iterations,
        kkt_residual: residual,
        active_lower,
        active_upper,
        converged,
    };
    if converged {
        Ok(result)
    } else {
        Err(VariationalError::MaxIterations {
            best: Box::new(result),
        })
    }
}

/// Exact discrete minimizer of `Σ (u_{i+1} − u_i)² / h` under nodal box
/// constraints: the shortest path through the gates `[f_i, g_i]`, traced by
/// a funnel of admissible slopes from each vertex.
pub fn taut_string_oracle(
    pair: &ObstaclePair,
    left: f64,
    right: f64,
    n: usize,
) -> Result<GridFunction, VariationalError> {
    let (a, b) = (pair.a(), pair.b());
    if n < 2 {
        return Err(VariationalError::Grid(GridError::EmptyGrid(n)));
    }
    let xs = crate::grid::uniform_nodes(a, b, n);
    let mut lo: Vec<f64> = xs.iter().map(|&x| pair.lower(x)).collect();
    let mut hi: Vec<f64> = xs.iter().map(|&x| pair.upper(x)).collect();
    for (i, y) in [(0, left), (n - 1, right)] {
        if !(lo[i] <= y && y <= hi[i]) {
            return Err(VariationalError::InfeasibleSpec(format!(
                "boundary value {y} outside [{}, {}]",
                lo[i], hi[i]
            )));
        }
        lo[i] = y;
        hi[i] = y;
    }
    taut_string_on_gates(&xs, &lo, &hi).map(|ys| GridFunction::from_nodes(xs, ys).unwrap())
}

/// Shortest path from `(x_0, lo_0)` to `(x_{n−1}, lo_{n−1})` through the
/// vertical gates `[lo_i, hi_i]`; the end gates must be points.
pub fn taut_string_on_gates(
    xs: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<Vec<f64>, VariationalError> {
    let n = xs.len();
    if let Some(i) = (0..n).find(|&i| lo[i] > hi[i]) {
        return Err(VariationalError::InfeasibleSpec(format!(
            "empty gate at node {i}"
        )));
    }
    let mut ys = vec![f64::NAN; n];
    let mut p = 0;
    ys[0] = lo[0];
    while p < n - 1 {
        let (xp, yp) = (xs[p], ys[p]);
        let (mut s_lo, mut s_hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut j_lo, mut j_hi) = (p, p);
        let mut bend = None;
        for j in p + 1..n {
            let dx = xs[j] - xp;
            let a = (lo[j] - yp) / dx;
            let b = (hi[j] - yp) / dx;
            if a > s_hi {
                bend = Some((j_hi, hi[j_hi]));
                break;
            }
            if b < s_lo {
                bend = Some((j_lo, lo[j_lo]));
                break;
            }
            if a >= s_lo {
                s_lo = a;
                j_lo = j;
            }
            if b <= s_hi {
                s_hi = b;
                j_hi = j;
            }
        }
        let (q, yq) = bend.unwrap_or((n - 1, lo[n - 1]));
        let k = (yq - yp) / (xs[q] - xp);
        for i in p + 1..q {
            ys[i] = (yp + k * (xs[i] - xp)).clamp(lo[i], hi[i]);
        }
        ys[q] = yq;
        p = q;
    }
    Ok(ys)
}

/// Planar compact set for graph confinement.
#[derive(Debug, Clone)]
pub enum PlanarSet {
    Rect {
        x_lo: f64,
        x_hi: f64,
        u_lo: f64,
        u_hi: f64,
    },
    /// `{(x, u) : f(x) ≤ u ≤ g(x)}`.
    Band(ObstaclePair),
}

impl PlanarSet {
    pub fn contains(&self, x: f64, u: f64) -> bool {
        match self {
            PlanarSet::Rect {
                x_lo,
                x_hi,
                u_lo,
                u_hi,
            } => *x_lo <= x && x <= *x_hi && *u_lo <= u && u <= *u_hi,
            PlanarSet::Band(p) => p.a() <= x && x <= p.b() && p.lower(x) <= u && u <= p.upper(x),
        }
    }
}

/// Graph of `u` (at its nodes) inside `k`.
pub fn check_a1(u: &GridFunction, k: &PlanarSet) -> bool {
    u.nodes()
        .iter()
        .zip(u.values())
        .all(|(&x, &y)| k.contains(x, y))
}

/// `J(u) ≤ c`.
pub fn check_a2(u: &GridFunction, l: &Lagrangian, c: f64) -> Result<bool, LagrangianError> {
    Ok(functional(l, u)? <= c)
}

/// Pairs `(s, t)` across dyadic scales `δ₀, δ₀/2, …`: per scale, lengths
/// uniform in `[scale/2, scale]` at uniformly random positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairPlan {
    pub scales: usize,
    pub per_scale: usize,
    pub seed: u64,
    /// Also sample `t − s > δ₀`, reported separately.
    pub beyond_delta0: bool,
}

impl Default for PairPlan {
    fn default() -> Self {
        PairPlan {
            scales: 11,
            per_scale: 100,
            seed: 0,
            beyond_delta0: false,
        }
    }
}

impl PairPlan {
    pub fn with_total(total: usize, seed: u64) -> Self {
        let scales = 11;
        PairPlan {
            scales,
            per_scale: total.div_ceil(scales),
            seed,
            beyond_delta0: false,
        }
    }

    /// Sampled pairs within `[a, b]`; the scales start at `min(δ, b − a)`.
    pub fn pairs(&self, a: f64, b: f64, delta: f64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let top = delta.min(b - a);
        let mut out = Vec::with_capacity(self.scales * self.per_scale);
        for i in 0..self.scales {
            let scale = top / 2f64.powi(i as i32);
            for _ in 0..self.per_scale {
                let len = rng.gen_range(0.5 * scale..=scale);
                let s = a + rng.gen::<f64>() * (b - a - len);
                out.push((s, (s + len).min(b)));
            }
        }
        out
    }

    /// Pairs with `t − s` uniform in `]δ, b − a]`.
    pub fn pairs_beyond(&self, a: f64, b: f64, delta: f64) -> Vec<(f64, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15);
        if delta >= b - a {
            return Vec::new();
        }
        (0..self.per_scale)
            .map(|_| {
                let len = delta + rng.gen::<f64>() * (b - a - delta);
                let s = a + rng.gen::<f64>() * (b - a - len);
                (s, (s + len).min(b))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSlack {
    pub s: f64,
    pub t: f64,
    pub slope: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct A3Report {
    pub energy: f64,
    pub tol: f64,
    pub pairs: usize,
    pub min_slack: f64,
    pub violations: Vec<PairSlack>,
    /// Pairs longer than `δ₀` (not part of the verdict).
    pub beyond: Option<(usize, f64)>,
}

impl A3Report {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// `J(u_{s,t}) + ω(|k_u(s,t)|, t − s)(t − s) − J(u)`, with both functionals
/// taken on the grid of `u` refined at `s` and `t`.
pub fn a3_slack(
    u: &GridFunction,
    l: &Lagrangian,
    omega: &TwoArgModulus,
    s: f64,
    t: f64,
) -> Result<PairSlack, VariationalError> {
    check_pair(u, s, t)?;
    let (mut w, is, it) = with_pair_nodes(u, s, t);
    let (s, t) = (w.nodes()[is], w.nodes()[it]);
    let before = local_functional(l, &w, is, it)?;
    chord_fill(&mut w, is, it);
    let after = local_functional(l, &w, is, it)?;
    let slope = (w.values()[it] - w.values()[is]) / (t - s);
    let slack = after - before + omega.eval(slope.abs(), t - s) * (t - s);
    Ok(PairSlack { s, t, slope, slack })
}

pub fn check_a3(
    u: &GridFunction,
    l: &Lagrangian,
    omega: &TwoArgModulus,
    delta0: f64,
    plan: &PairPlan,
) -> Result<A3Report, VariationalError> {
    let energy = functional(l, u)?;
    let tol = 1e-6 * (1.0 + energy.abs());
    let pairs = plan.pairs(u.a(), u.b(), delta0);
    let slacks = pairs
        .par_iter()
        .map(|&(s, t)| a3_slack(u, l, omega, s, t))
        .collect::<Result<Vec<_>, _>>()?;
    let min_slack = slacks.iter().map(|p| p.slack).fold(f64::INFINITY, f64::min);
    let violations = slacks.iter().filter(|p| p.slack < -tol).copied().collect();
    let beyond = if plan.beyond_delta0 {
        let extra = plan.pairs_beyond(u.a(), u.b(), delta0);
        let slacks = extra
            .par_iter()
            .map(|&(s, t)| a3_slack(u, l, omega, s, t))
            .collect::<Result<Vec<_>, _>>()?;
        Some((
            slacks.len(),
            slacks.iter().map(|p| p.slack).fold(f64::INFINITY, f64::min),
        ))
    } else {
        None
    };
    Ok(A3Report {
        energy,
        tol,
        pairs: slacks.len(),
        min_slack,
        violations,
        beyond,
    })
}

/// Adds `amount` at the first node from `n/4` on that is free in `result`
/// and stays admissible after the shift. Returns the node and the new function.
pub fn inject_perturbation(
    result: &SolveResult,
    pair: &ObstaclePair,
    amount: f64,
) -> Option<(usize, GridFunction)> {
    let u = &result.u;
    let n = u.len();
    let is_active = |i: usize| {
        result.active_lower.binary_search(&i).is_ok()
            || result.active_upper.binary_search(&i).is_ok()
    };
    let i = (n / 4..n - 1).find(|&i| {
        let x = u.nodes()[i];
        let y = u.values()[i] + amount;
        i > 0 && !is_active(i) && pair.lower(x) <= y && y <= pair.upper(x)
    })?;
    let mut w = u.clone();
    w.values_mut()[i] += amount;
    Some((i, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::obstacles::{Obstacle, PairOptions};
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    fn constant_pair(f: f64, g: f64) -> ObstaclePair {
        ObstaclePair::new(
            Obstacle::constant(f),
            Obstacle::constant(g),
            0.0,
            1.0,
            PairOptions::default(),
        )
        .unwrap()
    }

    fn parabola_pair(n: usize) -> ObstaclePair {
        ObstaclePair::new(
            Obstacle::parse("0.5 - 4*(x-0.5)^2", None).unwrap(),
            Obstacle::constant(10.0),
            0.0,
            1.0,
            PairOptions::for_solver_grid(n),
        )
        .unwrap()
    }

    fn dirichlet() -> Lagrangian {
        Lagrangian::parse("v^2", 2.0).unwrap()
    }

    #[test]
    fn functional_examples() {
        let l = dirichlet();
        let u = GridFunction::sample(0.0, 2.0, 11, |x| 3.0 * x).unwrap();
        assert!((functional(&l, &u).unwrap() - 18.0).abs() < 1e-12);
        let u = GridFunction::sample(0.0, 1.0, 11, |_| 4.0).unwrap();
        assert_eq!(functional(&l, &u).unwrap(), 0.0);
        let l = Lagrangian::parse("v^2 + u^2", 2.0).unwrap();
        let u = GridFunction::sample(0.0, 1.0, 1001, |x| x).unwrap();
        assert!((functional(&l, &u).unwrap() - 4.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn functional_converges_at_second_order() {
        let l = Lagrangian::parse("v^2 + sin(x)*u^2", 2.0).unwrap();
        let exact = |n| {
            let u = GridFunction::sample(0.0, 1.0, n, |x| (2.0 * x).exp()).unwrap();
            functional(&l, &u).unwrap()
        };
        let (j1, j2, j3) = (exact(51), exact(101), exact(201));
        let ratio = (j1 - j2) / (j2 - j3);
        assert!((3.5..=4.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn chord_slopes() {
        let u = GridFunction::sample(0.0, 1.0, 101, |x| x * x).unwrap();
        assert!((chord_slope(&u, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let u = GridFunction::sample(0.0, 1.0, 101, |x| -2.0 * x + 1.0).unwrap();
        assert!((chord_slope(&u, 0.13, 0.77).unwrap() + 2.0).abs() < 1e-12);
        let u = GridFunction::sample(0.0, 1.0, 101, |x| (x - 0.5).abs()).unwrap();
        assert_eq!(chord_slope(&u, 0.0, 1.0).unwrap(), 0.0);
        assert!(matches!(
            chord_slope(&u, 0.5, 0.5),
            Err(VariationalError::DegeneratePair { .. })
        ));
    }

    #[test]
    fn linear_replacement_examples() {
        let line = GridFunction::sample(0.0, 1.0, 11, |x| 2.0 * x - 1.0).unwrap();
        let r = linear_replace(&line, 0.2, 0.75).unwrap();
        for &x in r.nodes() {
            assert!((r.eval(x) - line.eval(x)).abs() < 1e-15);
        }
        let u = GridFunction::sample(0.0, 1.0, 101, |x| x * x).unwrap();
        let r = linear_replace(&u, 0.0, 1.0).unwrap();
        for (&x, &y) in r.nodes().iter().zip(r.values()) {
            assert!((y - x).abs() < 1e-15);
        }
        let u = GridFunction::sample(0.0, 1.0, 101, |x| (std::f64::consts::PI * x).sin()).unwrap();
        let r = linear_replace(&u, 0.25, 0.75).unwrap();
        assert!((r.eval(0.5) - 0.5f64.sqrt()).abs() < 1e-12);
        let r = linear_replace(&u, 0.123, 0.456).unwrap();
        assert_eq!(r.len(), u.len() + 2);
        for i in 0..r.cells() {
            if r.nodes()[i] >= 0.123 - 1e-15 && r.nodes()[i + 1] <= 0.456 + 1e-15 {
                let k = chord_slope(&u, 0.123, 0.456).unwrap();
                assert!((r.cell_slope(i) - k).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn clip_examples() {
        let pair = constant_pair(0.0, 1.0);
        let w = GridFunction::sample(0.0, 1.0, 11, |x| 0.3 + 0.2 * x).unwrap();
        assert_eq!(clip_to_admissible(&w, &pair), w);
        let w = GridFunction::sample(0.0, 1.0, 11, |_| -1.0).unwrap();
        assert!(clip_to_admissible(&w, &pair)
            .values()
            .iter()
            .all(|&y| y == 0.0));
        let w = GridFunction::sample(0.0, 1.0, 5, |x| 2.0 * x - 0.5).unwrap();
        let c = clip_to_admissible(&w, &pair);
        for x in [0.0, 0.1, 0.25, 0.3, 0.5, 0.7, 0.75, 0.9, 1.0] {
            let expected = (2.0 * x - 0.5f64).clamp(0.0, 1.0);
            assert!((c.eval(x) - expected).abs() < 1e-14, "{x}");
        }
        assert!(c.nodes().iter().any(|&x| (x - 0.25).abs() < 1e-14));
        assert!(c.nodes().iter().any(|&x| (x - 0.75).abs() < 1e-14));
    }

    proptest! {
        #[test]
        fn clip_is_idempotent_and_monotone(
            w1 in prop::collection::vec(-2.0f64..2.0, 9),
            bump in prop::collection::vec(0.0f64..1.0, 9),
        ) {
            let pair = ObstaclePair::new(
                Obstacle::parse("-0.5 + 0.5*x", None).unwrap(),
                Obstacle::constant(1.0),
                0.0,
                1.0,
                PairOptions { sample_nodes: 101, ..Default::default() },
            )
            .unwrap();
            let w2: Vec<f64> = w1.iter().zip(&bump).map(|(a, b)| a + b).collect();
            let g1 = GridFunction::uniform(0.0, 1.0, w1).unwrap();
            let g2 = GridFunction::uniform(0.0, 1.0, w2).unwrap();
            let c1 = clip_to_admissible(&g1, &pair);
            let c2 = clip_to_admissible(&g2, &pair);
            prop_assert_eq!(&clip_to_admissible(&c1, &pair), &c1);
            for &x in c1.nodes().iter().chain(c2.nodes()) {
                prop_assert!(c1.eval(x) <= c2.eval(x) + 1e-12);
                prop_assert!(c1.eval(x) >= pair.lower(x) - 1e-12);
            }
        }

        #[test]
        fn linear_replace_keeps_outside_and_is_idempotent(
            ys in prop::collection::vec(-3.0f64..3.0, 12),
            s in 0.0f64..0.9,
            len in 0.01f64..0.5,
        ) {
            let u = GridFunction::uniform(0.0, 1.0, ys).unwrap();
            let t = (s + len).min(1.0);
            let r = linear_replace(&u, s, t).unwrap();
            for (&x, &y) in u.nodes().iter().zip(u.values()) {
                if x <= s || x >= t {
                    prop_assert_eq!(r.eval(x), y);
                }
            }
            let rr = linear_replace(&r, s, t).unwrap();
            prop_assert_eq!(rr.len(), r.len());
            for (a, b) in rr.values().iter().zip(r.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn solves_inactive_line() {
        let spec =
            ProblemSpec::new(dirichlet(), constant_pair(-10.0, 10.0), 0.0, 1.0, 101).unwrap();
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        assert!(r.converged);
        for (&x, &y) in r.u.nodes().iter().zip(r.u.values()) {
            assert!((y - x).abs() < 1e-10);
        }
        assert!((r.energy - 1.0).abs() < 1e-10);
        assert!(r.active_lower.is_empty() && r.active_upper.is_empty());
    }

    #[test]
    fn rejects_infeasible_boundary_values() {
        let err = ProblemSpec::new(dirichlet(), constant_pair(0.0, 1.0), 2.0, 0.5, 11).unwrap_err();
        assert!(matches!(err, VariationalError::InfeasibleSpec(_)));
    }

    #[test]
    fn solver_matches_oracle_on_parabola() {
        let n = 401;
        let pair = parabola_pair(n);
        let spec = ProblemSpec::new(dirichlet(), pair.clone(), 0.0, 0.0, n).unwrap();
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        let oracle = taut_string_oracle(&pair, 0.0, 0.0, n).unwrap();
        assert!(
            r.u.sup_distance(&oracle) < 1e-6,
            "{}",
            r.u.sup_distance(&oracle)
        );
        assert!(!r.active_lower.is_empty());
        let (lo, hi) = spec.bounds();
        for (i, &y) in r.u.values().iter().enumerate() {
            assert!(lo[i] <= y && y <= hi[i]);
        }
        assert_eq!(r.u.values()[0], 0.0);
        assert_eq!(r.u.values()[n - 1], 0.0);
    }

    #[test]
    fn oracle_tangency_matches_analysis() {
        let n = 2001;
        let u = taut_string_oracle(&parabola_pair(n), 0.0, 0.0, n).unwrap();
        // tangent from the origin touches 0.5 − 4(x − ½)² at x* = √(1/8)
        let xs = (1.0f64 / 8.0).sqrt();
        let slope = 4.0 - 8.0 * xs;
        assert!((u.eval(0.2) - slope * 0.2).abs() < 1e-3);
        assert!((u.eval(1.0 - 0.2) - slope * 0.2).abs() < 1e-3);
        assert!((u.eval(0.5) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_forced_single_node() {
        let xs = [0.0, 0.5, 1.0];
        let ys = taut_string_on_gates(&xs, &[0.0, 0.4, 0.0], &[0.0, 10.0, 0.0]).unwrap();
        assert_eq!(ys, vec![0.0, 0.4, 0.0]);
        let ys = taut_string_on_gates(&xs, &[0.0, -10.0, 1.0], &[0.0, 10.0, 1.0]).unwrap();
        assert_eq!(ys, vec![0.0, 0.5, 1.0]);
    }

    /// Projected Gauss–Seidel on the Dirichlet energy.
    fn gauss_seidel(lo: &[f64], hi: &[f64]) -> Vec<f64> {
        let n = lo.len();
        let mut y: Vec<f64> = (0..n)
            .map(|i| 0.5 * (lo[i] + hi[i].min(lo[i] + 1.0)))
            .collect();
        y[0] = lo[0];
        y[n - 1] = lo[n - 1];
        for _ in 0..200_000 {
            for i in 1..n - 1 {
                y[i] = (0.5 * (y[i - 1] + y[i + 1])).clamp(lo[i], hi[i]);
            }
        }
        y
    }

    #[test]
    fn oracle_agrees_with_gauss_seidel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = 12;
            let xs = crate::grid::uniform_nodes(0.0, 1.0, n);
            let mut lo: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.5)).collect();
            let mut hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.05..1.0)).collect();
            lo[0] = 0.0;
            hi[0] = 0.0;
            lo[n - 1] = 0.2;
            hi[n - 1] = 0.2;
            let ys = taut_string_on_gates(&xs, &lo, &hi).unwrap();
            let gs = gauss_seidel(&lo, &hi);
            for i in 0..n {
                assert!((ys[i] - gs[i]).abs() < 1e-9, "{i}: {} vs {}", ys[i], gs[i]);
            }
        }
    }

    #[test]
    fn solver_is_locally_minimal() {
        let n = 201;
        let pair = ObstaclePair::new(
            Obstacle::parse("0.3*sin(6*x) - 0.2", None).unwrap(),
            Obstacle::parse("0.8 - 0.3*x^2", None).unwrap(),
            0.0,
            1.0,
            PairOptions::for_solver_grid(n),
        )
        .unwrap();
        let l = Lagrangian::parse("v^2 + u^2 + 0.1*v^4", 2.0).unwrap();
        let spec = ProblemSpec::new(l.clone(), pair.clone(), 0.0, 0.1, n).unwrap();
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        let tol = 1e-6 * (1.0 + r.energy.abs());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut v = r.u.clone();
            let centre = rng.gen_range(1..n - 1);
            let amp = rng.gen_range(-0.05..0.05);
            let width = rng.gen_range(1..20) as f64;
            for i in 1..n - 1 {
                let x = v.nodes()[i];
                let bump = amp * (-((i as f64 - centre as f64) / width).powi(2)).exp();
                let y = v.values()[i] + bump;
                v.values_mut()[i] = y.clamp(pair.lower(x), pair.upper(x));
            }
            assert!(functional(&l, &v).unwrap() >= r.energy - tol);
        }
    }

    #[test]
    fn a1_a2_examples() {
        let k = PlanarSet::Rect {
            x_lo: 0.0,
            x_hi: 1.0,
            u_lo: -1.0,
            u_hi: 1.0,
        };
        let zero = GridFunction::sample(0.0, 1.0, 11, |_| 0.0).unwrap();
        assert!(check_a1(&zero, &k));
        let tall = GridFunction::sample(0.0, 1.0, 11, |x| 2.0 * x).unwrap();
        assert!(!check_a1(&tall, &k));
        let l = dirichlet();
        let line = GridFunction::sample(0.0, 1.0, 11, |x| x).unwrap();
        let j = functional(&l, &line).unwrap();
        assert!(check_a2(&line, &l, j.abs() + 1.0).unwrap());
        assert!(!check_a2(&line, &l, 0.5).unwrap());
        assert!(check_a2(&zero, &l, 0.0).unwrap());
    }

    #[test]
    fn a3_detects_perturbation() {
        let spec =
            ProblemSpec::new(dirichlet(), constant_pair(-10.0, 10.0), 0.0, 1.0, 201).unwrap();
        let r = solve(&spec, &SolverOptions::default()).unwrap();
        let plan = PairPlan::default();
        let rep = check_a3(&r.u, &spec.lagrangian, &TwoArgModulus::zero(), 0.2, &plan).unwrap();
        assert!(rep.ok(), "{}", rep.min_slack);
        assert!(rep.min_slack >= -rep.tol);
        let (i, bad) = inject_perturbation(&r, &spec.obstacles, 0.1).unwrap();
        assert_eq!(i, 50);
        let rep = check_a3(&bad, &spec.lagrangian, &TwoArgModulus::zero(), 0.2, &plan).unwrap();
        assert!(!rep.ok());
    }

    #[test]
    fn pair_plan_is_deterministic_and_in_range() {
        let plan = PairPlan {
            beyond_delta0: true,
            ..Default::default()
        };
        let p1 = plan.pairs(0.0, 1.0, 0.3);
        assert_eq!(p1, plan.pairs(0.0, 1.0, 0.3));
        assert_eq!(p1.len(), 1100);
        for &(s, t) in &p1 {
            assert!(0.0 <= s && s < t && t <= 1.0 && t - s <= 0.3 + 1e-15);
        }
        for &(s, t) in &plan.pairs_beyond(0.0, 1.0, 0.3) {
            assert!(t - s > 0.3 - 1e-12 && t <= 1.0);
        }
    }
}
