//! Constants and moduli behind the slope-stability estimates: the `L²` bound
//! `N` on derivatives, the admissible range of `δ₀`, the per-`k` table of
//! suprema and Hölder pairs, the bounds `Δ₁`, `Δ₂`, `Δ`, the composite
//! modulus `ω̄`, and the least fixed point `δ(k, ε)`.

use std::f64::consts::E;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::GridFunction;
use crate::lagrangian::{estimate_holder, CompactBox, Lagrangian, LagrangianError};
use crate::obstacles::{
    dini_integral, dini_ladder, obstacle_omega, required_thetas, DiniError, DiniOptions,
    DiniReport, ObstaclePair, TwoArgModulus, Verdict,
};
use crate::variational::{chord_slope, PairPlan, VariationalError};

#[derive(Debug, Error, Clone)]
pub enum TheoryError {
    #[error("no growth threshold M below {cap:e}: L(x,u,v) < μv²/4 at |v| = {at:e}")]
    NoSuchM { cap: f64, at: f64 },
    #[error("invalid input: {0}")]
    BadInput(String),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    Dini(#[from] DiniError),
    #[error(transparent)]
    Variational(#[from] VariationalError),
}

pub const K_GRID: [f64; 8] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0];
pub const M_CAP: f64 = 1e6;
pub const ETA_CAP: f64 = 1e3;

/// `√(4c/μ + M²(b − a))`.
pub fn compute_n(c: f64, mu: f64, m_growth: f64, length: f64) -> f64 {
    (4.0 * c / mu + m_growth * m_growth * length).sqrt()
}

/// Largest `δ₀` with `δ₀ + N√δ₀ ≤ 1`.
pub fn max_delta0(n: f64) -> f64 {
    let s = 2.0 / (n + (n * n + 4.0).sqrt());
    let mut d = s * s;
    while d + n * d.sqrt() > 1.0 {
        d *= 1.0 - f64::EPSILON;
    }
    d
}

/// Positive root of `(μ/4)ζ² − 2c_k ζ − (2c_k + ω) = 0`.
pub fn compute_m_k(mu: f64, c_k: f64, omega_at_cap: f64) -> f64 {
    (2.0 * c_k + (4.0 * c_k * c_k + mu * (2.0 * c_k + omega_at_cap)).sqrt()) / (0.5 * mu)
}

/// Smallest `M` such that `L(x, u, v) ≥ μv²/4` for `x ∈ [a, b]`, `|u| ≤ c1`
/// and `M ≤ |v| ≤ 1e6`, on a sampled grid: the largest violating sample
/// `|v|` on a geometric ladder is refined by bisection.
pub fn compute_m_growth(
    l: &Lagrangian,
    c1: f64,
    mu: f64,
    a: f64,
    b: f64,
) -> Result<f64, TheoryError> {
    let xs: Vec<f64> = (0..5).map(|i| a + (b - a) * i as f64 / 4.0).collect();
    let us: Vec<f64> = if c1 > 0.0 {
        (0..9).map(|i| -c1 + 2.0 * c1 * i as f64 / 8.0).collect()
    } else {
        vec![0.0]
    };
    let fails = |speed: f64| -> bool {
        let bound = 0.25 * mu * speed * speed;
        xs.iter().any(|&x| {
            us.iter()
                .any(|&u| l.eval(x, u, speed) < bound || l.eval(x, u, -speed) < bound)
        })
    };
    let mut ladder = vec![0.0];
    let per_decade = 50;
    for i in 0..=(12 * per_decade) {
        ladder.push(1e-6 * 10f64.powf(i as f64 / per_decade as f64));
    }
    let Some(worst) = ladder.iter().rposition(|&v| fails(v)) else {
        return Ok(0.0);
    };
    if worst + 1 >= ladder.len() {
        return Err(TheoryError::NoSuchM {
            cap: M_CAP,
            at: ladder[worst],
        });
    }
    let (mut lo, mut hi) = (ladder[worst], ladder[worst + 1]);
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if fails(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// `√(2/μ) √(2C₁ε^α + ω(k, ε))`.
pub fn delta1_bound(k: f64, eps: f64, c1: f64, alpha: f64, mu: f64, omega: &TwoArgModulus) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    (2.0 / mu).sqrt() * (2.0 * c1 * eps.powf(alpha) + omega.eval(k, eps)).sqrt()
}

/// `C₁(ε + Δ₁)^α + 2C₂Δ₁ + ω(k, ε)`.
pub fn delta2_bound(
    k: f64,
    eps: f64,
    c1: f64,
    alpha: f64,
    c2: f64,
    mu: f64,
    omega: &TwoArgModulus,
) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    let d1 = delta1_bound(k, eps, c1, alpha, mu, omega);
    c1 * (eps + d1).powf(alpha) + 2.0 * c2 * d1 + omega.eval(k, eps)
}

/// Constants entering `Δ` for one value of `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaInputs {
    pub mu: f64,
    pub n: f64,
    pub c1: f64,
    pub alpha: f64,
    pub c2: f64,
}

/// `max{Δ₁(k, ε + N√ε), (2/√μ)√Δ₂(k, ε + N√ε)}`.
pub fn big_delta(k: f64, eps: f64, p: &DeltaInputs, omega: &TwoArgModulus) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    let e = eps + p.n * eps.sqrt();
    let d1 = delta1_bound(k, e, p.c1, p.alpha, p.mu, omega);
    let d2 = delta2_bound(k, e, p.c1, p.alpha, p.c2, p.mu, omega);
    d1.max(2.0 / p.mu.sqrt() * d2.sqrt())
}

/// `ω̂(k, ε) = √ω(k, ε + N√ε)`.
pub fn omega_hat(k: f64, eps: f64, omega: &TwoArgModulus, n: f64) -> f64 {
    if eps <= 0.0 {
        return 0.0;
    }
    omega.eval(k, eps + n * eps.sqrt()).sqrt()
}

/// `ω̄ = (√ω̂)^α + √ω̂ + ω̂`.
pub fn omega_bar(k: f64, eps: f64, omega: &TwoArgModulus, alpha: f64, n: f64) -> f64 {
    let w = omega_hat(k, eps, omega, n);
    if w == 0.0 {
        return 0.0;
    }
    w.sqrt().powf(alpha) + w.sqrt() + w
}

/// Outcome of a Picard iteration from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    /// The limit, or infinity when the iterates passed the cap or `φ` was infinite.
    pub value: f64,
    pub iterates: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

impl FixedPoint {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }
}

/// Least fixed point of a nondecreasing `φ ≥ 0` by `η₀ = 0`, `η_{j+1} = φ(η_j)`;
/// stops once the increment is below `1e-10 (1 + η)`.
pub fn least_fixed_point(
    phi: impl Fn(f64) -> Result<f64, TheoryError>,
    eta_cap: f64,
    max_iter: usize,
) -> Result<FixedPoint, TheoryError> {
    let mut eta = 0.0f64;
    let mut iterates = vec![eta];
    for _ in 0..max_iter {
        let next = phi(eta)?;
        if !(next <= eta_cap) {
            iterates.push(next);
            return Ok(FixedPoint {
                value: f64::INFINITY,
                iterates,
                residual: f64::INFINITY,
                converged: false,
            });
        }
        let step = next - eta;
        eta = next.max(eta);
        iterates.push(eta);
        if step.abs() < 1e-10 * (1.0 + eta) {
            let residual = (phi(eta)? - eta).abs();
            return Ok(FixedPoint {
                value: eta,
                iterates,
                residual,
                converged: true,
            });
        }
    }
    Ok(FixedPoint {
        value: f64::INFINITY,
        iterates,
        residual: f64::INFINITY,
        converged: false,
    })
}

fn dini_value(m: &dyn Fn(f64) -> f64, upper: f64) -> Result<f64, TheoryError> {
    let r = dini_integral(m, upper, &DiniOptions::default())?;
    Ok(if r.divergent { f64::INFINITY } else { r.value })
}

/// `δ(k, ε)`: least `η ≥ 0` with `4∫₀^{eε} Δ(k + η, ξ) dξ/ξ ≤ η`.
pub fn little_delta(
    k: f64,
    eps: f64,
    delta: &(dyn Fn(f64, f64) -> f64 + Sync),
    eta_cap: f64,
) -> Result<FixedPoint, TheoryError> {
    if eps <= 0.0 {
        return Ok(FixedPoint {
            value: 0.0,
            iterates: vec![0.0],
            residual: 0.0,
            converged: true,
        });
    }
    least_fixed_point(
        |eta| Ok(4.0 * dini_value(&|xi| delta(k + eta, xi), E * eps)?),
        eta_cap,
        100_000,
    )
}

/// Dini test of `ξ ↦ ω̄(k, ξ)` for each `k`.
pub fn hypothesis_h_test(
    omega_bar: &dyn Fn(f64, f64) -> f64,
    k_grid: &[f64],
    eps_ladder: &[f64],
) -> Result<Vec<(f64, DiniReport)>, DiniError> {
    k_grid
        .iter()
        .map(|&k| {
            let m = |xi: f64| omega_bar(k, xi);
            Ok((k, dini_ladder(&m, eps_ladder, &DiniOptions::default())?))
        })
        .collect()
}

/// Planar compact `K` containing the graphs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarRect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub u_lo: f64,
    pub u_hi: f64,
}

impl PlanarRect {
    /// `ℓ¹` fattening by `r`, which for a rectangle is contained in the
    /// rectangle widened by `r` on every side.
    pub fn fatten(&self, r: f64) -> Self {
        PlanarRect {
            x_lo: self.x_lo - r,
            x_hi: self.x_hi + r,
            u_lo: self.u_lo - r,
            u_hi: self.u_hi + r,
        }
    }

    pub fn contains(&self, other: &PlanarRect) -> bool {
        self.x_lo <= other.x_lo
            && other.x_hi <= self.x_hi
            && self.u_lo <= other.u_lo
            && other.u_hi <= self.u_hi
    }
}

/// Planar compact `K` sampled as columns `{x_i} × [lo_i, hi_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarBand {
    pub xs: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PlanarBand {
    pub fn rect(r: &PlanarRect, columns: usize) -> Self {
        let xs = crate::grid::uniform_nodes(r.x_lo, r.x_hi, columns.max(2));
        let n = xs.len();
        PlanarBand {
            xs,
            lo: vec![r.u_lo; n],
            hi: vec![r.u_hi; n],
        }
    }

    /// The band `{f ≤ u ≤ g}`.
    pub fn from_pair(pair: &ObstaclePair, columns: usize) -> Self {
        let xs = crate::grid::uniform_nodes(pair.a(), pair.b(), columns.max(2));
        let lo = xs.iter().map(|&x| pair.lower(x)).collect();
        let hi = xs.iter().map(|&x| pair.upper(x)).collect();
        PlanarBand { xs, lo, hi }
    }

    pub fn bounding_rect(&self) -> PlanarRect {
        PlanarRect {
            x_lo: self.xs[0],
            x_hi: *self.xs.last().unwrap(),
            u_lo: self.lo.iter().copied().fold(f64::INFINITY, f64::min),
            u_hi: self.hi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Sample points of the `ℓ¹` neighbourhood `{dist((t, w), K) ≤ r}`:
    /// every column is shifted by `|dx| ≤ r` and stretched vertically by
    /// `r − |dx|`.
    pub fn fattened_samples(&self, r: f64, levels: usize) -> Vec<(f64, f64)> {
        let shifts: Vec<f64> = if r > 0.0 {
            vec![-r, -0.5 * r, 0.0, 0.5 * r, r]
        } else {
            vec![0.0]
        };
        let levels = levels.max(2);
        let mut pts = Vec::with_capacity(self.xs.len() * shifts.len() * levels);
        for i in 0..self.xs.len() {
            for &dx in &shifts {
                let reach = r - dx.abs();
                let (lo, hi) = (self.lo[i] - reach, self.hi[i] + reach);
                for j in 0..levels {
                    let t = j as f64 / (levels - 1) as f64;
                    pts.push((self.xs[i] + dx, lo + (hi - lo) * t));
                }
            }
        }
        pts
    }
}

/// `sup |h|` over planar samples times `[−v_half, v_half]`.
fn sup_abs(
    h: impl Fn(f64, f64, f64) -> f64 + Sync,
    pts: &[(f64, f64)],
    v_half: f64,
) -> Result<f64, TheoryError> {
    let vs: Vec<f64> = (0..9).map(|i| -v_half + v_half * i as f64 / 4.0).collect();
    pts.par_iter()
        .map(|&(x, u)| {
            let mut m = 0.0f64;
            for &v in &vs {
                let y = h(x, u, v);
                if !y.is_finite() {
                    return Err(TheoryError::Lagrangian(LagrangianError::NonFinite {
                        x,
                        u,
                        v,
                    }));
                }
                m = m.max(y.abs());
            }
            Ok(m)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KRow {
    pub k: f64,
    /// `sup |L|` on `K₀ × [−k, k]`.
    pub c_k: f64,
    /// `ω(k, δ₀ + N√δ₀)`.
    pub omega_cap: f64,
    pub m_k: f64,
    pub alpha_k: f64,
    /// Hölder constant on `K₀ × [−(k + M_k), k + M_k]`.
    pub c1_k: f64,
    /// `sup |L_v|` on `K × [−k, k]`.
    pub c2_k: f64,
}

#[derive(Debug, Clone)]
pub struct TheoryOptions {
    pub k_grid: Vec<f64>,
    pub holder_samples: usize,
    /// Columns used to sample `K` and `K₀`.
    pub columns: usize,
    /// Use this `δ₀` instead of the largest admissible one.
    pub delta0: Option<f64>,
    pub eta0: f64,
    pub eta_cap: f64,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            k_grid: K_GRID.to_vec(),
            holder_samples: 300,
            columns: 201,
            delta0: None,
            eta0: 1.0,
            eta_cap: ETA_CAP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TheoryConstants {
    pub mu: f64,
    pub c: f64,
    /// `sup |u|` over `K`.
    pub c1: f64,
    pub m_growth: f64,
    pub n: f64,
    pub delta0: f64,
    pub length: f64,
    pub k_set: PlanarBand,
    /// Fattening radius `δ₀ + N√δ₀`.
    pub k0_radius: f64,
    /// Bounding rectangle of `K₀`, carrying the Hölder boxes.
    pub k0_rect: PlanarRect,
    pub rows: Vec<KRow>,
}

fn running_max(xs: &mut [f64]) {
    for i in 1..xs.len() {
        xs[i] = xs[i].max(xs[i - 1]);
    }
}

impl TheoryConstants {
    /// `K` is the band `{f ≤ u ≤ g}`.
    pub fn build(
        l: &Lagrangian,
        pair: &ObstaclePair,
        c: f64,
        omega: &TwoArgModulus,
        opts: &TheoryOptions,
    ) -> Result<Self, TheoryError> {
        Self::build_on(l, PlanarBand::from_pair(pair, opts.columns), c, omega, opts)
    }

    pub fn build_on(
        l: &Lagrangian,
        k_set: PlanarBand,
        c: f64,
        omega: &TwoArgModulus,
        opts: &TheoryOptions,
    ) -> Result<Self, TheoryError> {
        let mu = l.mu();
        if !(mu > 0.0) || !(c >= 0.0) {
            return Err(TheoryError::BadInput(format!(
                "need μ > 0 and c ≥ 0 (μ = {mu}, c = {c})"
            )));
        }
        if opts.k_grid.is_empty() || opts.k_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TheoryError::BadInput("k grid must be increasing".into()));
        }
        let rect = k_set.bounding_rect();
        let length = rect.x_hi - rect.x_lo;
        let c1 = rect.u_lo.abs().max(rect.u_hi.abs());
        let m_growth = compute_m_growth(l, c1, mu, rect.x_lo, rect.x_hi)?;
        let n = compute_n(c, mu, m_growth, length);
        let largest = max_delta0(n);
        let delta0 = match opts.delta0 {
            Some(d) if d > 0.0 && d <= largest => d,
            Some(d) => {
                return Err(TheoryError::BadInput(format!(
                    "δ₀ = {d} outside ]0, {largest}]"
                )))
            }
            None => largest,
        };
        let k0_radius = delta0 + n * delta0.sqrt();
        let k0_rect = rect.fatten(k0_radius);
        let k0_pts = k_set.fattened_samples(k0_radius, 9);
        let k_pts = k_set.fattened_samples(0.0, 9);

        let ks = &opts.k_grid;
        let mut c_k: Vec<f64> = ks
            .par_iter()
            .map(|&k| sup_abs(|x, u, v| l.eval(x, u, v), &k0_pts, k))
            .collect::<Result<_, _>>()?;
        running_max(&mut c_k);
        let mut c2_k: Vec<f64> = ks
            .par_iter()
            .map(|&k| sup_abs(|x, u, v| l.eval_v(x, u, v), &k_pts, k))
            .collect::<Result<_, _>>()?;
        running_max(&mut c2_k);
        let omega_cap: Vec<f64> = ks.iter().map(|&k| omega.eval(k, k0_radius)).collect();
        let m_k: Vec<f64> = (0..ks.len())
            .map(|i| compute_m_k(mu, c_k[i], omega_cap[i]))
            .collect();
        let holder: Vec<(f64, f64)> = (0..ks.len())
            .into_par_iter()
            .map(|i| {
                let w = (ks[i] + m_k[i]).max(1e-3);
                let bx = CompactBox::new(
                    (k0_rect.x_lo, k0_rect.x_hi),
                    (k0_rect.u_lo, k0_rect.u_hi),
                    (-w, w),
                )?;
                let est = estimate_holder(l, &bx, opts.holder_samples)?;
                Ok((est.c, est.alpha))
            })
            .collect::<Result<_, TheoryError>>()?;
        let mut c1_k: Vec<f64> = holder.iter().map(|h| h.0).collect();
        running_max(&mut c1_k);
        let mut alpha_k: Vec<f64> = holder.iter().map(|h| h.1).collect();
        for i in 1..alpha_k.len() {
            alpha_k[i] = alpha_k[i].min(alpha_k[i - 1]);
        }
        let rows = (0..ks.len())
            .map(|i| KRow {
                k: ks[i],
                c_k: c_k[i],
                omega_cap: omega_cap[i],
                m_k: m_k[i],
                alpha_k: alpha_k[i],
                c1_k: c1_k[i],
                c2_k: c2_k[i],
            })
            .collect();
        Ok(TheoryConstants {
            mu,
            c,
            c1,
            m_growth,
            n,
            delta0,
            length,
            k_set,
            k0_radius,
            k0_rect,
            rows,
        })
    }

    pub fn k_max(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.k)
    }

    /// Row of the smallest grid `k` not below `k`; `None` past the grid.
    pub fn row(&self, k: f64) -> Option<&KRow> {
        let k = k.max(0.0);
        self.rows.iter().find(|r| r.k >= k)
    }
}

/// The tabulated maps `Δ₁`, `Δ₂`, `Δ`, `ω̂`, `ω̄`, `δ` for a constant table and
/// an obstacle modulus. Between grid values of `k` the next grid value is
/// used; past the grid `Δ` and `δ` are infinite.
#[derive(Debug, Clone)]
pub struct DeltaPipeline {
    pub constants: TheoryConstants,
    pub omega: TwoArgModulus,
    pub eta0: f64,
    pub eta_cap: f64,
}

impl DeltaPipeline {
    pub fn new(constants: TheoryConstants, omega: TwoArgModulus, opts: &TheoryOptions) -> Self {
        DeltaPipeline {
            constants,
            omega,
            eta0: opts.eta0,
            eta_cap: opts.eta_cap,
        }
    }

    fn inputs(&self, row: &KRow) -> DeltaInputs {
        DeltaInputs {
            mu: self.constants.mu,
            n: self.constants.n,
            c1: row.c1_k,
            alpha: row.alpha_k,
            c2: row.c2_k,
        }
    }

    pub fn delta1(&self, k: f64, eps: f64) -> f64 {
        match self.constants.row(k) {
            Some(r) => delta1_bound(r.k, eps, r.c1_k, r.alpha_k, self.constants.mu, &self.omega),
            None => f64::INFINITY,
        }
    }

    pub fn delta2(&self, k: f64, eps: f64) -> f64 {
        match self.constants.row(k) {
            Some(r) => delta2_bound(
                r.k,
                eps,
                r.c1_k,
                r.alpha_k,
                r.c2_k,
                self.constants.mu,
                &self.omega,
            ),
            None => f64::INFINITY,
        }
    }

    pub fn big_delta(&self, k: f64, eps: f64) -> f64 {
        if eps <= 0.0 {
            return 0.0;
        }
        match self.constants.row(k) {
            Some(r) => big_delta(r.k, eps, &self.inputs(r), &self.omega),
            None => f64::INFINITY,
        }
    }

    pub fn omega_hat(&self, k: f64, eps: f64) -> f64 {
        match self.constants.row(k) {
            Some(r) => omega_hat(r.k, eps, &self.omega, self.constants.n),
            None => f64::INFINITY,
        }
    }

    pub fn omega_bar(&self, k: f64, eps: f64) -> f64 {
        if eps <= 0.0 {
            return 0.0;
        }
        match self.constants.row(k) {
            Some(r) => omega_bar(r.k, eps, &self.omega, r.alpha_k, self.constants.n),
            None => f64::INFINITY,
        }
    }

    /// `4∫₀^{eε} Δ(k_j, ξ) dξ/ξ` for grid row `j`.
    pub fn row_integral(&self, j: usize, eps: f64) -> Result<f64, TheoryError> {
        let r = &self.constants.rows[j];
        let p = self.inputs(r);
        let m = |xi: f64| big_delta(r.k, xi, &p, &self.omega);
        Ok(4.0 * dini_value(&m, E * eps)?)
    }

    /// `δ(k, ε)` by Picard iteration; `Δ(k + η, ·)` is constant in `η`
    /// between grid values, so each step is one row integral.
    pub fn delta(&self, k: f64, eps: f64) -> Result<FixedPoint, TheoryError> {
        if eps <= 0.0 {
            return little_delta(k, 0.0, &|_, _| 0.0, self.eta_cap);
        }
        let rows = &self.constants.rows;
        let mut cache: Vec<Option<f64>> = vec![None; rows.len()];
        let cache = std::cell::RefCell::new(&mut cache);
        least_fixed_point(
            |eta| {
                let kk = (k + eta).max(0.0);
                let Some(j) = rows.iter().position(|r| r.k >= kk) else {
                    return Ok(f64::INFINITY);
                };
                if let Some(v) = cache.borrow()[j] {
                    return Ok(v);
                }
                let v = self.row_integral(j, eps)?;
                cache.borrow_mut()[j] = Some(v);
                Ok(v)
            },
            self.eta_cap,
            100_000,
        )
    }

    pub fn delta_value(&self, k: f64, eps: f64) -> Result<f64, TheoryError> {
        Ok(self.delta(k, eps)?.value)
    }

    /// Largest ladder `ε` at which `δ(k, ε)` converged below the cap.
    pub fn eps0(&self, k: f64, eps_ladder: &[f64]) -> Result<Option<f64>, TheoryError> {
        for &e in eps_ladder {
            if self.delta(k, e)?.is_finite() {
                return Ok(Some(e));
            }
        }
        Ok(None)
    }

    pub fn hypothesis_h(&self, eps_ladder: &[f64]) -> Result<Vec<(f64, DiniReport)>, DiniError> {
        let ks: Vec<f64> = self.constants.rows.iter().map(|r| r.k).collect();
        hypothesis_h_test(&|k, e| self.omega_bar(k, e), &ks, eps_ladder)
    }

    /// Tabulates the maps on `ks × eps` and replaces `Δ` and `δ` by their
    /// running maxima in both arguments.
    pub fn tabulate(&self, ks: &[f64], eps: &[f64]) -> Result<Lattice, TheoryError> {
        let cells: Vec<(usize, usize)> = (0..ks.len())
            .flat_map(|i| (0..eps.len()).map(move |j| (i, j)))
            .collect();
        let values = cells
            .par_iter()
            .map(|&(i, j)| {
                let (k, e) = (ks[i], eps[j]);
                Ok([
                    self.delta1(k, e),
                    self.delta2(k, e),
                    self.big_delta(k, e),
                    self.delta_value(k, e)?,
                ])
            })
            .collect::<Result<Vec<_>, TheoryError>>()?;
        let grid = |c: usize| -> Vec<Vec<f64>> {
            (0..ks.len())
                .map(|i| {
                    (0..eps.len())
                        .map(|j| values[i * eps.len() + j][c])
                        .collect()
                })
                .collect()
        };
        let raw_delta = grid(3);
        let mut lattice = Lattice {
            ks: ks.to_vec(),
            eps: eps.to_vec(),
            delta1: grid(0),
            delta2: grid(1),
            big_delta: grid(2),
            delta: raw_delta.clone(),
            raw_delta,
        };
        for table in [
            &mut lattice.delta1,
            &mut lattice.delta2,
            &mut lattice.big_delta,
            &mut lattice.delta,
        ] {
            monotone_envelope(table);
        }
        Ok(lattice)
    }
}

/// Everything the estimates need for one problem: the Hölder pair of `L`
/// on the obstacle box, the obstacle modulus `ω` and the pipeline built with
/// `c = |J| + 1`.
#[derive(Debug, Clone)]
pub struct ProblemTheory {
    pub c0: f64,
    pub alpha0: f64,
    pub holder_stable: bool,
    pub omega: TwoArgModulus,
    pub pipeline: DeltaPipeline,
}

impl ProblemTheory {
    pub fn build(
        l: &Lagrangian,
        pair: &ObstaclePair,
        energy: f64,
        opts: &TheoryOptions,
    ) -> Result<Self, TheoryError> {
        let bx = pair.holder_box()?;
        let est = estimate_holder(l, &bx, opts.holder_samples)?;
        let omega = obstacle_omega(pair, est.c, est.alpha);
        let constants = TheoryConstants::build(l, pair, energy.abs() + 1.0, &omega, opts)?;
        Ok(ProblemTheory {
            c0: est.c,
            alpha0: est.alpha,
            holder_stable: est.stable,
            omega: omega.clone(),
            pipeline: DeltaPipeline::new(constants, omega, opts),
        })
    }

    pub fn constants(&self) -> &TheoryConstants {
        &self.pipeline.constants
    }

    /// `θ` exponents for the obstacle Dini suite.
    pub fn required_thetas(&self) -> Vec<f64> {
        let alphas: Vec<f64> = self.constants().rows.iter().map(|r| r.alpha_k).collect();
        required_thetas(self.alpha0, &alphas)
    }
}

/// Two-dimensional running maximum, making a table nondecreasing along
/// both axes.
pub fn monotone_envelope(t: &mut [Vec<f64>]) {
    for i in 0..t.len() {
        for j in 0..t[i].len() {
            let mut m = t[i][j];
            if i > 0 {
                m = m.max(t[i - 1][j]);
            }
            if j > 0 {
                m = m.max(t[i][j - 1]);
            }
            t[i][j] = m;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub ks: Vec<f64>,
    pub eps: Vec<f64>,
    pub delta1: Vec<Vec<f64>>,
    pub delta2: Vec<Vec<f64>>,
    pub big_delta: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    /// `δ` before the envelope.
    pub raw_delta: Vec<Vec<f64>>,
}

impl Lattice {
    pub fn is_monotone(t: &[Vec<f64>]) -> bool {
        (0..t.len()).all(|i| {
            (0..t[i].len())
                .all(|j| (i == 0 || t[i][j] >= t[i - 1][j]) && (j == 0 || t[i][j] >= t[i][j - 1]))
        })
    }
}

/// `20 × 20` lattice: `k` uniform on `[0, k_max]`, `ε` from `0` then
/// geometric up to `ε_max`.
pub fn default_lattice(k_max: f64, eps_max: f64) -> (Vec<f64>, Vec<f64>) {
    let ks = (0..20).map(|i| k_max * i as f64 / 19.0).collect();
    let mut eps = vec![0.0];
    for j in 0..19 {
        eps.push(eps_max * 10f64.powf(-24.0 * (18 - j) as f64 / 18.0));
    }
    (ks, eps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct P2Report {
    pub k: f64,
    pub eps: Vec<f64>,
    pub delta: Vec<f64>,
    pub rhs: Vec<f64>,
    pub c_fit: f64,
    pub inequality_ok: bool,
    /// `δ(k, ε) → 0` along the ladder.
    pub limit_ok: bool,
}

impl P2Report {
    pub fn ok(&self) -> bool {
        self.inequality_ok && self.limit_ok
    }
}

/// Checks `δ(k, ε) ≤ C[(√ε)^{¼ min(α, α²)} + ∫₀^{eε} ω̄(k + η₀, ξ) dξ/ξ]`
/// along the ladder and the decay of `δ`. Without `c_fit`, `C` is
/// calibrated at the largest ladder `ε` with finite positive `δ`.
#[allow(clippy::too_many_arguments)]
pub fn check_p2(
    delta: &dyn Fn(f64, f64) -> Result<f64, TheoryError>,
    omega_bar: &dyn Fn(f64, f64) -> f64,
    k: f64,
    alpha: f64,
    eps_ladder: &[f64],
    c_fit: Option<f64>,
    eta0: f64,
) -> Result<P2Report, TheoryError> {
    let power = 0.25 * alpha.min(alpha * alpha);
    let mut deltas = Vec::new();
    let mut unit = Vec::new();
    for &e in eps_ladder {
        deltas.push(delta(k, e)?);
        let m = |xi: f64| omega_bar(k + eta0, xi);
        unit.push(e.sqrt().powf(power) + dini_value(&m, E * e)?);
    }
    let c_fit = c_fit.unwrap_or_else(|| {
        (0..deltas.len())
            .find(|&i| deltas[i].is_finite() && deltas[i] > 0.0 && unit[i] > 0.0)
            .map_or(0.0, |i| deltas[i] / unit[i])
    });
    let rhs: Vec<f64> = unit.iter().map(|u| c_fit * u).collect();
    let inequality_ok = deltas
        .iter()
        .zip(&rhs)
        .all(|(d, r)| *d <= r * (1.0 + 1e-9) || (!d.is_finite() && !r.is_finite()));
    let first = deltas[0];
    let last = *deltas.last().unwrap();
    let limit_ok = last.is_finite()
        && (last == 0.0
            || (first.is_finite() && last < 0.1 * first)
            || (!first.is_finite() && last < 1e-3));
    Ok(P2Report {
        k,
        eps: eps_ladder.to_vec(),
        delta: deltas,
        rhs,
        c_fit,
        inequality_ok,
        limit_ok,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct P3Sample {
    pub x1: f64,
    pub x2: f64,
    pub s: f64,
    pub t: f64,
    pub slope: f64,
    pub deviation: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct P3Report {
    pub pairs: usize,
    pub finite: usize,
    /// Pairs with infinite `δ` (inside the `k` grid).
    pub vacuous: usize,
    /// Pairs whose chord slope lies past the `k` grid (`δ` taken infinite).
    pub extrapolated: usize,
    pub max_ratio: f64,
    pub violations: Vec<P3Sample>,
}

impl P3Report {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Nested pairs `[s, t] ⊂ [x₁, x₂]` with `x₂ − x₁` across dyadic scales
/// below `max_len`.
pub fn nested_pairs(a: f64, b: f64, max_len: f64, count: usize, seed: u64) -> Vec<[f64; 4]> {
    let plan = PairPlan::with_total(count, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    plan.pairs(a, b, max_len)
        .into_iter()
        .take(count)
        .map(|(x1, x2)| {
            let p: f64 = rng.gen();
            let q: f64 = rng.gen();
            let (lo, hi) = if p < q { (p, q) } else { (q, p) };
            let s = x1 + lo * (x2 - x1);
            let t = (x1 + hi * (x2 - x1)).max(s + 1e-9 * (x2 - x1));
            [x1, x2, s, t.min(x2)]
        })
        .collect()
}

/// `|k_u(x₁, x₂) − k_u(s, t)| ≤ δ(|k_u(x₁, x₂)|, x₂ − x₁)` on nested pairs.
pub fn check_p3(
    u: &GridFunction,
    delta: &(dyn Fn(f64, f64) -> Result<f64, TheoryError> + Sync),
    k_max: f64,
    pairs: &[[f64; 4]],
) -> Result<P3Report, TheoryError> {
    let samples = pairs
        .par_iter()
        .map(|&[x1, x2, s, t]| {
            let outer = chord_slope(u, x1, x2)?;
            let inner = chord_slope(u, s, t)?;
            let d = if outer.abs() > k_max {
                f64::INFINITY
            } else {
                delta(outer.abs(), x2 - x1)?
            };
            Ok(P3Sample {
                x1,
                x2,
                s,
                t,
                slope: outer,
                deviation: (outer - inner).abs(),
                delta: d,
            })
        })
        .collect::<Result<Vec<_>, TheoryError>>()?;
    let scale = u.sup_norm();
    let mut report = P3Report {
        pairs: samples.len(),
        finite: 0,
        vacuous: 0,
        extrapolated: 0,
        max_ratio: 0.0,
        violations: Vec::new(),
    };
    for p in samples {
        if p.slope.abs() > k_max {
            report.extrapolated += 1;
            continue;
        }
        if !p.delta.is_finite() {
            report.vacuous += 1;
            continue;
        }
        report.finite += 1;
        // chord slopes carry rounding of order ε‖u‖/(t − s)
        let noise = 64.0 * f64::EPSILON * (1.0 + scale) / (p.t - p.s);
        let ratio = if p.deviation <= noise {
            0.0
        } else {
            p.deviation / p.delta
        };
        report.max_ratio = report.max_ratio.max(ratio);
        if ratio > 1.0 {
            report.violations.push(p);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyEstimate {
    pub y: f64,
    pub z: f64,
    pub slope: f64,
    pub threshold: f64,
    /// Cells in `Ω_{y,z}`.
    pub cells: usize,
    pub integral: f64,
    pub bound: f64,
    pub slack: f64,
    pub vacuous: bool,
}

/// `∫_Ω |u′ − k_u(y, z)|² ≤ Δ²(|k_u(y, z)|, z − y)(z − y)` with `Ω` the cells
/// of `[y, z]` where `|u′ − k_u(y, z)| ≥ Δ`.
pub fn check_energy_estimate(
    u: &GridFunction,
    y: f64,
    z: f64,
    big_delta: &dyn Fn(f64, f64) -> f64,
) -> Result<EnergyEstimate, TheoryError> {
    let slope = chord_slope(u, y, z)?;
    let threshold = big_delta(slope.abs(), z - y);
    let mut w = u.clone();
    let tol = 1e-12 * (u.b() - u.a());
    let iy = w.insert_node(y, tol);
    let iz = w.insert_node(z, tol);
    let (mut cells, mut integral) = (0, 0.0);
    if threshold.is_finite() {
        for c in iy..iz {
            let d = (w.cell_slope(c) - slope).abs();
            if d >= threshold {
                cells += 1;
                integral += d * d * w.cell_width(c);
            }
        }
    }
    let bound = threshold * threshold * (z - y);
    Ok(EnergyEstimate {
        y,
        z,
        slope,
        threshold,
        cells,
        integral,
        bound,
        slack: bound - integral,
        vacuous: !threshold.is_finite(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub pairs: usize,
    pub vacuous: usize,
    pub min_slack: f64,
    pub violations: Vec<EnergyEstimate>,
}

impl EnergyReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn check_energy_pairs(
    u: &GridFunction,
    big_delta: &(dyn Fn(f64, f64) -> f64 + Sync),
    pairs: &[(f64, f64)],
) -> Result<EnergyReport, TheoryError> {
    let all = pairs
        .par_iter()
        .map(|&(y, z)| check_energy_estimate(u, y, z, big_delta))
        .collect::<Result<Vec<_>, _>>()?;
    let vacuous = all.iter().filter(|e| e.vacuous).count();
    let min_slack = all
        .iter()
        .filter(|e| !e.vacuous)
        .map(|e| e.slack)
        .fold(f64::INFINITY, f64::min);
    let violations = all
        .iter()
        .filter(|e| !e.vacuous && e.slack < -1e-12 * (1.0 + e.bound))
        .copied()
        .collect();
    Ok(EnergyReport {
        pairs: all.len(),
        vacuous,
        min_slack,
        violations,
    })
}

/// Overall verdict of the `ω̄` Dini tests.
pub fn h_verdict(reports: &[(f64, DiniReport)]) -> Verdict {
    if reports.iter().all(|(_, r)| r.verdict == Verdict::Pass) {
        Verdict::Pass
    } else if reports.iter().any(|(_, r)| r.verdict == Verdict::Fail) {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}
