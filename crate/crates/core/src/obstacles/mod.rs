//! Obstacle pairs `f < g`, their moduli of continuity, the combined obstacle
//! modulus `ω(k, ε)` and the Dini-type regularity tests on the moduli.

pub mod dini;
mod modulus;

use std::f64::consts::E;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::expr::{Expr, ExprError, Var};
use crate::grid::{GridError, GridFunction};
use crate::lagrangian::{CompactBox, LagrangianError};

pub use dini::{
    default_eps_ladder, dini_integral, dini_ladder, log_log_slope, DiniError, DiniIntegral,
    DiniOptions, DiniReport, TruncationSweep, Verdict,
};
pub use modulus::{
    default_lags, estimate_modulus, geometric_lags, Modulus, ModulusTable, TwoArgModulus,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObstacleError {
    #[error("obstacles must satisfy f < g with gap ≥ {margin}; gap is {gap} at x = {x}")]
    NotStrict { x: f64, gap: f64, margin: f64 },
    #[error("grid obstacle spans [{0}, {1}], expected the problem interval")]
    DomainMismatch(f64, f64),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Dini(#[from] DiniError),
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
}

type Curve = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One obstacle: closed form with its derivative, or grid data.
#[derive(Clone)]
pub enum Obstacle {
    ClosedForm {
        label: String,
        value: Curve,
        derivative: Curve,
    },
    Grid(GridFunction),
}

impl fmt::Debug for Obstacle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Obstacle::ClosedForm { label, .. } => write!(f, "ClosedForm({label})"),
            Obstacle::Grid(g) => write!(f, "Grid({} nodes)", g.len()),
        }
    }
}

impl Obstacle {
    pub fn constant(c: f64) -> Self {
        Obstacle::ClosedForm {
            label: format!("{c}"),
            value: Arc::new(move |_| c),
            derivative: Arc::new(|_| 0.0),
        }
    }

    pub fn closed_form(
        label: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Obstacle::ClosedForm {
            label: label.into(),
            value: Arc::new(value),
            derivative: Arc::new(derivative),
        }
    }

    /// Parse an expression in `x`; the derivative is symbolic unless given.
    pub fn parse(src: &str, derivative: Option<&str>) -> Result<Self, ExprError> {
        let e = Expr::parse(src, &[Var::X])?;
        let d = match derivative {
            Some(d) => Expr::parse(d, &[Var::X])?,
            None => e.derivative(Var::X),
        };
        let label = e.source().to_string();
        Ok(Obstacle::ClosedForm {
            label,
            value: Arc::new(move |x| e.eval(x, 0.0, 0.0)),
            derivative: Arc::new(move |x| d.eval(x, 0.0, 0.0)),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Obstacle::ClosedForm { value, .. } => value(x),
            Obstacle::Grid(g) => g.eval(x),
        }
    }

    /// Derivative; for grid data the slope of the cell containing `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Obstacle::ClosedForm { derivative, .. } => derivative(x),
            Obstacle::Grid(g) => g.cell_slope(g.locate(x)),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Obstacle::ClosedForm { label, .. } => label.clone(),
            Obstacle::Grid(g) => format!("grid[{}]", g.len()),
        }
    }

    /// Function values as a grid function: the data itself for grid
    /// obstacles, samples at `n` uniform nodes otherwise.
    fn value_grid(&self, a: f64, b: f64, n: usize) -> Result<GridFunction, GridError> {
        match self {
            Obstacle::ClosedForm { value, .. } => GridFunction::sample(a, b, n, |x| value(x)),
            Obstacle::Grid(g) => Ok(g.clone()),
        }
    }

    /// Derivative as a grid function: closed-form samples, or cell slopes
    /// placed at cell midpoints.
    fn derivative_grid(&self, a: f64, b: f64, n: usize) -> Result<GridFunction, GridError> {
        match self {
            Obstacle::ClosedForm { derivative, .. } => {
                GridFunction::sample(a, b, n, |x| derivative(x))
            }
            Obstacle::Grid(g) => {
                if g.cells() < 2 {
                    let s = g.cell_slope(0);
                    return GridFunction::from_nodes(vec![g.a(), g.b()], vec![s, s]);
                }
                let mids = (0..g.cells()).map(|i| g.cell_midpoint(i)).collect();
                GridFunction::from_nodes(mids, g.slopes())
            }
        }
    }
}

/// Moduli of continuity of `f`, `f′`, `g`, `g′`.
#[derive(Debug, Clone)]
pub struct ObstacleModuli {
    pub f: Modulus,
    pub df: Modulus,
    pub g: Modulus,
    pub dg: Modulus,
}

impl ObstacleModuli {
    pub fn all(m: Modulus) -> Self {
        ObstacleModuli {
            f: m.clone(),
            df: m.clone(),
            g: m.clone(),
            dg: m,
        }
    }

    pub fn named(&self) -> [(&'static str, &Modulus); 4] {
        [
            ("f", &self.f),
            ("f'", &self.df),
            ("g", &self.g),
            ("g'", &self.dg),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairOptions {
    /// Required gap `g − f` at every sampled node.
    pub margin: f64,
    /// Nodes of the grid used for strictness checks, sup norms and moduli of
    /// closed-form obstacles.
    pub sample_nodes: usize,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            margin: 1e-9,
            sample_nodes: 20_001,
        }
    }
}

impl PairOptions {
    /// Sampling ten times finer than a solver grid of `n` nodes.
    pub fn for_solver_grid(n: usize) -> Self {
        PairOptions {
            sample_nodes: 10 * (n.max(2) - 1) + 1,
            ..Default::default()
        }
    }
}

/// Lower and upper obstacles on `[a, b]`.
#[derive(Debug, Clone)]
pub struct ObstaclePair {
    pub f: Obstacle,
    pub g: Obstacle,
    a: f64,
    b: f64,
    margin: f64,
    /// `max{‖f‖∞, ‖g‖∞} + M₂ (b − a)`
    m1: f64,
    /// `max{‖f′‖∞, ‖g′‖∞}`
    m2: f64,
    moduli: ObstacleModuli,
}

impl ObstaclePair {
    pub fn new(
        f: Obstacle,
        g: Obstacle,
        a: f64,
        b: f64,
        opts: PairOptions,
    ) -> Result<Self, ObstacleError> {
        let n = opts.sample_nodes.max(2);
        for ob in [&f, &g] {
            if let Obstacle::Grid(h) = ob {
                if (h.a() - a).abs() > 1e-12 * (b - a) || (h.b() - b).abs() > 1e-12 * (b - a) {
                    return Err(ObstacleError::DomainMismatch(h.a(), h.b()));
                }
            }
        }
        let fv = f.value_grid(a, b, n)?;
        let gv = g.value_grid(a, b, n)?;
        // strictness at the nodes of both, and at the sampling grid
        let mut xs: Vec<f64> = crate::grid::uniform_nodes(a, b, n);
        xs.extend_from_slice(fv.nodes());
        xs.extend_from_slice(gv.nodes());
        for &x in &xs {
            let gap = g.eval(x) - f.eval(x);
            if !(gap > 0.0 && gap >= opts.margin) {
                return Err(ObstacleError::NotStrict {
                    x,
                    gap,
                    margin: opts.margin,
                });
            }
        }
        let df = f.derivative_grid(a, b, n)?;
        let dg = g.derivative_grid(a, b, n)?;
        let m2 = df.sup_norm().max(dg.sup_norm());
        let m1 = fv.sup_norm().max(gv.sup_norm()) + m2 * (b - a);
        let moduli = ObstacleModuli {
            f: estimate_modulus(&fv, &default_lags(&fv))?,
            df: estimate_modulus(&df, &default_lags(&df))?,
            g: estimate_modulus(&gv, &default_lags(&gv))?,
            dg: estimate_modulus(&dg, &default_lags(&dg))?,
        };
        Ok(ObstaclePair {
            f,
            g,
            a,
            b,
            margin: opts.margin,
            m1,
            m2,
            moduli,
        })
    }

    /// Replace the estimated moduli, e.g. by known closed forms.
    pub fn with_moduli(mut self, moduli: ObstacleModuli) -> Self {
        self.moduli = moduli;
        self
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn m1(&self) -> f64 {
        self.m1
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    pub fn moduli(&self) -> &ObstacleModuli {
        &self.moduli
    }

    pub fn lower(&self, x: f64) -> f64 {
        self.f.eval(x)
    }

    pub fn upper(&self, x: f64) -> f64 {
        self.g.eval(x)
    }

    /// `[a, b] × [−M₁, M₁] × [−M₂, M₂]`, the box on which the Hölder pair
    /// `(C₀, α₀)` of the obstacle modulus is taken. Zero half-widths are
    /// widened to `1e-3` so the box has volume.
    pub fn holder_box(&self) -> Result<CompactBox, LagrangianError> {
        let m1 = self.m1.max(1e-3);
        let m2 = self.m2.max(1e-3);
        CompactBox::new((self.a, self.b), (-m1, m1), (-m2, m2))
    }
}

/// `ω(k, ε) = C₀[(ω_f(ε) + ω_{f′}(ε) + kε)^{α₀} + (ω_g(ε) + ω_{g′}(ε) + kε)^{α₀}]`.
pub fn obstacle_omega(pair: &ObstaclePair, c0: f64, alpha0: f64) -> TwoArgModulus {
    omega_from_moduli(pair.moduli().clone(), c0, alpha0)
}

pub fn omega_from_moduli(m: ObstacleModuli, c0: f64, alpha0: f64) -> TwoArgModulus {
    let label = format!("obstacle omega (C0 = {c0}, alpha0 = {alpha0})");
    TwoArgModulus::from_fn(label, move |k, eps| {
        let lower = m.f.eval(eps) + m.df.eval(eps) + k * eps;
        let upper = m.g.eval(eps) + m.dg.eval(eps) + k * eps;
        c0 * (lower.powf(alpha0) + upper.powf(alpha0))
    })
}

/// Dini test of condition (1.2) for one modulus at one `(γ, θ)`:
/// integrand `[ω_h(ξ + γ√ξ)]^θ`.
pub fn dini_test(
    omega_h: &Modulus,
    gamma: f64,
    theta: f64,
    eps_ladder: &[f64],
) -> Result<DiniReport, DiniError> {
    dini_test_with(omega_h, gamma, theta, eps_ladder, &DiniOptions::default())
}

pub fn dini_test_with(
    omega_h: &Modulus,
    gamma: f64,
    theta: f64,
    eps_ladder: &[f64],
    opts: &DiniOptions,
) -> Result<DiniReport, DiniError> {
    let m = |xi: f64| omega_h.eval(xi + gamma * xi.sqrt()).powf(theta);
    dini_ladder(&m, eps_ladder, opts)
}

#[derive(Debug, Clone)]
pub struct SuiteEntry {
    pub h: &'static str,
    pub theta: f64,
    pub report: DiniReport,
}

/// `∫₀^{eε}[ξ + N√ξ]^β dξ/ξ` against `C((eε)^β/β + 2N^β(eε)^{β/2}/β)`,
/// `C = max(1, 2^{β−1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawCheck {
    pub beta: f64,
    pub eps: f64,
    pub integral: f64,
    pub majorant: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub n_const: f64,
    pub entries: Vec<SuiteEntry>,
    pub power_law: Vec<PowerLawCheck>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn verdict(&self) -> Verdict {
        if self.pass {
            Verdict::Pass
        } else if self
            .entries
            .iter()
            .any(|e| e.report.verdict == Verdict::Fail)
            || self.power_law.iter().any(|p| !p.ok)
        {
            Verdict::Fail
        } else {
            Verdict::Inconclusive
        }
    }
}

pub const POWER_LAW_BETAS: [f64; 3] = [0.1, 0.5, 1.0];

pub fn power_law_check(n_const: f64, beta: f64, eps: f64) -> Result<PowerLawCheck, DiniError> {
    let m = |xi: f64| (xi + n_const * xi.sqrt()).powf(beta);
    let upper = E * eps;
    let integral = dini_integral(&m, upper, &DiniOptions::default())?.value;
    let c = 1f64.max(2f64.powf(beta - 1.0));
    let majorant =
        c * (upper.powf(beta) / beta + 2.0 * n_const.powf(beta) * upper.powf(0.5 * beta) / beta);
    Ok(PowerLawCheck {
        beta,
        eps,
        integral,
        majorant,
        ok: integral <= majorant * (1.0 + 1e-9),
    })
}

/// Runs the Dini test with `γ = N` on every `h ∈ {f, f′, g, g′}` and every
/// `θ`, plus the power-law bound for each `β`. Passes iff everything passes.
pub fn condition_1_2_suite(
    moduli: &ObstacleModuli,
    n_const: f64,
    thetas: &[f64],
    betas: &[f64],
    eps_ladder: &[f64],
) -> Result<SuiteReport, DiniError> {
    let mut entries = Vec::new();
    for (name, m) in moduli.named() {
        for &theta in thetas {
            let report = dini_test(m, n_const, theta, eps_ladder)?;
            entries.push(SuiteEntry {
                h: name,
                theta,
                report,
            });
        }
    }
    let mut power_law = Vec::new();
    for &beta in betas {
        for &eps in eps_ladder {
            power_law.push(power_law_check(n_const, beta, eps)?);
        }
    }
    let pass =
        entries.iter().all(|e| e.report.verdict == Verdict::Pass) && power_law.iter().all(|p| p.ok);
    Ok(SuiteReport {
        n_const,
        entries,
        power_law,
        pass,
    })
}

/// The exponents used in the reduction of (H) to the obstacle moduli:
/// `¼α₀α(k)` for each distinct `α(k)`, `¼α₀` and `½α₀`.
pub fn required_thetas(alpha0: f64, alpha_k: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = alpha_k.iter().map(|a| 0.25 * alpha0 * a).collect();
    t.push(0.25 * alpha0);
    t.push(0.5 * alpha0);
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    t
}
