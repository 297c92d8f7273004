//! Diagnostics for Tonelli partial regularity of computed minimizers.
//!
//! `u′ = ±∞` cannot be observed on a finite grid. The proxy used here is the
//! growth of the local maximum of `|u′|` under dyadic refinement: a position
//! is a singular candidate when that maximum grows at every refinement and
//! by at least `growth_factor` over the whole ladder.

use rayon::prelude::*;

use crate::grid::{GridError, GridFunction};
use crate::obstacles::{
    condition_1_2_suite, default_eps_ladder, default_lags, estimate_modulus, Modulus, SuiteReport,
    Verdict, POWER_LAW_BETAS,
};
use crate::theory::{
    check_energy_pairs, check_p3, h_verdict, nested_pairs, EnergyReport, P3Report, ProblemTheory,
};
use crate::variational::{
    check_a1, check_a2, check_a3, solve, A3Report, PairPlan, PlanarSet, ProblemSpec, SolveResult,
    SolverOptions, VariationalError,
};

pub const GROWTH_FACTOR: f64 = 1.8;
/// Minimal growth required at every single refinement.
pub const STEP_GROWTH: f64 = 1.05;
pub const DEFAULT_LADDER: [usize; 4] = [251, 501, 1001, 2001];

/// Cell slopes `(u_{i+1} − u_i)/h_i`.
pub fn discrete_derivative(u: &GridFunction) -> Vec<f64> {
    u.slopes()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Midpoint of the steepest finest-level cell in the cluster.
    pub x: f64,
    pub cluster: (f64, f64),
    /// Local max `|u′|` per refinement level.
    pub max_slope: Vec<f64>,
    /// Ratio of consecutive entries of `max_slope`.
    pub slope_growth: Vec<f64>,
}

impl Candidate {
    pub fn total_growth(&self) -> f64 {
        self.slope_growth.iter().product()
    }
}

/// Bins of width `3h` of the coarsest profile; per bin, local max `|u′|` at
/// each level. Adjacent flagged bins form one candidate.
pub fn candidates_from_profiles(
    profiles: &[GridFunction],
    growth_factor: f64,
) -> Result<Vec<Candidate>, GridError> {
    if profiles.len() < 3 {
        return Err(GridError::EmptyGrid(profiles.len()));
    }
    let (a, b) = (profiles[0].a(), profiles[0].b());
    let h0 = (0..profiles[0].cells())
        .map(|i| profiles[0].cell_width(i))
        .fold(0.0, f64::max);
    let width = 3.0 * h0;
    let bins = ((b - a) / width).ceil().max(1.0) as usize;
    let bin_of = |x: f64| (((x - a) / width) as usize).min(bins - 1);

    // per level: (max |slope|, argmax midpoint) in each bin
    let tables: Vec<Vec<(f64, f64)>> = profiles
        .iter()
        .map(|u| {
            let mut t = vec![(0.0, f64::NAN); bins];
            for (i, s) in u.slopes().iter().enumerate() {
                let m = u.cell_midpoint(i);
                let e = &mut t[bin_of(m)];
                if s.abs() > e.0 || e.1.is_nan() {
                    *e = (s.abs().max(e.0), m);
                }
            }
            t
        })
        .collect();

    let growth = |bin: usize| -> Vec<f64> {
        tables
            .windows(2)
            .map(|w| {
                let (p, q) = (w[0][bin].0, w[1][bin].0);
                if p == 0.0 {
                    if q == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    q / p
                }
            })
            .collect()
    };
    let flagged: Vec<bool> = (0..bins)
        .map(|bin| {
            let g = growth(bin);
            g.iter().all(|&r| r >= STEP_GROWTH) && g.iter().product::<f64>() >= growth_factor
        })
        .collect();

    let last = tables.len() - 1;
    let mut out = Vec::new();
    let mut bin = 0;
    while bin < bins {
        if !flagged[bin] {
            bin += 1;
            continue;
        }
        let start = bin;
        while bin + 1 < bins && flagged[bin + 1] {
            bin += 1;
        }
        let peak = (start..=bin)
            .max_by(|&i, &j| tables[last][i].0.total_cmp(&tables[last][j].0))
            .unwrap();
        out.push(Candidate {
            x: tables[last][peak].1,
            cluster: (
                a + start as f64 * width,
                (a + (bin + 1) as f64 * width).min(b),
            ),
            max_slope: tables.iter().map(|t| t[peak].0).collect(),
            slope_growth: growth(peak),
        });
        bin += 1;
    }
    Ok(out)
}

/// Solves on every `n` of the ladder (in parallel) and looks for slope blow-up.
pub fn singular_candidates(
    spec: &ProblemSpec,
    ladder: &[usize],
    growth_factor: f64,
    opts: &SolverOptions,
) -> Result<Vec<Candidate>, VariationalError> {
    let profiles = ladder
        .par_iter()
        .map(|&n| solve(&spec.with_n(n)?, opts).map(|r| r.u))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(candidates_from_profiles(&profiles, growth_factor)?)
}

/// Modulus of the cell slopes as a function of the cell midpoints.
pub fn derivative_modulus(u: &GridFunction, lags: Option<&[f64]>) -> Result<Modulus, GridError> {
    let slopes = u.slopes();
    if slopes.len() < 2 {
        return Ok(Modulus::zero());
    }
    let mids = (0..u.cells()).map(|i| u.cell_midpoint(i)).collect();
    let d = GridFunction::from_nodes(mids, slopes)?;
    match lags {
        Some(l) => estimate_modulus(&d, l),
        None => estimate_modulus(&d, &default_lags(&d)),
    }
}

#[derive(Debug, Clone)]
pub struct ReportOptions {
    pub seed: u64,
    /// Pairs for the (A3) check.
    pub a3_pairs: usize,
    pub p3_pairs: usize,
    pub energy_pairs: usize,
    pub ladder: Vec<usize>,
    pub growth_factor: f64,
    pub eps_ladder: Vec<f64>,
    pub solver: SolverOptions,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            seed: 0,
            a3_pairs: 1100,
            p3_pairs: 500,
            energy_pairs: 200,
            ladder: DEFAULT_LADDER.to_vec(),
            growth_factor: GROWTH_FACTOR,
            eps_ladder: default_eps_ladder(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegularityReport {
    pub energy: f64,
    pub a1_ok: bool,
    pub a2_ok: bool,
    pub a3: Option<A3Report>,
    pub p3: Option<P3Report>,
    pub energy_est: Option<EnergyReport>,
    pub dini: Option<SuiteReport>,
    /// Dini verdict of `ω̄(k, ·)` on the `k` grid.
    pub hypothesis_h: Option<Verdict>,
    pub singular_candidates: Option<Vec<Candidate>>,
    pub derivative_modulus: Option<Modulus>,
    pub verdict_notes: Vec<String>,
    /// Some component failed; its field is `None` and the error is in the notes.
    pub partial: bool,
}

impl RegularityReport {
    /// Class, estimate and Dini failures; vacuous entries do not count.
    pub fn violations(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.a1_ok {
            v.push("A1");
        }
        if !self.a2_ok {
            v.push("A2");
        }
        if self.a3.as_ref().is_some_and(|r| !r.ok()) {
            v.push("A3");
        }
        if self.p3.as_ref().is_some_and(|r| !r.ok()) {
            v.push("P3");
        }
        if self.energy_est.as_ref().is_some_and(|r| !r.ok()) {
            v.push("energy estimate");
        }
        if self
            .dini
            .as_ref()
            .is_some_and(|r| r.verdict() == Verdict::Fail)
        {
            v.push("Dini suite");
        }
        v
    }

    pub fn singular_set_empty(&self) -> bool {
        self.singular_candidates
            .as_ref()
            .is_some_and(|c| c.is_empty())
    }
}

fn keep<T, E: std::fmt::Display>(
    r: Result<T, E>,
    what: &str,
    notes: &mut Vec<String>,
    partial: &mut bool,
) -> Option<T> {
    match r {
        Ok(v) => Some(v),
        Err(e) => {
            notes.push(format!("{what} failed: {e}"));
            *partial = true;
            None
        }
    }
}

/// Runs every check on `result` (a solution of `spec`) and collects the
/// outcomes; a failing component is recorded in the notes.
pub fn tonelli_report(
    spec: &ProblemSpec,
    result: &SolveResult,
    theory: &ProblemTheory,
    opts: &ReportOptions,
) -> RegularityReport {
    let mut notes = Vec::new();
    let mut partial = false;
    let u = &result.u;
    let l = &spec.lagrangian;
    let pair = &spec.obstacles;
    let consts = theory.constants();
    let pipeline = &theory.pipeline;
    let energy = result.energy;

    if !result.converged {
        notes.push(format!(
            "solver stopped after {} iterations with KKT residual {:e}",
            result.iterations, result.kkt_residual
        ));
    }
    if result.active_lower.is_empty() && result.active_upper.is_empty() {
        notes.push("obstacles never active".into());
    }

    let a1_ok = check_a1(u, &PlanarSet::Band(pair.clone()));
    let a2_ok = keep(check_a2(u, l, consts.c), "A2", &mut notes, &mut partial).unwrap_or(false);

    let plan = PairPlan::with_total(opts.a3_pairs, opts.seed);
    let a3 = keep(
        check_a3(u, l, &theory.omega, consts.delta0, &plan),
        "A3",
        &mut notes,
        &mut partial,
    );

    let limit = consts.delta0 / std::f64::consts::E;
    let nested = nested_pairs(spec.a, spec.b, limit, opts.p3_pairs, opts.seed);
    let p3 = keep(
        check_p3(
            u,
            &|k, e| pipeline.delta_value(k, e),
            consts.k_max(),
            &nested,
        ),
        "P3",
        &mut notes,
        &mut partial,
    );
    if let Some(r) = &p3 {
        if r.vacuous + r.extrapolated > 0 {
            notes.push(format!(
                "P3: {} of {} pairs vacuous (infinite δ), {} past the k grid",
                r.vacuous, r.pairs, r.extrapolated
            ));
        }
    }

    let pairs = PairPlan::with_total(opts.energy_pairs, opts.seed.wrapping_add(2))
        .pairs(spec.a, spec.b, limit);
    let energy_est = keep(
        check_energy_pairs(u, &|k, e| pipeline.big_delta(k, e), &pairs),
        "energy estimate",
        &mut notes,
        &mut partial,
    );
    if let Some(r) = &energy_est {
        if r.vacuous > 0 {
            notes.push(format!(
                "energy estimate: {} of {} pairs vacuous (infinite Δ)",
                r.vacuous, r.pairs
            ));
        }
    }

    let dini = keep(
        condition_1_2_suite(
            pair.moduli(),
            consts.n,
            &theory.required_thetas(),
            &POWER_LAW_BETAS,
            &opts.eps_ladder,
        ),
        "Dini suite",
        &mut notes,
        &mut partial,
    );
    if let Some(d) = &dini {
        if d.verdict() != Verdict::Pass {
            notes.push(format!("Dini suite verdict: {:?}", d.verdict()));
        }
    }
    let hypothesis_h = keep(
        pipeline
            .hypothesis_h(&opts.eps_ladder)
            .map(|r| h_verdict(&r)),
        "hypothesis (H)",
        &mut notes,
        &mut partial,
    );

    let singular = keep(
        singular_candidates(spec, &opts.ladder, opts.growth_factor, &opts.solver),
        "singular candidates",
        &mut notes,
        &mut partial,
    );
    let derivative_modulus = keep(
        derivative_modulus(u, None),
        "derivative modulus",
        &mut notes,
        &mut partial,
    );

    RegularityReport {
        energy,
        a1_ok,
        a2_ok,
        a3,
        p3,
        energy_est,
        dini,
        hypothesis_h,
        singular_candidates: singular,
        derivative_modulus,
        verdict_notes: notes,
        partial,
    }
}
