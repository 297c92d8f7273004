use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use thiserror::Error;
use tonelli_core::obstacles::{condition_1_2_suite, POWER_LAW_BETAS};
use tonelli_core::regularity::RegularityReport;
use tonelli_core::theory::{default_lattice, Lattice};
use tonelli_core::variational::inject_perturbation;
use tonelli_core::{
    functional, solve, tonelli_report, ProblemTheory, SolveResult, VariationalError, Verdict,
};

use crate::output::{num, write_csv, Manifest};
use crate::scenario::{parse_scenario, Scenario, ScenarioError};
use crate::svg::{line_chart, Axes, Series};

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_NO_CONVERGENCE: u8 = 3;
pub const EXIT_VIOLATIONS: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Verify,
    Theory,
    Dini,
    Sweep,
    Plot,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Verify => "verify",
            Command::Theory => "theory",
            Command::Dini => "dini",
            Command::Sweep => "sweep",
            Command::Plot => "plot",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Flags {
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
    pub inject_perturbation: Option<f64>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{0}")]
    Data(String),
    #[error("solver did not converge after {iterations} iterations (KKT residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Scenario(ScenarioError::Io { .. }) => EXIT_USAGE,
            CliError::Scenario(_) | CliError::Data(_) => EXIT_INPUT,
            CliError::NoConvergence { .. } => EXIT_NO_CONVERGENCE,
        }
    }
}

fn io_err(context: impl Into<String>) -> impl FnOnce(io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}

/// Reads the scenario, applies `--seed` and runs `command` under a pool of
/// `--jobs` threads. Returns the exit code on success (0, or 4 when verify
/// finds violations).
pub fn run(command: Command, scenario: &Path, flags: &Flags) -> Result<u8, CliError> {
    let mut s = parse_scenario(scenario)?;
    if let Some(seed) = flags.seed {
        s = s.with_seed(seed);
    }
    let out = flags
        .out
        .clone()
        .or_else(|| s.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = flags.jobs {
        if j == 0 {
            return Err(CliError::Usage("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(j);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    pool.install(|| match command {
        Command::Sweep => sweep(&s, &out, flags),
        _ => run_point(command, &s, &out, flags, &[]),
    })
}

fn run_point(
    command: Command,
    s: &Scenario,
    out: &Path,
    flags: &Flags,
    overrides: &[(String, String)],
) -> Result<u8, CliError> {
    fs::create_dir_all(out).map_err(io_err(format!("cannot create {}", out.display())))?;
    let mut manifest = Manifest {
        command: command.name(),
        scenario_path: &s.path,
        scenario_text: &s.text,
        seed: s.seed,
        overrides,
        extra: Vec::new(),
    };
    if let Some(eps) = flags.inject_perturbation {
        manifest
            .extra
            .push(("inject_perturbation".into(), num(eps)));
    }
    manifest.write(out).map_err(io_err(format!(
        "cannot write manifest in {}",
        out.display()
    )))?;
    match command {
        Command::Solve => {
            let r = solve_scenario(s);
            let best = match &r {
                Ok(r) => r,
                Err(SolveFailure::NoConvergence(best)) => best,
                Err(SolveFailure::Other(e)) => return Err(CliError::Data(e.clone())),
            };
            write_solution(s, best, out)?;
            finish(r).map(|_| EXIT_OK)
        }
        Command::Verify => verify(s, out, flags.inject_perturbation),
        Command::Theory => {
            let result = finish(solve_scenario(s))?;
            let theory = build_theory(s, &result)?;
            write_constants(&theory, out)?;
            let lattice = default_pipeline(&theory)?;
            write_pipeline(&lattice, out)?;
            Ok(EXIT_OK)
        }
        Command::Dini => {
            let result = finish(solve_scenario(s))?;
            let theory = build_theory(s, &result)?;
            write_dini(s, &theory, out)?;
            Ok(EXIT_OK)
        }
        Command::Plot => {
            let result = finish(solve_scenario(s))?;
            plot_solution(s, &result, out)?;
            let theory = build_theory(s, &result)?;
            plot_pipeline(&theory, out)?;
            Ok(EXIT_OK)
        }
        Command::Sweep => unreachable!("sweeps are expanded by run"),
    }
}

enum SolveFailure {
    NoConvergence(SolveResult),
    Other(String),
}

fn solve_scenario(s: &Scenario) -> Result<SolveResult, SolveFailure> {
    match solve(&s.spec, &s.solver) {
        Ok(r) => Ok(r),
        Err(VariationalError::MaxIterations { best }) => Err(SolveFailure::NoConvergence(*best)),
        Err(e) => Err(SolveFailure::Other(e.to_string())),
    }
}

fn finish(r: Result<SolveResult, SolveFailure>) -> Result<SolveResult, CliError> {
    match r {
        Ok(r) => Ok(r),
        Err(SolveFailure::NoConvergence(best)) => Err(CliError::NoConvergence {
            iterations: best.iterations,
            residual: best.kkt_residual,
        }),
        Err(SolveFailure::Other(e)) => Err(CliError::Data(e)),
    }
}

fn build_theory(s: &Scenario, r: &SolveResult) -> Result<ProblemTheory, CliError> {
    ProblemTheory::build(&s.spec.lagrangian, &s.spec.obstacles, r.energy, &s.theory)
        .map_err(|e| CliError::Data(format!("theory: {e}")))
}

/// Nodal slope: the slope of the cell to the right, the last cell at `b`.
fn nodal_slopes(r: &SolveResult) -> Vec<f64> {
    let mut slopes = r.u.slopes();
    slopes.push(*slopes.last().expect("at least one cell"));
    slopes
}

fn write_solution(s: &Scenario, r: &SolveResult, out: &Path) -> Result<(), CliError> {
    let pair = &s.spec.obstacles;
    let slopes = nodal_slopes(r);
    let rows =
        r.u.nodes()
            .iter()
            .zip(r.u.values())
            .zip(&slopes)
            .map(|((&x, &u), &k)| {
                vec![
                    num(x),
                    num(u),
                    num(pair.lower(x)),
                    num(pair.upper(x)),
                    num(k),
                ]
            });
    let path = out.join("solution.csv");
    write_csv(&path, &["x", "u", "f", "g", "slope"], rows)
        .map_err(io_err(format!("cannot write {}", path.display())))?;
    let text = format!(
        "energy = {}\niterations = {}\nkkt_residual = {}\nconverged = {}\nactive_lower = {}\nactive_upper = {}\n",
        num(r.energy),
        r.iterations,
        num(r.kkt_residual),
        r.converged,
        r.active_lower.len(),
        r.active_upper.len()
    );
    fs::write(out.join("energy.txt"), text).map_err(io_err("cannot write energy.txt"))
}

fn verify(s: &Scenario, out: &Path, inject: Option<f64>) -> Result<u8, CliError> {
    let mut result = finish(solve_scenario(s))?;
    let theory = build_theory(s, &result)?;
    let mut injected = None;
    if let Some(eps) = inject {
        let (i, w) = inject_perturbation(&result, &s.spec.obstacles, eps).ok_or_else(|| {
            CliError::Data(format!("no free node admits a perturbation of {eps}"))
        })?;
        result.energy =
            functional(&s.spec.lagrangian, &w).map_err(|e| CliError::Data(e.to_string()))?;
        result.u = w;
        injected = Some((i, eps));
    }
    let report = tonelli_report(&s.spec, &result, &theory, &s.report);
    write_report(s, &report, &theory, injected, out)?;
    Ok(if report.violations().is_empty() {
        EXIT_OK
    } else {
        EXIT_VIOLATIONS
    })
}

fn status(ok: Option<bool>) -> &'static str {
    match ok {
        Some(true) => "pass",
        Some(false) => "fail",
        None => "error",
    }
}

fn report_rows(report: &RegularityReport) -> Vec<Vec<String>> {
    let row = |check: &str, st: &str, value: f64, count: usize, detail: String| {
        vec![
            check.to_string(),
            st.to_string(),
            num(value),
            count.to_string(),
            detail,
        ]
    };
    let mut rows = vec![
        row("energy", "info", report.energy, 0, String::new()),
        row(
            "A1",
            status(Some(report.a1_ok)),
            f64::NAN,
            0,
            "graph inside the obstacle band".into(),
        ),
        row(
            "A2",
            status(Some(report.a2_ok)),
            f64::NAN,
            0,
            "energy at most c".into(),
        ),
    ];
    rows.push(match &report.a3 {
        Some(a) => row(
            "A3",
            status(Some(a.ok())),
            a.min_slack,
            a.violations.len(),
            format!("{} pairs, tolerance {:e}", a.pairs, a.tol),
        ),
        None => row("A3", "error", f64::NAN, 0, String::new()),
    });
    rows.push(match &report.p3 {
        Some(p) => row(
            "P3",
            status(Some(p.ok())),
            p.max_ratio,
            p.violations.len(),
            format!(
                "{} pairs, {} finite, {} vacuous, {} past the k grid",
                p.pairs, p.finite, p.vacuous, p.extrapolated
            ),
        ),
        None => row("P3", "error", f64::NAN, 0, String::new()),
    });
    rows.push(match &report.energy_est {
        Some(e) => row(
            "energy_estimate",
            status(Some(e.ok())),
            e.min_slack,
            e.violations.len(),
            format!("{} pairs, {} vacuous", e.pairs, e.vacuous),
        ),
        None => row("energy_estimate", "error", f64::NAN, 0, String::new()),
    });
    let verdict_status = |v: Verdict| match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    };
    rows.push(match &report.dini {
        Some(d) => row(
            "dini_suite",
            verdict_status(d.verdict()),
            d.n_const,
            d.entries
                .iter()
                .filter(|e| e.report.verdict == Verdict::Fail)
                .count(),
            format!("{} entries", d.entries.len()),
        ),
        None => row("dini_suite", "error", f64::NAN, 0, String::new()),
    });
    rows.push(match report.hypothesis_h {
        Some(v) => row(
            "hypothesis_h",
            verdict_status(v),
            f64::NAN,
            0,
            String::new(),
        ),
        None => row("hypothesis_h", "error", f64::NAN, 0, String::new()),
    });
    rows.push(match &report.singular_candidates {
        Some(c) => row(
            "singular_candidates",
            if c.is_empty() { "pass" } else { "flagged" },
            f64::NAN,
            c.len(),
            c.iter()
                .map(|c| format!("{:.6}", c.x))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        None => row("singular_candidates", "error", f64::NAN, 0, String::new()),
    });
    rows.push(match &report.derivative_modulus {
        Some(m) => row("derivative_modulus", "info", f64::NAN, 0, m.label()),
        None => row("derivative_modulus", "error", f64::NAN, 0, String::new()),
    });
    rows
}

fn write_report(
    s: &Scenario,
    report: &RegularityReport,
    theory: &ProblemTheory,
    injected: Option<(usize, f64)>,
    out: &Path,
) -> Result<(), CliError> {
    let rows = report_rows(report);
    let path = out.join("report.csv");
    write_csv(
        &path,
        &["check", "status", "value", "count", "detail"],
        rows.clone(),
    )
    .map_err(io_err(format!("cannot write {}", path.display())))?;

    let c = theory.constants();
    let mut t = String::new();
    t.push_str(&format!("scenario: {s}\n"));
    if let Some((i, eps)) = injected {
        t.push_str(&format!("perturbed: +{eps:e} at node {i}\n"));
    }
    t.push_str(&format!(
        "constants: mu = {:.6e}, c = {:.6e}, N = {:.6e}, delta0 = {:.6e}, C0 = {:.6e}, alpha0 = {}\n",
        c.mu, c.c, c.n, c.delta0, theory.c0, theory.alpha0
    ));
    if !theory.holder_stable {
        t.push_str("note: Hölder estimate of L not stable under refinement\n");
    }
    t.push('\n');
    for r in &rows {
        let value = if r[2] == "nan" {
            String::new()
        } else {
            format!(" value={}", r[2])
        };
        let count = if r[3] == "0" {
            String::new()
        } else {
            format!(" count={}", r[3])
        };
        let detail = if r[4].is_empty() {
            String::new()
        } else {
            format!(" ({})", r[4])
        };
        t.push_str(&format!(
            "{:<20} {:<12}{value}{count}{detail}\n",
            r[0], r[1]
        ));
    }
    let violations = report.violations();
    t.push_str(&format!(
        "\nviolations: {}\n",
        if violations.is_empty() {
            "none".to_string()
        } else {
            violations.join(", ")
        }
    ));
    if report.partial {
        t.push_str("partial: some checks could not run\n");
    }
    for n in &report.verdict_notes {
        t.push_str(&format!("note: {n}\n"));
    }
    fs::write(out.join("report.txt"), t).map_err(io_err("cannot write report.txt"))
}

fn write_constants(theory: &ProblemTheory, out: &Path) -> Result<(), CliError> {
    let c = theory.constants();
    let scalar = |name: &str, v: f64| vec![name.to_string(), String::new(), num(v)];
    let mut rows = vec![
        scalar("N", c.n),
        scalar("delta0", c.delta0),
        scalar("mu", c.mu),
        scalar("c", c.c),
        scalar("c1", c.c1),
        scalar("M", c.m_growth),
        scalar("length", c.length),
        scalar("k0_radius", c.k0_radius),
        scalar("C0", theory.c0),
        scalar("alpha0", theory.alpha0),
    ];
    for r in &c.rows {
        for (name, v) in [
            ("c_k", r.c_k),
            ("omega_cap", r.omega_cap),
            ("M_k", r.m_k),
            ("alpha_k", r.alpha_k),
            ("c1_k", r.c1_k),
            ("c2_k", r.c2_k),
        ] {
            rows.push(vec![name.to_string(), num(r.k), num(v)]);
        }
    }
    let path = out.join("constants.csv");
    write_csv(&path, &["name", "k", "value"], rows)
        .map_err(io_err(format!("cannot write {}", path.display())))
}

fn default_pipeline(theory: &ProblemTheory) -> Result<Lattice, CliError> {
    let c = theory.constants();
    let (ks, eps) = default_lattice(c.k_max(), c.delta0 / std::f64::consts::E);
    theory
        .pipeline
        .tabulate(&ks, &eps)
        .map_err(|e| CliError::Data(format!("pipeline: {e}")))
}

fn write_pipeline(l: &Lattice, out: &Path) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(l.ks.len() * l.eps.len());
    for (i, &k) in l.ks.iter().enumerate() {
        for (j, &e) in l.eps.iter().enumerate() {
            rows.push(vec![
                num(k),
                num(e),
                num(l.delta1[i][j]),
                num(l.delta2[i][j]),
                num(l.big_delta[i][j]),
                num(l.delta[i][j]),
                num(l.raw_delta[i][j]),
            ]);
        }
    }
    let path = out.join("pipeline.csv");
    write_csv(
        &path,
        &[
            "k",
            "eps",
            "delta1",
            "delta2",
            "big_delta",
            "delta",
            "delta_raw",
        ],
        rows,
    )
    .map_err(io_err(format!("cannot write {}", path.display())))
}

fn write_dini(s: &Scenario, theory: &ProblemTheory, out: &Path) -> Result<(), CliError> {
    let thetas = s.thetas.clone().unwrap_or_else(|| theory.required_thetas());
    let suite = condition_1_2_suite(
        s.spec.obstacles.moduli(),
        theory.constants().n,
        &thetas,
        &POWER_LAW_BETAS,
        &s.report.eps_ladder,
    )
    .map_err(|e| CliError::Data(format!("dini: {e}")))?;
    let mut rows = Vec::new();
    for e in &suite.entries {
        for (&eps, &v) in e.report.eps.iter().zip(&e.report.values) {
            rows.push(vec![
                e.h.to_string(),
                num(e.theta),
                num(eps),
                num(v),
                e.report.verdict.as_str().to_string(),
            ]);
        }
    }
    let path = out.join("dini.csv");
    write_csv(&path, &["h", "theta", "eps", "value", "verdict"], rows)
        .map_err(io_err(format!("cannot write {}", path.display())))
}

fn plot_solution(s: &Scenario, r: &SolveResult, out: &Path) -> Result<(), CliError> {
    let pair = &s.spec.obstacles;
    let xs = r.u.nodes();
    let curve = |label: &str, f: &dyn Fn(f64) -> f64, dashed| Series {
        label: label.into(),
        points: xs.iter().map(|&x| (x, f(x))).collect(),
        dashed,
    };
    let series = [
        curve("f", &|x| pair.lower(x), true),
        curve("g", &|x| pair.upper(x), true),
        curve("u", &|x| r.u.eval(x), false),
    ];
    let svg = line_chart("minimizer", "x", "u", &series, Axes::default());
    fs::write(out.join("solution.svg"), svg).map_err(io_err("cannot write solution.svg"))?;

    let slopes = nodal_slopes(r);
    let series = [Series {
        label: "u'".into(),
        points: xs.iter().copied().zip(slopes).collect(),
        dashed: false,
    }];
    let svg = line_chart("slope", "x", "u'", &series, Axes::default());
    fs::write(out.join("slope.svg"), svg).map_err(io_err("cannot write slope.svg"))
}

fn plot_pipeline(theory: &ProblemTheory, out: &Path) -> Result<(), CliError> {
    let c = theory.constants();
    let eps_max = c.delta0 / std::f64::consts::E;
    let eps: Vec<f64> = (0..40)
        .map(|j| eps_max * 10f64.powf(-12.0 * (39 - j) as f64 / 39.0))
        .collect();
    let ks: Vec<f64> = c
        .rows
        .iter()
        .map(|r| r.k)
        .filter(|&k| k > 0.0)
        .take(4)
        .collect();
    let lattice = theory
        .pipeline
        .tabulate(&ks, &eps)
        .map_err(|e| CliError::Data(format!("pipeline: {e}")))?;
    let log = Axes {
        log_x: true,
        log_y: true,
    };
    for (name, table) in [("big_delta", &lattice.big_delta), ("delta", &lattice.delta)] {
        let series: Vec<Series> = ks
            .iter()
            .enumerate()
            .map(|(i, &k)| Series {
                label: format!("k = {k}"),
                points: eps.iter().copied().zip(table[i].iter().copied()).collect(),
                dashed: false,
            })
            .collect();
        let title = if name == "delta" {
            "δ(k, ε)"
        } else {
            "Δ(k, ε)"
        };
        let svg = line_chart(title, "ε", name, &series, log);
        let file = format!("{name}.svg");
        fs::write(out.join(&file), svg).map_err(io_err(format!("cannot write {file}")))?;
    }
    Ok(())
}

/// One `verify` per grid point in `point_NNN/`, concurrently, plus a
/// `sweep.csv` summary. Violations are recorded, not turned into exit 4.
fn sweep(s: &Scenario, out: &Path, flags: &Flags) -> Result<u8, CliError> {
    if s.sweep.is_empty() {
        return Err(CliError::Scenario(ScenarioError::Validation(
            crate::scenario::ValidationError {
                field: "sweep".into(),
                reason: "no [sweep] entries".into(),
            },
        )));
    }
    let points = s.sweep_points()?;
    fs::create_dir_all(out).map_err(io_err(format!("cannot create {}", out.display())))?;
    let summary = Mutex::new(vec![None; points.len()]);
    let codes: Vec<Result<u8, CliError>> = points
        .par_iter()
        .enumerate()
        .map(|(i, (overrides, point))| {
            let dir = out.join(format!("point_{i:03}"));
            let code = run_point(Command::Verify, point, &dir, flags, overrides);
            let label = overrides
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";");
            let outcome = match &code {
                Ok(EXIT_OK) => "ok".to_string(),
                Ok(_) => "violations".to_string(),
                Err(e) => format!("error: {e}"),
            };
            summary.lock().expect("no panics while holding the lock")[i] =
                Some(vec![format!("point_{i:03}"), label, outcome]);
            code
        })
        .collect();
    let rows = summary
        .into_inner()
        .expect("lock is not poisoned")
        .into_iter()
        .flatten();
    let path = out.join("sweep.csv");
    write_csv(&path, &["point", "overrides", "outcome"], rows)
        .map_err(io_err(format!("cannot write {}", path.display())))?;
    Manifest {
        command: "sweep",
        scenario_path: &s.path,
        scenario_text: &s.text,
        seed: s.seed,
        overrides: &[],
        extra: vec![("points".into(), points.len().to_string())],
    }
    .write(out)
    .map_err(io_err("cannot write manifest"))?;
    let mut worst = EXIT_OK;
    for c in codes {
        match c {
            Ok(_) => {}
            Err(e) => {
                eprintln!("sweep point failed: {e}");
                worst = worst.max(e.exit_code());
            }
        }
    }
    Ok(worst)
}
