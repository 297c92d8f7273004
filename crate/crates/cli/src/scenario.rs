//! Scenario files: `key = value` lines under `[section]` headers, `#`
//! comments, UTF-8.
//!
//! ```text
//! [problem]
//! a = 0
//! b = 1
//! A = 0
//! B = 1
//!
//! [lagrangian]
//! L = v^2
//!
//! [obstacles]
//! f = -10
//! g = 10
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use thiserror::Error;
use tonelli_core::expr::{Expr, Var};
use tonelli_core::lagrangian::check_ellipticity;
use tonelli_core::obstacles::default_eps_ladder;
use tonelli_core::regularity::{ReportOptions, DEFAULT_LADDER, GROWTH_FACTOR};
use tonelli_core::theory::{TheoryOptions, K_GRID};
use tonelli_core::{Lagrangian, Obstacle, ObstaclePair, PairOptions, ProblemSpec, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid value for `{field}`: {reason}")]
pub struct ValidationError {
    pub field: String,
    pub reason: String,
}

impl ValidationError {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        ValidationError {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    line: usize,
    /// 1-based column of the first character of the value.
    column: usize,
}

/// `section.key → entry`, in file order of first appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawIni {
    entries: BTreeMap<String, Entry>,
}

const KEYS: &[(&str, &[&str])] = &[
    ("problem", &["a", "b", "A", "B", "mu"]),
    ("lagrangian", &["L", "L_v", "L_vv"]),
    ("obstacles", &["f", "f_prime", "g", "g_prime"]),
    ("solver", &["n", "tol", "max_iter", "seed"]),
    (
        "checks",
        &[
            "a3_pairs",
            "p3_pairs",
            "energy_pairs",
            "eps_ladder",
            "k_grid",
            "thetas",
            "ladder",
            "growth_factor",
            "delta0",
        ],
    ),
    ("output", &["dir"]),
];

impl RawIni {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        let mut entries = BTreeMap::new();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            };
            let trimmed = content.trim();
            if trimmed.is_empty() {
                continue;
            }
            let indent = content.chars().take_while(|c| c.is_whitespace()).count();
            if let Some(rest) = trimmed.strip_prefix('[') {
                let Some(name) = rest.strip_suffix(']') else {
                    return Err(ParseError {
                        line,
                        column: indent + trimmed.chars().count() + 1,
                        message: "expected `]`".into(),
                    });
                };
                let name = name.trim();
                if name != "sweep" && !KEYS.iter().any(|(s, _)| *s == name) {
                    return Err(ParseError {
                        line,
                        column: indent + 2,
                        message: format!("unknown section `{name}`"),
                    });
                }
                section = Some(name.to_string());
                continue;
            }
            let Some(eq) = content.find('=') else {
                return Err(ParseError {
                    line,
                    column: indent + 1,
                    message: "expected `key = value`".into(),
                });
            };
            let key = content[..eq].trim();
            let Some(sec) = &section else {
                return Err(ParseError {
                    line,
                    column: indent + 1,
                    message: "entry before any [section]".into(),
                });
            };
            if key.is_empty() {
                return Err(ParseError {
                    line,
                    column: indent + 1,
                    message: "empty key".into(),
                });
            }
            let known =
                sec == "sweep" || KEYS.iter().any(|(s, keys)| s == sec && keys.contains(&key));
            if !known {
                return Err(ParseError {
                    line,
                    column: indent + 1,
                    message: format!("unknown key `{key}` in [{sec}]"),
                });
            }
            let after = &content[eq + 1..];
            let lead = after.chars().take_while(|c| c.is_whitespace()).count();
            let value = after.trim().to_string();
            let column = content[..eq].chars().count() + 2 + lead;
            let full = format!("{sec}.{key}");
            if entries.contains_key(&full) {
                return Err(ParseError {
                    line,
                    column: indent + 1,
                    message: format!("duplicate key `{key}` in [{sec}]"),
                });
            }
            entries.insert(
                full,
                Entry {
                    value,
                    line,
                    column,
                },
            );
        }
        Ok(RawIni { entries })
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.get(key).map(|e| e.value.as_str())
    }

    /// Replaces (or adds) `section.key`; used by sweeps.
    pub fn set(&mut self, key: &str, value: &str) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.to_string(),
                line: 0,
                column: 0,
            },
        );
    }

    fn sweep_axes(&self) -> Vec<(String, Vec<String>)> {
        self.entries
            .iter()
            .filter_map(|(k, e)| {
                k.strip_prefix("sweep.").map(|target| {
                    let values = e.value.split(',').map(|v| v.trim().to_string()).collect();
                    (target.to_string(), values)
                })
            })
            .collect()
    }
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub path: PathBuf,
    /// Bytes of the file, hashed into the manifest.
    pub text: String,
    pub raw: RawIni,
    pub a: f64,
    pub b: f64,
    pub left: f64,
    pub right: f64,
    /// Ellipticity constant; estimated from `min L_vv` when not given.
    pub mu: f64,
    pub mu_estimated: bool,
    pub lagrangian_expr: String,
    pub f_expr: String,
    pub g_expr: String,
    pub spec: ProblemSpec,
    pub solver: SolverOptions,
    pub seed: u64,
    pub report: ReportOptions,
    pub theory: TheoryOptions,
    pub thetas: Option<Vec<f64>>,
    pub output_dir: Option<PathBuf>,
    /// `(section.key, values)` of the parameter grid.
    pub sweep: Vec<(String, Vec<String>)>,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "L = {} on [{}, {}], u(a) = {}, u(b) = {}, f = {}, g = {}, n = {}",
            self.lagrangian_expr,
            self.a,
            self.b,
            self.left,
            self.right,
            self.f_expr,
            self.g_expr,
            self.spec.n
        )
    }
}

fn expr_error(e: &Entry, err: tonelli_core::ExprError) -> ParseError {
    use tonelli_core::ExprError as E;
    let (column, message) = match err {
        E::Parse {
            column, message, ..
        } => (column, message),
        E::UnknownIdentifier { name, column } => (column, format!("unknown identifier `{name}`")),
    };
    ParseError {
        line: e.line,
        column: e.column + column.saturating_sub(1),
        message,
    }
}

struct Reader<'a> {
    raw: &'a RawIni,
}

impl Reader<'_> {
    fn required(&self, key: &str, field: &str) -> Result<&Entry, ValidationError> {
        self.raw
            .get(key)
            .filter(|e| !e.value.is_empty())
            .ok_or_else(|| ValidationError::new(field, "missing"))
    }

    fn number(&self, key: &str, field: &str) -> Result<Option<f64>, ValidationError> {
        match self.raw.get(key) {
            None => Ok(None),
            Some(e) => {
                let v: f64 = e.value.parse().map_err(|_| {
                    ValidationError::new(field, format!("`{}` is not a number", e.value))
                })?;
                if !v.is_finite() {
                    return Err(ValidationError::new(field, "must be finite"));
                }
                Ok(Some(v))
            }
        }
    }

    fn integer(&self, key: &str, field: &str) -> Result<Option<u64>, ValidationError> {
        match self.raw.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|_| {
                ValidationError::new(field, format!("`{}` is not a nonnegative integer", e.value))
            }),
        }
    }

    fn list(&self, key: &str, field: &str) -> Result<Option<Vec<f64>>, ValidationError> {
        match self.raw.get(key) {
            None => Ok(None),
            Some(e) => e
                .value
                .split(',')
                .map(|s| {
                    let s = s.trim();
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| {
                            ValidationError::new(field, format!("`{s}` is not a number"))
                        })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }

    fn expr(&self, key: &str, vars: &[Var]) -> Result<Option<Expr>, ParseError> {
        match self.raw.get(key) {
            None => Ok(None),
            Some(e) => Expr::parse(&e.value, vars)
                .map(Some)
                .map_err(|err| expr_error(e, err)),
        }
    }
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw = RawIni::parse(&text)?;
    build(path, text, raw)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let raw = RawIni::parse(text)?;
    build(Path::new("<inline>"), text.to_string(), raw)
}

/// Validates a raw file (possibly with sweep overrides applied).
pub fn build(path: &Path, text: String, raw: RawIni) -> Result<Scenario, ScenarioError> {
    let r = Reader { raw: &raw };
    let lux = [Var::X, Var::U, Var::V];
    let num = |key: &str, field: &str| -> Result<f64, ScenarioError> {
        r.required(key, field)?;
        Ok(r.number(key, field)?.expect("checked present"))
    };
    let a = num("problem.a", "a")?;
    let b = num("problem.b", "b")?;
    if !(b > a) {
        return Err(ValidationError::new("b", format!("need b > a (a = {a}, b = {b})")).into());
    }
    let left = num("problem.A", "A")?;
    let right = num("problem.B", "B")?;

    r.required("lagrangian.L", "L")?;
    let l_expr = r.expr("lagrangian.L", &lux)?.expect("checked present");
    let l_v = r.expr("lagrangian.L_v", &lux)?;
    let l_vv = r.expr("lagrangian.L_vv", &lux)?;
    if l_v.is_some() != l_vv.is_some() {
        return Err(ValidationError::new("L_v", "L_v and L_vv must be given together").into());
    }
    r.required("obstacles.f", "f")?;
    r.required("obstacles.g", "g")?;
    for key in [
        "obstacles.f",
        "obstacles.f_prime",
        "obstacles.g",
        "obstacles.g_prime",
    ] {
        r.expr(key, &[Var::X])?;
    }
    let obstacle = |v: &str, d: &str| -> Result<Obstacle, ScenarioError> {
        let src = r.required(v, v.trim_start_matches("obstacles."))?;
        Obstacle::parse(&src.value, r.raw.value(d))
            .map_err(|e| ScenarioError::Parse(expr_error(src, e)))
    };
    let f = obstacle("obstacles.f", "obstacles.f_prime")?;
    let g = obstacle("obstacles.g", "obstacles.g_prime")?;

    let n = r.integer("solver.n", "n")?.unwrap_or(2001) as usize;
    if n < 3 {
        return Err(ValidationError::new("n", "need at least 3 nodes").into());
    }
    let tol = r.number("solver.tol", "tol")?.unwrap_or(1e-8);
    if !(tol > 0.0) {
        return Err(ValidationError::new("tol", "must be positive").into());
    }
    let max_iter = r.integer("solver.max_iter", "max_iter")?.unwrap_or(100_000) as usize;
    if max_iter == 0 {
        return Err(ValidationError::new("max_iter", "must be positive").into());
    }
    let seed = r.integer("solver.seed", "seed")?.unwrap_or(0);

    let pair = ObstaclePair::new(f, g, a, b, PairOptions::for_solver_grid(n))
        .map_err(|e| ValidationError::new("g", e.to_string()))?;

    let mut lagrangian = Lagrangian::from_expr(l_expr.clone(), 1.0);
    if let (Some(dv), Some(dvv)) = (l_v, l_vv) {
        lagrangian = lagrangian.override_v_derivatives(dv, dvv);
    }
    let (mu, mu_estimated) = match r.number("problem.mu", "mu")? {
        Some(mu) if mu > 0.0 => (mu, false),
        Some(_) => return Err(ValidationError::new("mu", "must be positive").into()),
        None => {
            let bx = pair
                .holder_box()
                .map_err(|e| ValidationError::new("mu", e.to_string()))?;
            let (_, observed) = check_ellipticity(&lagrangian, &bx, 21)
                .map_err(|e| ValidationError::new("mu", e.to_string()))?;
            if !(observed > 0.0) {
                return Err(ValidationError::new(
                    "mu",
                    format!("L is not elliptic: min L_vv = {observed} on the obstacle box"),
                )
                .into());
            }
            (observed, true)
        }
    };
    let lagrangian = lagrangian.with_mu(mu);
    let spec = ProblemSpec::new(lagrangian, pair, left, right, n).map_err(|e| {
        let field = if e.to_string().starts_with('A') {
            "A"
        } else {
            "B"
        };
        ValidationError::new(field, e.to_string())
    })?;

    let count = |key: &str, field: &str, default: usize| -> Result<usize, ValidationError> {
        let v = r.integer(key, field)?.map_or(default, |v| v as usize);
        if v == 0 {
            return Err(ValidationError::new(field, "must be positive"));
        }
        Ok(v)
    };
    let eps_ladder = r
        .list("checks.eps_ladder", "eps_ladder")?
        .unwrap_or_else(default_eps_ladder);
    if eps_ladder.len() < 2
        || eps_ladder.iter().any(|&e| !(e > 0.0))
        || eps_ladder.windows(2).any(|w| !(w[1] < w[0]))
    {
        return Err(ValidationError::new(
            "eps_ladder",
            "need at least two positive, strictly decreasing values",
        )
        .into());
    }
    let k_grid = r
        .list("checks.k_grid", "k_grid")?
        .unwrap_or_else(|| K_GRID.to_vec());
    if k_grid.is_empty() || k_grid[0] < 0.0 || k_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(
            ValidationError::new("k_grid", "need nonnegative, strictly increasing values").into(),
        );
    }
    let thetas = r.list("checks.thetas", "thetas")?;
    if thetas
        .as_ref()
        .is_some_and(|t| t.is_empty() || t.iter().any(|&x| !(x > 0.0)))
    {
        return Err(ValidationError::new("thetas", "need positive values").into());
    }
    let ladder: Vec<usize> = match r.list("checks.ladder", "ladder")? {
        None => DEFAULT_LADDER.to_vec(),
        Some(v) => {
            if v.iter().any(|&x| x < 3.0 || x.fract() != 0.0) {
                return Err(ValidationError::new("ladder", "need integers ≥ 3").into());
            }
            v.into_iter().map(|x| x as usize).collect()
        }
    };
    if ladder.len() < 3 || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(
            ValidationError::new("ladder", "need at least three increasing grid sizes").into(),
        );
    }
    let growth_factor = r
        .number("checks.growth_factor", "growth_factor")?
        .unwrap_or(GROWTH_FACTOR);
    if !(growth_factor > 1.0) {
        return Err(ValidationError::new("growth_factor", "must exceed 1").into());
    }
    let delta0 = r.number("checks.delta0", "delta0")?;
    if delta0.is_some_and(|d| !(d > 0.0)) {
        return Err(ValidationError::new("delta0", "must be positive").into());
    }
    let solver = SolverOptions {
        tol,
        max_iter,
        ..Default::default()
    };
    let report = ReportOptions {
        seed,
        a3_pairs: count("checks.a3_pairs", "a3_pairs", 1100)?,
        p3_pairs: count("checks.p3_pairs", "p3_pairs", 500)?,
        energy_pairs: count("checks.energy_pairs", "energy_pairs", 200)?,
        ladder,
        growth_factor,
        eps_ladder,
        solver,
    };
    let theory = TheoryOptions {
        k_grid,
        delta0,
        ..Default::default()
    };
    let output_dir = raw.value("output.dir").map(PathBuf::from);
    let sweep = raw.sweep_axes();
    for (key, values) in &sweep {
        if !KEYS.iter().any(|(s, keys)| {
            key.split_once('.')
                .is_some_and(|(sec, k)| sec == *s && keys.contains(&k))
        }) {
            return Err(ValidationError::new(&format!("sweep.{key}"), "unknown target key").into());
        }
        if values.iter().any(|v| v.is_empty()) {
            return Err(ValidationError::new(&format!("sweep.{key}"), "empty value").into());
        }
    }
    Ok(Scenario {
        path: path.to_path_buf(),
        text,
        a,
        b,
        left,
        right,
        mu,
        mu_estimated,
        lagrangian_expr: l_expr.source().to_string(),
        f_expr: raw.value("obstacles.f").unwrap_or_default().to_string(),
        g_expr: raw.value("obstacles.g").unwrap_or_default().to_string(),
        spec,
        solver,
        seed,
        report,
        theory,
        thetas,
        output_dir,
        sweep,
        raw,
    })
}

/// Overrides of one grid point and the scenario they produce.
pub type SweepPoint = (Vec<(String, String)>, Scenario);

impl Scenario {
    /// One scenario per point of the sweep grid, with its override labels.
    pub fn sweep_points(&self) -> Result<Vec<SweepPoint>, ScenarioError> {
        let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push((key.clone(), v.clone()));
                        q
                    })
                })
                .collect();
        }
        points
            .into_iter()
            .map(|overrides| {
                let mut raw = self.raw.clone();
                for (k, v) in &overrides {
                    raw.set(k, v);
                }
                let mut s = build(&self.path, self.text.clone(), raw)?;
                s.sweep.clear();
                Ok((overrides, s))
            })
            .collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.report.seed = seed;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[problem]\na = 0\nb = 1\nA = 0\nB = 1\n[lagrangian]\nL = v^2\n[obstacles]\nf = -10\ng = 10\n";

    #[test]
    fn minimal_file_is_valid() {
        let s = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!((s.a, s.b, s.left, s.right), (0.0, 1.0, 0.0, 1.0));
        assert_eq!(s.spec.n, 2001);
        assert!(s.mu_estimated);
        assert!((s.mu - 2.0).abs() < 1e-9);
    }

    #[test]
    fn missing_boundary_value() {
        let text = MINIMAL.replace("B = 1\n", "");
        match parse_scenario_str(&text) {
            Err(ScenarioError::Validation(v)) => assert_eq!(v.field, "B"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_variable_reports_position() {
        let text = MINIMAL.replace("L = v^2", "L = v^2 + t");
        match parse_scenario_str(&text) {
            Err(ScenarioError::Parse(p)) => {
                assert_eq!(p.line, 7);
                assert_eq!(p.column, 11);
                assert!(p.message.contains('t'));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors() {
        let e = RawIni::parse("[problem\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = RawIni::parse("[problem]\na 0\n").unwrap_err();
        assert_eq!((e.line, e.column), (2, 1));
        let e = RawIni::parse("a = 1\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = RawIni::parse("[problem]\nz = 1\n").unwrap_err();
        assert!(e.message.contains("unknown key"));
        let e = RawIni::parse("[nope]\n").unwrap_err();
        assert!(e.message.contains("unknown section"));
    }

    #[test]
    fn comments_and_whitespace() {
        let raw = RawIni::parse("# header\n[solver]  # trailing\n  n =  11 # nodes\n").unwrap();
        assert_eq!(raw.value("solver.n"), Some("11"));
    }

    #[test]
    fn range_checks_name_the_field() {
        for (from, to, field) in [
            ("b = 1", "b = -1", "b"),
            ("[obstacles]", "[solver]\nn = 2\n[obstacles]", "n"),
            (
                "[obstacles]",
                "[checks]\neps_ladder = 1e-4, 1e-2\n[obstacles]",
                "eps_ladder",
            ),
            (
                "[obstacles]",
                "[checks]\nladder = 11, 21\n[obstacles]",
                "ladder",
            ),
            ("B = 1", "B = 20", "B"),
            ("a = 0", "a = x", "a"),
        ] {
            match parse_scenario_str(&MINIMAL.replace(from, to)) {
                Err(ScenarioError::Validation(v)) => assert_eq!(v.field, field),
                other => panic!("{to}: {other:?}"),
            }
        }
    }

    #[test]
    fn non_elliptic_lagrangian_is_rejected() {
        let text = MINIMAL.replace("L = v^2", "L = u^2 + v");
        match parse_scenario_str(&text) {
            Err(ScenarioError::Validation(v)) => assert_eq!(v.field, "mu"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_grid_expands() {
        let text = format!("{MINIMAL}[sweep]\nsolver.n = 11, 21\nproblem.B = 0, 0.5, 1\n");
        let s = parse_scenario_str(&text).unwrap();
        let points = s.sweep_points().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(points[5].1.spec.n, 21);
        assert_eq!(points[5].1.right, 1.0);
        let bad = format!("{MINIMAL}[sweep]\nsolver.q = 1\n");
        assert!(matches!(
            parse_scenario_str(&bad),
            Err(ScenarioError::Validation(_))
        ));
    }
}
