use std::fs;
use std::path::Path;

use tempfile::TempDir;
use tonelli_cli::{parse_scenario, ScenarioError};

fn write(dir: &TempDir, text: &str) -> std::path::PathBuf {
    let p = dir.path().join("s.ini");
    fs::write(&p, text).unwrap();
    p
}

const MINIMAL: &str = "\
[problem]
a = 0
b = 1
A = 0
B = 1

[lagrangian]
L = v^2

[obstacles]
f = -10
g = 10
";

#[test]
fn minimal_file() {
    let tmp = TempDir::new().unwrap();
    let s = parse_scenario(&write(&tmp, MINIMAL)).unwrap();
    assert_eq!(s.lagrangian_expr, "v^2");
    assert_eq!((s.f_expr.as_str(), s.g_expr.as_str()), ("-10", "10"));
    assert_eq!(s.spec.lagrangian.eval(0.3, 0.1, 2.0), 4.0);
    assert_eq!(s.spec.obstacles.lower(0.5), -10.0);
    assert!(s.sweep.is_empty());
}

#[test]
fn missing_b() {
    let tmp = TempDir::new().unwrap();
    match parse_scenario(&write(&tmp, &MINIMAL.replace("B = 1\n", ""))) {
        Err(ScenarioError::Validation(v)) => assert_eq!(v.field, "B"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn unknown_identifier() {
    let tmp = TempDir::new().unwrap();
    match parse_scenario(&write(&tmp, &MINIMAL.replace("v^2", "t*v^2"))) {
        Err(ScenarioError::Parse(p)) => {
            assert_eq!((p.line, p.column), (8, 5));
            assert!(p.message.contains("unknown identifier"));
        }
        other => panic!("{other:?}"),
    }
    // obstacles may use x only
    match parse_scenario(&write(&tmp, &MINIMAL.replace("f = -10", "f = -10 + u"))) {
        Err(ScenarioError::Parse(p)) => assert_eq!(p.line, 11),
        other => panic!("{other:?}"),
    }
}

#[test]
fn options_are_read() {
    let tmp = TempDir::new().unwrap();
    let text = format!(
        "{MINIMAL}\n[solver]\nn = 11\ntol = 1e-9\nmax_iter = 50\nseed = 9\n\n[checks]\na3_pairs = 20\nk_grid = 0, 1, 2\neps_ladder = 1e-2, 1e-4\nthetas = 0.5\n\n[output]\ndir = results\n"
    );
    let s = parse_scenario(&write(&tmp, &text)).unwrap();
    assert_eq!(s.spec.n, 11);
    assert_eq!((s.solver.tol, s.solver.max_iter), (1e-9, 50));
    assert_eq!((s.seed, s.report.seed), (9, 9));
    assert_eq!(s.report.a3_pairs, 20);
    assert_eq!(s.theory.k_grid, [0.0, 1.0, 2.0]);
    assert_eq!(s.report.eps_ladder, [1e-2, 1e-4]);
    assert_eq!(s.thetas.as_deref(), Some(&[0.5][..]));
    assert_eq!(s.output_dir.as_deref(), Some(Path::new("results")));
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut count = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "ini") {
            parse_scenario(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            count += 1;
        }
    }
    assert!(count >= 4);
}
