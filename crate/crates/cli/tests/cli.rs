use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn tonelli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tonelli"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(cmd: &str, scenario: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    tonelli(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

const MINIMAL: &str = "[problem]\na = 0\nb = 1\nA = 0\nB = 1\n[lagrangian]\nL = v^2\n[obstacles]\nf = -10\ng = 10\n[solver]\nn = 51\n";

#[test]
fn solve_free_line() {
    let tmp = TempDir::new().unwrap();
    let o = run("solve", &scenario("line.ini"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&tmp.path().join("solution.csv"));
    assert_eq!(header, ["x", "u", "f", "g", "slope"]);
    assert_eq!(rows.len(), 201);
    for r in &rows {
        let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
        assert!((v[1] - v[0]).abs() < 1e-12);
        assert!((v[4] - 1.0).abs() < 1e-9);
        assert_eq!((v[2], v[3]), (-10.0, 10.0));
    }
    let energy = fs::read_to_string(tmp.path().join("energy.txt")).unwrap();
    assert!(energy.contains("converged = true"));
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("scenario_sha256 = "));
    assert!(manifest.contains(concat!("version = ", env!("CARGO_PKG_VERSION"))));
}

#[test]
fn verify_taut_string_has_no_a3_violations() {
    let tmp = TempDir::new().unwrap();
    let o = run("verify", &scenario("taut_string.ini"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&tmp.path().join("report.csv"));
    assert_eq!(header, ["check", "status", "value", "count", "detail"]);
    let a3 = rows.iter().find(|r| r[0] == "A3").unwrap();
    assert_eq!((a3[1].as_str(), a3[3].as_str()), ("pass", "0"));
    let text = fs::read_to_string(tmp.path().join("report.txt")).unwrap();
    assert!(text.contains("violations: none"));
}

#[test]
fn perturbed_minimizer_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        "verify",
        &scenario("taut_string.ini"),
        tmp.path(),
        &["--inject-perturbation", "5e-3"],
    );
    assert_eq!(code(&o), 4);
    let (_, rows) = read_csv(&tmp.path().join("report.csv"));
    let a3 = rows.iter().find(|r| r[0] == "A3").unwrap();
    assert_eq!(a3[1], "fail");
    assert!(a3[3].parse::<usize>().unwrap() > 0);
    let manifest = fs::read_to_string(tmp.path().join("manifest.txt")).unwrap();
    assert!(manifest.contains("inject_perturbation"));
}

#[test]
fn outputs_are_deterministic() {
    let (a, b, c) = (
        TempDir::new().unwrap(),
        TempDir::new().unwrap(),
        TempDir::new().unwrap(),
    );
    let s = scenario("holder.ini");
    for d in [&a, &b] {
        assert_eq!(code(&run("verify", &s, d.path(), &["--seed", "3"])), 0);
    }
    assert_eq!(code(&run("verify", &s, c.path(), &["--seed", "4"])), 0);
    for f in ["report.csv", "report.txt", "manifest.txt"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
    let m = fs::read_to_string(c.path().join("manifest.txt")).unwrap();
    assert!(m.contains("seed = 4"));
}

#[test]
fn theory_tables() {
    let tmp = TempDir::new().unwrap();
    let o = run("theory", &scenario("holder.ini"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&tmp.path().join("constants.csv"));
    assert_eq!(header, ["name", "k", "value"]);
    let get = |name: &str| -> f64 {
        rows.iter().find(|r| r[0] == name).unwrap()[2]
            .parse()
            .unwrap()
    };
    let (n, d0) = (get("N"), get("delta0"));
    assert!(n > 0.0 && d0 > 0.0);
    assert!(d0 * d0 + n * d0 <= 1.0);
    assert_eq!(rows.iter().filter(|r| r[0] == "c_k").count(), 8);

    let (header, rows) = read_csv(&tmp.path().join("pipeline.csv"));
    assert_eq!(
        header,
        [
            "k",
            "eps",
            "delta1",
            "delta2",
            "big_delta",
            "delta",
            "delta_raw"
        ]
    );
    assert_eq!(rows.len(), 400);
    for r in rows.iter().filter(|r| r[1].parse::<f64>().unwrap() == 0.0) {
        assert_eq!(r[5].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn dini_table() {
    let tmp = TempDir::new().unwrap();
    let o = run("dini", &scenario("holder.ini"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&tmp.path().join("dini.csv"));
    assert_eq!(header, ["h", "theta", "eps", "value", "verdict"]);
    // four functions, two exponents, twelve ladder values
    assert_eq!(rows.len(), 4 * 2 * 12);
    assert!(rows.iter().all(|r| r[4] == "pass"));
}

#[test]
fn plot_writes_svg() {
    let tmp = TempDir::new().unwrap();
    let o = run("plot", &scenario("taut_string.ini"), tmp.path(), &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["solution.svg", "slope.svg", "delta.svg", "big_delta.svg"] {
        let svg = fs::read_to_string(tmp.path().join(f)).unwrap();
        assert!(
            svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"),
            "{f}"
        );
    }
}

#[test]
fn sweep_points_get_their_own_directories() {
    let tmp = TempDir::new().unwrap();
    let o = run(
        "sweep",
        &scenario("sweep.ini"),
        tmp.path(),
        &["--jobs", "2"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (_, rows) = read_csv(&tmp.path().join("sweep.csv"));
    assert_eq!(rows.len(), 6);
    for (i, r) in rows.iter().enumerate() {
        let dir = tmp.path().join(format!("point_{i:03}"));
        assert_eq!(r[2], "ok");
        assert!(dir.join("report.csv").exists());
        let m = fs::read_to_string(dir.join("manifest.txt")).unwrap();
        for kv in r[1].split(';') {
            let (k, v) = kv.split_once('=').unwrap();
            assert!(m.contains(&format!("override {k} = {v}")));
        }
    }
    let tmp2 = TempDir::new().unwrap();
    let s = write(&tmp2, "s.ini", MINIMAL);
    assert_eq!(code(&run("sweep", &s, tmp2.path(), &[])), 2);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&tonelli(&["--help"])), 0);
    assert_eq!(code(&tonelli(&["--version"])), 0);
    assert_eq!(code(&tonelli(&[])), 1);
    assert_eq!(code(&tonelli(&["frobnicate"])), 1);
    assert_eq!(code(&tonelli(&["solve"])), 1);
    let missing = tmp.path().join("missing.ini");
    assert_eq!(code(&run("solve", &missing, &out, &[])), 1);

    let ok = write(&tmp, "ok.ini", MINIMAL);
    assert_eq!(code(&run("solve", &ok, &out, &[])), 0);
    assert_eq!(code(&run("solve", &ok, &out, &["--jobs", "0"])), 1);

    let no_b = write(&tmp, "no_b.ini", &MINIMAL.replace("B = 1\n", ""));
    let o = run("solve", &no_b, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("`B`"));

    let bad_var = write(&tmp, "t.ini", &MINIMAL.replace("L = v^2", "L = v^2 + t"));
    let o = run("verify", &bad_var, &out, &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 7"));

    let capped = fs::read_to_string(scenario("taut_string.ini"))
        .unwrap()
        .replace("n = 401", "n = 401\nmax_iter = 2");
    let capped = write(&tmp, "capped.ini", &capped);
    let o = run("solve", &capped, &out, &[]);
    assert_eq!(code(&o), 3);
    // the best iterate is still written
    assert!(fs::read_to_string(out.join("energy.txt"))
        .unwrap()
        .contains("converged = false"));
}
