//! CSV tables and the run manifest.

use std::fs;
use std::io;
use std::path::Path;

use sha2::{Digest, Sha256};

/// 17 significant digits; `inf`, `-inf` and `nan` spelled out.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

pub fn write_csv<I>(path: &Path, header: &[&str], rows: I) -> io::Result<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub struct Manifest<'a> {
    pub command: &'a str,
    pub scenario_path: &'a Path,
    pub scenario_text: &'a str,
    pub seed: u64,
    pub overrides: &'a [(String, String)],
    pub extra: Vec<(String, String)>,
}

impl Manifest<'_> {
    pub fn write(&self, dir: &Path) -> io::Result<()> {
        let mut s = String::new();
        s.push_str(&format!("version = {}\n", env!("CARGO_PKG_VERSION")));
        s.push_str(&format!("command = {}\n", self.command));
        s.push_str(&format!("scenario = {}\n", self.scenario_path.display()));
        s.push_str(&format!(
            "scenario_sha256 = {}\n",
            sha256_hex(self.scenario_text.as_bytes())
        ));
        s.push_str(&format!("seed = {}\n", self.seed));
        for (k, v) in self.overrides {
            s.push_str(&format!("override {k} = {v}\n"));
        }
        for (k, v) in &self.extra {
            s.push_str(&format!("{k} = {v}\n"));
        }
        fs::write(dir.join("manifest.txt"), s)
    }
}
