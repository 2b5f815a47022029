//! Fixtures shared by the CLI and acceptance tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfish_core::codebook::generate_mhd4;
use mfish_core::io::{ChannelFile, NamedCodes, NamedPrior};
use mfish_core::{BacParams, Codebook, PriorDist};

pub const MEAN_P01: f64 = 0.046;
pub const MEAN_P10: f64 = 0.102;

// Each profile sums to 16, so the round means are exactly MEAN_P01 and MEAN_P10.
const P01_PROFILE: [f64; 16] = [
    1.10, 0.85, 1.20, 0.95, 0.78, 1.05, 1.22, 0.90, 1.00, 0.82, 1.15, 0.97, 1.08, 0.88, 1.12, 0.93,
];
const P10_PROFILE: [f64; 16] = [
    0.90, 1.18, 0.84, 1.06, 1.24, 0.96, 0.80, 1.10, 0.93, 1.14, 0.87, 1.02, 0.79, 1.20, 0.98, 0.99,
];

/// Round-dependent channel with the stated mean crossover rates. Unequal
/// rounds make exact likelihood ties between codes a null event.
pub fn hetero_bac() -> BacParams {
    BacParams::new(
        P01_PROFILE.iter().map(|m| m * MEAN_P01).collect(),
        P10_PROFILE.iter().map(|m| m * MEAN_P10).collect(),
    )
    .unwrap()
}

pub fn uniform_bac() -> BacParams {
    BacParams::uniform(16, MEAN_P01, MEAN_P10).unwrap()
}

pub fn mhd4() -> Codebook {
    generate_mhd4()
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mfish")
}

/// Runs the binary in `dir`.
pub fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "mfish {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn names(g: usize) -> Vec<String> {
    (0..g).map(|i| format!("gene{i:03}")).collect()
}

pub fn write_codebook(dir: &Path, cb: &Codebook) -> PathBuf {
    let p = dir.join("codebook.tsv");
    std::fs::write(&p, NamedCodes::numbered(cb).to_tsv()).unwrap();
    p
}

pub fn write_prior(dir: &Path, file: &str, prior: &PriorDist) -> PathBuf {
    let p = dir.join(file);
    let named = NamedPrior {
        names: names(prior.len()),
        prior: prior.clone(),
    };
    std::fs::write(&p, named.to_csv()).unwrap();
    p
}

pub fn write_channel(dir: &Path, file: &str, channel: &ChannelFile) -> PathBuf {
    let p = dir.join(file);
    std::fs::write(&p, channel.to_json()).unwrap();
    p
}

pub fn bac_file(bac: &BacParams) -> ChannelFile {
    ChannelFile {
        p01: Some(bac.p01.clone()),
        p10: Some(bac.p10.clone()),
        ..ChannelFile::default()
    }
}

/// Skewed prior over `g` molecules, proportional to `1 / (i + 1)^2`.
pub fn zipf_prior(g: usize) -> PriorDist {
    let w: Vec<f64> = (0..g).map(|i| 1.0 / ((i + 1) as f64).powi(2)).collect();
    let s: f64 = w.iter().sum();
    PriorDist::from_probs(w.iter().map(|x| x / s).collect()).unwrap()
}

pub fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

pub fn describe(values: &[f64]) -> String {
    let mut s = String::new();
    for v in values {
        let _ = write!(s, "{v:.4} ");
    }
    s.trim_end().to_string()
}
