mod common;

use std::fs;
use std::process::{Command, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use common::*;
use mfish_core::channel::GaussianChannelParams;
use mfish_core::codebook::hamming_distance;
use mfish_core::io::{ChannelFile, NamedCodes};
use mfish_core::PriorDist;
use tempfile::tempdir;

fn gaussian_file() -> ChannelFile {
    let bac = hetero_bac();
    let w1 = vec![0.25; 16];
    let g = GaussianChannelParams::calibrated(0.0, 0.5, &bac.p01, &bac.p10, &w1).unwrap();
    ChannelFile::from_gaussian(&g)
}

#[test]
fn gen_codebook_writes_140_weight_4_rows() {
    let dir = tempdir().unwrap();
    let stdout = run_ok(dir.path(), &["gen-codebook", "--out", "cb.tsv"]);
    assert!(stdout.contains("140 codewords"), "{stdout}");
    assert!(stdout.contains("minimum distance 4"), "{stdout}");
    let codes = NamedCodes::read(&dir.path().join("cb.tsv")).unwrap();
    assert_eq!(codes.rows.len(), 140);
    let words: Vec<_> = codes.rows.iter().map(|r| r.1).collect();
    assert!(words.iter().all(|w| w.weight() == 4));
    for (i, a) in words.iter().enumerate() {
        for b in &words[i + 1..] {
            assert!(hamming_distance(*a, *b) >= 4);
        }
    }
    assert!(dir.path().join("run_manifest.json").exists());
}

#[test]
fn gen_codebook_rerun_is_byte_identical() {
    let dir = tempdir().unwrap();
    run_ok(dir.path(), &["gen-codebook", "--out", "a.tsv"]);
    run_ok(dir.path(), &["gen-codebook", "--out", "b.tsv"]);
    assert_eq!(
        fs::read(dir.path().join("a.tsv")).unwrap(),
        fs::read(dir.path().join("b.tsv")).unwrap()
    );
}

#[test]
fn unwritable_path_exits_2() {
    let dir = tempdir().unwrap();
    let out = run(dir.path(), &["gen-codebook", "--out", "missing/dir/cb.tsv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_on_empty_file_exits_2_naming_it() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = run(dir.path(), &["fit", "--intensities", "empty.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty.csv"));
}

#[test]
fn fit_reports_row_and_column_of_bad_values() {
    let dir = tempdir().unwrap();
    fs::write(dir.path().join("bad.csv"), "r1,r2\n1.0,2.0\n1.5,abc\n").unwrap();
    let out = run(dir.path(), &["fit", "--intensities", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("bad.csv") && err.contains("line 3") && err.contains("column 2"),
        "{err}"
    );
}

#[test]
fn fit_on_constant_column_is_a_numerical_failure() {
    let dir = tempdir().unwrap();
    let mut text = String::new();
    for i in 0..50 {
        text.push_str(&format!("{},1.0\n", 1.0 + (i % 7) as f64));
    }
    fs::write(dir.path().join("flat.csv"), text).unwrap();
    let out = run(dir.path(), &["fit", "--intensities", "flat.csv"]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_then_fit_recovers_parameters_and_reruns_identically() {
    let dir = tempdir().unwrap();
    let cb = mhd4();
    write_codebook(dir.path(), &cb);
    write_prior(dir.path(), "prior.csv", &PriorDist::uniform(140).unwrap());
    let truth = gaussian_file();
    write_channel(dir.path(), "truth.json", &truth);
    let sim = [
        "--seed",
        "11",
        "simulate",
        "--codebook",
        "codebook.tsv",
        "--prior",
        "prior.csv",
        "--params",
        "truth.json",
        "--n",
        "40000",
        "--out",
        "sim.csv",
    ];
    run_ok(dir.path(), &sim);
    run_ok(
        dir.path(),
        &["fit", "--intensities", "sim.csv", "--out", "a.json"],
    );
    run_ok(
        dir.path(),
        &["fit", "--intensities", "sim.csv", "--out", "b.json"],
    );
    let a = fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.json")).unwrap());
    let fitted = ChannelFile::read(&dir.path().join("a.json")).unwrap();
    let (tg, fg) = (
        truth.gaussian().unwrap().unwrap(),
        fitted.gaussian().unwrap().unwrap(),
    );
    for l in 0..16 {
        assert!((tg.mu1[l] - fg.mu1[l]).abs() < 0.05, "round {l}");
        assert!((tg.mu0[l] - fg.mu0[l]).abs() < 0.05, "round {l}");
    }
    let w1 = fitted.w1.unwrap();
    assert!(w1.iter().all(|w| (w - 0.25).abs() < 0.02), "{w1:?}");
    let diag = fs::read_to_string(dir.path().join("fit_diagnostics.csv")).unwrap();
    assert_eq!(diag.lines().count(), 1 + 16 * 2 * 99);
}

#[test]
fn simulate_is_seeded_and_matches_the_prior() {
    let dir = tempdir().unwrap();
    let cb = mhd4();
    write_codebook(dir.path(), &cb);
    let prior = PriorDist::from_probs(vec![0.5, 0.25, 0.125, 0.0625, 0.0625]).unwrap();
    write_prior(dir.path(), "prior.csv", &prior);
    write_channel(dir.path(), "g.json", &gaussian_file());
    let base = [
        "simulate",
        "--codebook",
        "codebook.tsv",
        "--prior",
        "prior.csv",
        "--params",
        "g.json",
        "--n",
        "20000",
    ];
    let with = |seed: &str, out: &str| {
        let mut v: Vec<&str> = vec!["--seed", seed];
        v.extend_from_slice(&base);
        v.extend_from_slice(&["--out", out]);
        run_ok(dir.path(), &v);
        fs::read_to_string(dir.path().join(out)).unwrap()
    };
    let a = with("4", "a.csv");
    assert_eq!(a, with("4", "b.csv"));
    assert_ne!(a, with("5", "c.csv"));
    let rows = csv_rows(&a);
    assert_eq!(rows[0].last().unwrap(), "truth");
    assert_eq!(rows.len() - 1, 20000);
    let mut counts = [0usize; 5];
    for r in &rows[1..] {
        counts[r.last().unwrap().parse::<usize>().unwrap()] += 1;
    }
    for (g, &p) in prior.probs().iter().enumerate() {
        let n = 20000.0;
        let sd = (n * p * (1.0 - p)).sqrt();
        assert!(
            (counts[g] as f64 - n * p).abs() < 3.0 * sd,
            "molecule {g}: {}",
            counts[g]
        );
    }
}

#[test]
fn default_simulation_size_is_250k_rows() {
    let dir = tempdir().unwrap();
    write_codebook(dir.path(), &mhd4());
    write_prior(dir.path(), "prior.csv", &zipf_prior(20));
    write_channel(dir.path(), "g.json", &gaussian_file());
    run_ok(
        dir.path(),
        &[
            "simulate",
            "--codebook",
            "codebook.tsv",
            "--prior",
            "prior.csv",
            "--params",
            "g.json",
        ],
    );
    let text = fs::read_to_string(dir.path().join("intensities.csv")).unwrap();
    assert_eq!(text.lines().count(), 250_001);
}

fn decode_fixture() -> tempfile::TempDir {
    let dir = tempdir().unwrap();
    write_codebook(dir.path(), &mhd4());
    write_prior(dir.path(), "uniform.csv", &PriorDist::uniform(140).unwrap());
    write_prior(dir.path(), "zipf.csv", &zipf_prior(140));
    write_channel(dir.path(), "bac.json", &bac_file(&hetero_bac()));
    let bits: String = (0..300u32)
        .map(|i| format!("{:016b}\n", i.wrapping_mul(2654435761) >> 16))
        .collect();
    fs::write(dir.path().join("bits.txt"), bits).unwrap();
    dir
}

const DECODE: [&str; 7] = [
    "decode",
    "--codebook",
    "codebook.tsv",
    "--params",
    "bac.json",
    "--bits",
    "bits.txt",
];

fn decode_args<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = DECODE.to_vec();
    v.extend_from_slice(extra);
    v
}

#[test]
fn moffitt_acceptance_region_is_9100() {
    let dir = decode_fixture();
    let out = run_ok(
        dir.path(),
        &decode_args(&["--prior", "zipf.csv", "--kind", "moffitt", "--out-dir", "m"]),
    );
    assert!(out.contains("acceptance region: 9100 of 65536"), "{out}");
}

#[test]
fn map_with_q_runs_the_reject_pipeline() {
    let dir = decode_fixture();
    run_ok(
        dir.path(),
        &decode_args(&[
            "--prior",
            "zipf.csv",
            "--kind",
            "map",
            "--q",
            "0.5",
            "--out-dir",
            "q",
        ]),
    );
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("q/metrics.json")).unwrap())
            .unwrap();
    assert_eq!(m["analytic"]["decoder"], "mapq:0.5");
    assert!(m["analytic"]["rejection_rate"].as_f64().unwrap() > 0.0);
    let decoded = fs::read_to_string(dir.path().join("q/decoded.csv")).unwrap();
    for row in csv_rows(&decoded).iter().skip(1) {
        let post: f64 = row[2].parse().unwrap();
        assert_eq!(row[3] == "true", post < 0.5, "{row:?}");
    }
}

#[test]
fn mle_equals_map_under_a_uniform_prior() {
    let dir = decode_fixture();
    run_ok(
        dir.path(),
        &decode_args(&[
            "--prior",
            "uniform.csv",
            "--kind",
            "mle",
            "--out-dir",
            "mle",
        ]),
    );
    run_ok(
        dir.path(),
        &decode_args(&[
            "--prior",
            "uniform.csv",
            "--kind",
            "map",
            "--out-dir",
            "map",
        ]),
    );
    let read = |d: &str, f: &str| fs::read_to_string(dir.path().join(d).join(f)).unwrap();
    assert_eq!(read("mle", "decoded.csv"), read("map", "decoded.csv"));
    let mut a: serde_json::Value = serde_json::from_str(&read("mle", "metrics.json")).unwrap();
    let mut b: serde_json::Value = serde_json::from_str(&read("map", "metrics.json")).unwrap();
    a["analytic"]["decoder"] = "".into();
    b["analytic"]["decoder"] = "".into();
    for (k, v) in a["analytic"].as_object().unwrap() {
        assert_eq!(v, &b["analytic"][k], "{k}");
    }
    assert_eq!(a, b);
}

#[test]
fn unknown_decoder_kind_exits_2() {
    let dir = decode_fixture();
    let out = run(
        dir.path(),
        &decode_args(&["--prior", "zipf.csv", "--kind", "viterbi"]),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("viterbi"));
}

#[test]
fn dimension_mismatch_exits_2() {
    let dir = decode_fixture();
    fs::write(dir.path().join("short.txt"), "0101\n").unwrap();
    let out = run(
        dir.path(),
        &[
            "decode",
            "--codebook",
            "codebook.tsv",
            "--params",
            "bac.json",
            "--prior",
            "zipf.csv",
            "--bits",
            "short.txt",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_file_supplies_options_and_flags_win() {
    let dir = decode_fixture();
    let cfg = serde_json::json!({
        "codebook": "codebook.tsv", "params": "bac.json", "prior": "zipf.csv",
        "kind": "mle", "out_dir": "from_config"
    });
    fs::write(dir.path().join("cfg.json"), cfg.to_string()).unwrap();
    let out = run_ok(
        dir.path(),
        &["--config", "cfg.json", "decode", "--kind", "moffitt"],
    );
    assert!(out.contains("9100"), "{out}");
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("from_config/run_manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["config"]["kind"], "moffitt");
    assert_eq!(manifest["subcommand"], "decode");
    assert_eq!(
        manifest["inputs"]["prior"]["sha256"]
            .as_str()
            .unwrap()
            .len(),
        64
    );
}

#[test]
fn manifest_for_another_subcommand_is_refused() {
    let dir = tempdir().unwrap();
    run_ok(dir.path(), &["gen-codebook", "--out", "cb.tsv"]);
    let out = run(dir.path(), &["--config", "run_manifest.json", "fit"]);
    assert_eq!(out.status.code(), Some(2));
}

fn sweep_fixture() -> tempfile::TempDir {
    let dir = tempdir().unwrap();
    write_codebook(dir.path(), &mhd4());
    write_channel(dir.path(), "bac.json", &bac_file(&hetero_bac()));
    dir
}

#[test]
fn sweep_writes_one_row_per_alpha_and_decoder() {
    let dir = sweep_fixture();
    let args = [
        "sweep",
        "--codebook",
        "codebook.tsv",
        "--params",
        "bac.json",
        "--alpha-grid",
        "0.01,1,100",
        "--draws",
        "2",
        "--decoders",
        "map,mle,moffitt",
        "--molecules",
        "60",
    ];
    run_ok(dir.path(), &args);
    let rows = csv_rows(&fs::read_to_string(dir.path().join("sweep_out/sweep.csv")).unwrap());
    assert_eq!(rows.len() - 1, 3 * 3);
    assert_eq!(rows[1][0], "0.01");
    assert_eq!(rows[1][1], "map");
    let fdr = fs::read_to_string(dir.path().join("sweep_out/sweep_fdr.csv")).unwrap();
    assert_eq!(fdr.lines().count(), 1 + 3 * 2 * 3 * 60);
}

#[test]
fn sweep_is_deterministic_given_seed() {
    let dir = sweep_fixture();
    let go = |seed: &str, out: &str| {
        let args = [
            "--seed",
            seed,
            "sweep",
            "--codebook",
            "codebook.tsv",
            "--params",
            "bac.json",
            "--alpha-grid",
            "0.1,10",
            "--draws",
            "3",
            "--molecules",
            "40",
            "--out-dir",
            out,
        ];
        run_ok(dir.path(), &args);
        fs::read(dir.path().join(out).join("sweep.csv")).unwrap()
    };
    let a = go("7", "a");
    assert_eq!(a, go("7", "b"));
    assert_ne!(a, go("8", "c"));
}

fn optimize_fixture() -> tempfile::TempDir {
    let dir = tempdir().unwrap();
    write_codebook(dir.path(), &mhd4());
    write_channel(dir.path(), "bac.json", &bac_file(&hetero_bac()));
    write_prior(dir.path(), "prior.csv", &zipf_prior(40));
    dir
}

const OPTIMIZE: [&str; 7] = [
    "optimize",
    "--codebook",
    "codebook.tsv",
    "--prior",
    "prior.csv",
    "--params",
    "bac.json",
];

#[test]
fn optimize_reports_a_monotone_best_fdr() {
    let dir = optimize_fixture();
    let mut args = OPTIMIZE.to_vec();
    args.extend_from_slice(&["--generations", "8", "--population", "8"]);
    run_ok(dir.path(), &args);
    let rows =
        csv_rows(&fs::read_to_string(dir.path().join("optimize_out/evolution.csv")).unwrap());
    assert_eq!(rows[0], ["generation", "best_fdr", "mean_fdr", "mean_chi"]);
    assert_eq!(rows.len(), 1 + 9);
    let best: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]), "{best:?}");
    let tsv = NamedCodes::read(&dir.path().join("optimize_out/best_assignment.tsv")).unwrap();
    assert_eq!(tsv.rows.len(), 40);
    assert_eq!(tsv.rows[0].0, "gene000");
}

#[test]
fn interrupted_optimize_leaves_complete_rows() {
    let dir = optimize_fixture();
    let mut args = OPTIMIZE.to_vec();
    args.extend_from_slice(&["--generations", "100000", "--population", "4"]);
    let mut child = Command::new(bin())
        .current_dir(dir.path())
        .args(&args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let report = dir.path().join("optimize_out/evolution.csv");
    let start = Instant::now();
    loop {
        let lines = fs::read_to_string(&report)
            .map(|t| t.lines().count())
            .unwrap_or(0);
        if lines >= 4 || start.elapsed() > Duration::from_secs(120) {
            break;
        }
        sleep(Duration::from_millis(20));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.ends_with('\n'));
    let rows = csv_rows(&text);
    assert!(
        rows.len() >= 4,
        "only {} lines after two minutes",
        rows.len()
    );
    for (i, r) in rows[1..].iter().enumerate() {
        assert_eq!(r.len(), 4);
        assert_eq!(r[0].parse::<usize>().unwrap(), i);
    }
}
