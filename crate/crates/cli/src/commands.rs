//! Subcommand bodies. Each resolves its options, runs, writes its outputs and
//! finally a manifest next to them.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use mfish_core::channel::{
    bac_from_gaussian, quantization_thresholds, quantize, simulate as simulate_table,
    thresholds_for_weights,
};
use mfish_core::codebook::generate_mhd4;
use mfish_core::decoder::{
    build_voronoi, confusion, decode_soft, decode_table, dirichlet_sweep, metrics,
    posterior_from_table, AssignmentPolicy, Decision, MismatchMeasure, SweepConfig,
};
use mfish_core::gmmfit::qq_data;
use mfish_core::io::{self as fio, ChannelFile, NamedCodes, NamedPrior};
use mfish_core::{
    assignopt, AssignmentMap, BacParams, Codebook, DecoderKind, DecoderSpec, EmConfig, EvoConfig,
    LikelihoodTable, SwapPool,
};
use serde::Serialize;
use serde_json::json;

use crate::config::write_manifest;
use crate::{DecodeArgs, FitArgs, GenCodebookArgs, OptimizeArgs, SimulateArgs, SweepArgs};

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("{}: cannot write", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}: cannot create directory", dir.display()))
}

/// Directory that holds a single-file output and its manifest.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn required(value: &Option<PathBuf>, flag: &str) -> Result<PathBuf> {
    value
        .clone()
        .ok_or_else(|| anyhow!("missing required option --{flag}"))
}

fn read_codebook(path: &Path) -> Result<(NamedCodes, Codebook)> {
    let codes = NamedCodes::read(path)?;
    let cb = codes.codebook()?;
    Ok((codes, cb))
}

/// Molecules take codebook rows in order unless an assignment file is given.
fn read_assignment(
    codes: &NamedCodes,
    cb: &Codebook,
    molecules: &[String],
    path: Option<&Path>,
) -> Result<AssignmentMap> {
    match path {
        Some(p) => Ok(NamedCodes::read(p)?.assignment_for(cb, molecules, p)?),
        None => {
            if molecules.len() > cb.len() {
                bail!(
                    "{} molecules but only {} codes in the codebook",
                    molecules.len(),
                    codes.rows.len()
                );
            }
            Ok(AssignmentMap::identity(molecules.len(), cb.len())?)
        }
    }
}

/// BAC for runs without a particular prior: explicit crossover rates, or the
/// Gaussian channel quantized at the fitted round weights.
fn prior_free_bac(file: &ChannelFile, path: &Path) -> Result<BacParams> {
    if let Some(bac) = file.bac()? {
        return Ok(bac);
    }
    match (file.gaussian()?, &file.w1) {
        (Some(g), Some(w1)) => Ok(bac_from_gaussian(&g, &thresholds_for_weights(&g, w1)?)?),
        _ => bail!(
            "{}: needs p01/p10, or Gaussian parameters together with w1",
            path.display()
        ),
    }
}

fn check_rounds(bac: &BacParams, cb: &Codebook, path: &Path) -> Result<()> {
    if bac.rounds() != cb.length() {
        bail!(
            "{}: channel has {} rounds but codes have {} bits",
            path.display(),
            bac.rounds(),
            cb.length()
        );
    }
    Ok(())
}

// gen-codebook

pub fn gen_codebook(mut args: GenCodebookArgs) -> Result<()> {
    let out = args
        .out
        .get_or_insert_with(|| "codebook.tsv".into())
        .clone();
    let cb = generate_mhd4();
    write_file(&out, &NamedCodes::numbered(&cb).to_tsv())?;
    println!(
        "{} codewords, length {}, weight {}, minimum distance {}",
        cb.len(),
        cb.length(),
        cb.weight().map_or("mixed".into(), |w| w.to_string()),
        cb.min_distance()
    );
    write_manifest(&parent_dir(&out), "gen-codebook", &args, &[])?;
    Ok(())
}

// fit

pub fn fit(mut args: FitArgs) -> Result<()> {
    let input = required(&args.intensities, "intensities")?;
    let out = args
        .out
        .get_or_insert_with(|| "channel.json".into())
        .clone();
    let diagnostics = args
        .diagnostics
        .get_or_insert_with(|| parent_dir(&out).join("fit_diagnostics.csv"))
        .clone();
    let defaults = EmConfig::default();
    let cfg = EmConfig {
        tol: *args.tol.get_or_insert(defaults.tol),
        max_iter: *args.max_iter.get_or_insert(defaults.max_iter),
        sigma_floor: *args.sigma_floor.get_or_insert(defaults.sigma_floor),
        restarts: *args.restarts.get_or_insert(defaults.restarts),
        seed: *args.seed.get_or_insert(0),
        separation_floor: *args
            .separation_floor
            .get_or_insert(defaults.separation_floor),
    };
    let grid = *args.qq_grid.get_or_insert(99);

    let table = fio::read_intensities(&input)?;
    let fit = mfish_core::gmmfit::fit_all(&table, &cfg)?;
    for (l, col) in fit.columns.iter().enumerate() {
        if !col.converged {
            eprintln!(
                "warning: round {}: EM stopped after {} iterations",
                l + 1,
                col.iterations
            );
        }
        if fit.poorly_separated[l] {
            eprintln!(
                "warning: round {}: component means differ by {} only",
                l + 1,
                col.mu1 - col.mu0
            );
        }
    }
    let thresholds = thresholds_for_weights(&fit.params, &fit.w1)?;
    let bac = bac_from_gaussian(&fit.params, &thresholds)?;
    let file = ChannelFile {
        w1: Some(fit.w1.clone()),
        theta: Some(thresholds),
        p01: Some(bac.p01),
        p10: Some(bac.p10),
        ..ChannelFile::from_gaussian(&fit.params)
    };
    write_file(&out, &file.to_json())?;

    let mut diag = format!("{}\n", fio::DIAGNOSTICS_HEADER);
    for (l, col) in fit.columns.iter().enumerate() {
        let qq = qq_data(&table.column(l), col, grid)?;
        if let Some(c) = qq.iter().find(|c| c.empty) {
            eprintln!(
                "warning: round {}: no observation falls in component {}",
                l + 1,
                c.component
            );
        }
        diag.push_str(&fio::diagnostics_rows(l + 1, &qq));
    }
    write_file(&diagnostics, &diag)?;
    println!(
        "fitted {} rounds from {} rows",
        table.rounds(),
        table.rows()
    );
    write_manifest(&parent_dir(&out), "fit", &args, &[("intensities", &input)])?;
    Ok(())
}

// decode

fn resolve_kind(kind: &str, q: Option<f64>) -> Result<DecoderKind> {
    let kind: DecoderKind = kind.parse()?;
    match (kind, q) {
        (k, None) => Ok(k),
        (DecoderKind::Map, Some(q)) => Ok(DecoderKind::MapQ(q).to_string().parse()?),
        (k, Some(_)) => bail!("--q applies only to --kind map, not {k}"),
    }
}

#[derive(Serialize)]
struct AnalyticReport<'a> {
    decoder: String,
    molecules: &'a [String],
    accepted_sequences: usize,
    total_sequences: u64,
    tpr: &'a [f64],
    fdr: &'a [f64],
    never_decoded: &'a [bool],
    mean_tpr: f64,
    mean_fdr: f64,
    weighted_mismatch: f64,
    uniform_mismatch: f64,
    uniform_misdecode: f64,
    rejection_rate: f64,
    /// Row-major `conditional[g][t] = Pr(decode g | truth t)`.
    conditional: Vec<&'a [f64]>,
    joint: Vec<&'a [f64]>,
    rejection: &'a [f64],
}

fn empirical_report(
    decoded: &[Option<usize>],
    truth: Option<&[usize]>,
    g_count: usize,
) -> serde_json::Value {
    let mut per_molecule = vec![0u64; g_count];
    let mut rejected = 0u64;
    for d in decoded {
        match d {
            Some(g) => per_molecule[*g] += 1,
            None => rejected += 1,
        }
    }
    let mut report = json!({
        "rows": decoded.len(),
        "decoded_counts": per_molecule,
        "rejected": rejected,
    });
    if let Some(truth) = truth {
        // counts[g][t]; the extra last row counts rejections.
        let mut counts = vec![vec![0u64; g_count]; g_count + 1];
        for (d, &t) in decoded.iter().zip(truth) {
            counts[d.unwrap_or(g_count)][t] += 1;
        }
        let mut false_discoveries = vec![0u64; g_count];
        let mut correct = vec![0u64; g_count];
        for (d, &t) in decoded.iter().zip(truth) {
            if let Some(g) = *d {
                if g == t {
                    correct[g] += 1;
                } else {
                    false_discoveries[g] += 1;
                }
            }
        }
        let fdr: Vec<Option<f64>> = (0..g_count)
            .map(|g| {
                let n = per_molecule[g];
                (n > 0).then(|| false_discoveries[g] as f64 / n as f64)
            })
            .collect();
        let mut truth_counts = vec![0u64; g_count];
        for &t in truth {
            truth_counts[t] += 1;
        }
        let tpr: Vec<Option<f64>> = (0..g_count)
            .map(|t| (truth_counts[t] > 0).then(|| correct[t] as f64 / truth_counts[t] as f64))
            .collect();
        report["confusion_counts"] = json!(counts);
        report["truth_counts"] = json!(truth_counts);
        report["tpr"] = json!(tpr);
        report["fdr"] = json!(fdr);
    }
    report
}

pub fn decode(mut args: DecodeArgs) -> Result<()> {
    let cb_path = required(&args.codebook, "codebook")?;
    let prior_path = required(&args.prior, "prior")?;
    let params_path = required(&args.params, "params")?;
    let kind_name = args.kind.get_or_insert_with(|| "map".into()).clone();
    let soft = *args.soft.get_or_insert(false);
    let out_dir = args
        .out_dir
        .get_or_insert_with(|| "decode_out".into())
        .clone();
    let kind = resolve_kind(&kind_name, args.q)?;

    let (codes, cb) = read_codebook(&cb_path)?;
    let named = NamedPrior::read(&prior_path)?;
    let assignment = read_assignment(&codes, &cb, &named.names, args.assignment.as_deref())?;
    let channel = ChannelFile::read(&params_path)?;
    let gaussian = channel.gaussian()?;
    let bac = match (channel.bac()?, &gaussian) {
        (Some(bac), _) => bac,
        (None, Some(g)) => {
            let theta = quantization_thresholds(g, &cb, &assignment, &named.prior)?;
            bac_from_gaussian(g, &theta)?
        }
        (None, None) => bail!("{}: no channel parameters", params_path.display()),
    };
    check_rounds(&bac, &cb, &params_path)?;

    let table = LikelihoodTable::build(&cb, &bac)?;
    let spec = DecoderSpec::new(kind, named.prior.clone())?;
    let voronoi = build_voronoi(&spec, &cb, &assignment, &table)?;
    let total = 1u64 << cb.length();
    println!(
        "acceptance region: {} of {} sequences",
        voronoi.accepted_count(),
        total
    );

    let conf = confusion(&voronoi, &assignment, &named.prior, &table)?;
    let m = metrics(&conf, &named.prior)?;
    let g_count = assignment.molecules();
    let analytic = AnalyticReport {
        decoder: kind.to_string(),
        molecules: &named.names,
        accepted_sequences: voronoi.accepted_count(),
        total_sequences: total,
        tpr: &m.tpr,
        fdr: &m.fdr,
        never_decoded: &m.never_decoded,
        mean_tpr: m.mean_tpr,
        mean_fdr: m.mean_fdr,
        weighted_mismatch: m.weighted_mismatch,
        uniform_mismatch: m.uniform_mismatch,
        uniform_misdecode: m.uniform_misdecode,
        rejection_rate: m.rejection_rate,
        conditional: conf.d.chunks(g_count).collect(),
        joint: conf.j.chunks(g_count).collect(),
        rejection: &conf.r,
    };
    println!(
        "mean FDR {}, mean TPR {}, rejection rate {}",
        fio::fmt_num(m.mean_fdr),
        fio::fmt_num(m.mean_tpr),
        fio::fmt_num(m.rejection_rate)
    );

    let mut inputs: Vec<(&str, &Path)> = vec![
        ("codebook", &cb_path),
        ("prior", &prior_path),
        ("params", &params_path),
    ];
    if let Some(a) = &args.assignment {
        inputs.push(("assignment", a));
    }

    let mut report = json!({ "analytic": analytic });
    let decisions: Option<Vec<Decision>> = if let Some(bits_path) = &args.bits {
        if soft {
            bail!("--soft needs --intensities");
        }
        inputs.push(("bits", bits_path));
        let (seqs, len) = fio::read_bits(bits_path)?;
        if len != cb.length() {
            bail!(
                "{}: sequences have {len} bits, codes have {}",
                bits_path.display(),
                cb.length()
            );
        }
        let decoded = decode_table(&voronoi, &seqs)?;
        report["empirical"] = empirical_report(&decoded, None, g_count);
        Some(with_posteriors(&seqs, &decoded, &spec, &assignment, &table))
    } else if let Some(int_path) = &args.intensities {
        inputs.push(("intensities", int_path));
        let data = fio::read_intensities(int_path)?;
        if data.rounds() != cb.length() {
            bail!(
                "{}: {} columns, codes have {} bits",
                int_path.display(),
                data.rounds(),
                cb.length()
            );
        }
        if let Some(t) = data
            .truth
            .as_ref()
            .and_then(|t| t.iter().find(|&&t| t >= g_count))
        {
            bail!(
                "{}: truth index {t} out of range for {g_count} molecules",
                int_path.display()
            );
        }
        let decisions: Vec<Decision> = if soft {
            let g = gaussian.as_ref().ok_or_else(|| {
                anyhow!(
                    "{}: --soft needs Gaussian parameters",
                    params_path.display()
                )
            })?;
            let q = match kind {
                DecoderKind::Map => 0.0,
                DecoderKind::MapQ(q) => q,
                other => bail!("--soft decodes with MAP only, not {other}"),
            };
            (0..data.rows())
                .map(|i| decode_soft(data.row(i), &cb, &assignment, &named.prior, g, q))
                .collect::<mfish_core::Result<_>>()?
        } else {
            let theta = bac.theta.as_ref().ok_or_else(|| {
                anyhow!(
                    "{}: quantizing intensities needs theta",
                    params_path.display()
                )
            })?;
            let seqs = quantize(&data, theta)?;
            let decoded = decode_table(&voronoi, &seqs)?;
            with_posteriors(&seqs, &decoded, &spec, &assignment, &table)
        };
        let decoded: Vec<Option<usize>> = decisions.iter().map(|d| d.molecule).collect();
        report["empirical"] = empirical_report(&decoded, data.truth.as_deref(), g_count);
        Some(decisions)
    } else {
        if soft {
            bail!("--soft needs --intensities");
        }
        None
    };

    create_dir(&out_dir)?;
    if let Some(decisions) = &decisions {
        write_file(
            &out_dir.join("decoded.csv"),
            &fio::decoded_to_csv(decisions, &named.names),
        )?;
    }
    let mut text = serde_json::to_string_pretty(&report)?;
    text.push('\n');
    write_file(&out_dir.join("metrics.json"), &text)?;
    write_manifest(&out_dir, "decode", &args, &inputs)?;
    Ok(())
}

fn with_posteriors(
    seqs: &[u32],
    decoded: &[Option<usize>],
    spec: &DecoderSpec,
    assignment: &AssignmentMap,
    table: &LikelihoodTable,
) -> Vec<Decision> {
    seqs.iter()
        .zip(decoded)
        .map(|(&x, &molecule)| {
            let post = posterior_from_table(x, spec, assignment, table);
            Decision {
                molecule,
                posterior: post.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect()
}

// sweep

pub fn sweep(mut args: SweepArgs) -> Result<()> {
    let cb_path = required(&args.codebook, "codebook")?;
    let params_path = required(&args.params, "params")?;
    let alphas = args
        .alpha_grid
        .get_or_insert_with(|| vec![1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0, 1e3])
        .clone();
    let draws = *args.draws.get_or_insert(20);
    let decoders: Vec<DecoderKind> = args
        .decoders
        .get_or_insert_with(|| vec!["map".into(), "mle".into()])
        .iter()
        .map(|s| s.parse())
        .collect::<mfish_core::Result<_>>()?;
    let mismatch = match args
        .mismatch
        .get_or_insert_with(|| "uniform-mismatch".into())
        .as_str()
    {
        "uniform-mismatch" => MismatchMeasure::UniformMismatch,
        "uniform-misdecode" => MismatchMeasure::UniformMisdecode,
        other => bail!("unknown mismatch measure {other:?}"),
    };
    let seed = *args.seed.get_or_insert(0);
    let out_dir = args
        .out_dir
        .get_or_insert_with(|| "sweep_out".into())
        .clone();

    let (_, cb) = read_codebook(&cb_path)?;
    let molecules = *args.molecules.get_or_insert(cb.len());
    let bac = prior_free_bac(&ChannelFile::read(&params_path)?, &params_path)?;
    check_rounds(&bac, &cb, &params_path)?;
    let table = LikelihoodTable::build(&cb, &bac)?;
    let config = SweepConfig {
        alphas,
        draws,
        decoders,
        molecules,
        assignment: AssignmentPolicy::RandomPerDraw,
        seed,
        mismatch,
    };
    let report = dirichlet_sweep(&config, &cb, &table)?;

    create_dir(&out_dir)?;
    write_file(&out_dir.join("sweep.csv"), &fio::sweep_to_csv(&report.rows))?;
    let mut fdr = String::from("alpha,draw,decoder,molecule,fdr,never_decoded\n");
    for r in &report.records {
        for (g, (&f, &nd)) in r.fdr.iter().zip(&r.never_decoded).enumerate() {
            fdr.push_str(&format!(
                "{},{},{},{g},{},{nd}\n",
                fio::fmt_num(r.alpha),
                r.draw,
                r.decoder,
                fio::fmt_num(f)
            ));
        }
    }
    write_file(&out_dir.join("sweep_fdr.csv"), &fdr)?;
    println!(
        "{} rows written to {}",
        report.rows.len(),
        out_dir.join("sweep.csv").display()
    );
    write_manifest(
        &out_dir,
        "sweep",
        &args,
        &[("codebook", &cb_path), ("params", &params_path)],
    )?;
    Ok(())
}

// optimize

pub fn optimize(mut args: OptimizeArgs) -> Result<()> {
    let cb_path = required(&args.codebook, "codebook")?;
    let prior_path = required(&args.prior, "prior")?;
    let params_path = required(&args.params, "params")?;
    let defaults = EvoConfig::default();
    let decoder: DecoderKind = args.decoder.get_or_insert_with(|| "map".into()).parse()?;
    let pool = match args
        .pool
        .get_or_insert_with(|| "include-unused".into())
        .as_str()
    {
        "include-unused" => SwapPool::IncludeUnused,
        "used-only" => SwapPool::UsedOnly,
        other => bail!("unknown swap pool {other:?}"),
    };
    let config = EvoConfig {
        population_size: *args.population.get_or_insert(defaults.population_size),
        mutation_prob: *args.mutation_prob.get_or_insert(defaults.mutation_prob),
        generations: *args.generations.get_or_insert(defaults.generations),
        seed: *args.seed.get_or_insert(0),
        decoder,
        pool,
    };
    config.check()?;
    let out_dir = args
        .out_dir
        .get_or_insert_with(|| "optimize_out".into())
        .clone();

    let (_, cb) = read_codebook(&cb_path)?;
    let named = NamedPrior::read(&prior_path)?;
    if named.names.len() > cb.len() {
        bail!(
            "{} molecules but only {} codes",
            named.names.len(),
            cb.len()
        );
    }
    let bac = prior_free_bac(&ChannelFile::read(&params_path)?, &params_path)?;
    check_rounds(&bac, &cb, &params_path)?;
    let table = LikelihoodTable::build(&cb, &bac)?;

    create_dir(&out_dir)?;
    let report_path = out_dir.join("evolution.csv");
    let file = File::create(&report_path)
        .with_context(|| format!("{}: cannot write", report_path.display()))?;
    let mut report = BufWriter::new(file);
    writeln!(report, "{}", fio::EVOLUTION_HEADER)?;
    report.flush()?;
    let history = assignopt::evolve_with(&config, &named.prior, &cb, &table, |stats| {
        writeln!(report, "{}", fio::evolution_row(stats))
            .and_then(|()| report.flush())
            .map_err(|source| mfish_core::Error::Io {
                path: report_path.clone(),
                source,
            })
    })?;
    drop(report);

    let best = NamedCodes::from_assignment(&cb, &history.best, &named.names);
    write_file(&out_dir.join("best_assignment.tsv"), &best.to_tsv())?;
    let first = history.generations.first().map_or(f64::NAN, |s| s.best_fdr);
    println!(
        "best mean FDR {} (generation 0: {})",
        fio::fmt_num(history.best_fitness),
        fio::fmt_num(first)
    );
    write_manifest(
        &out_dir,
        "optimize",
        &args,
        &[
            ("codebook", &cb_path),
            ("prior", &prior_path),
            ("params", &params_path),
        ],
    )?;
    Ok(())
}

// simulate

pub fn simulate(mut args: SimulateArgs) -> Result<()> {
    let cb_path = required(&args.codebook, "codebook")?;
    let prior_path = required(&args.prior, "prior")?;
    let params_path = required(&args.params, "params")?;
    let n = *args.n.get_or_insert(250_000);
    let seed = *args.seed.get_or_insert(0);
    let out = args
        .out
        .get_or_insert_with(|| "intensities.csv".into())
        .clone();

    let (codes, cb) = read_codebook(&cb_path)?;
    let named = NamedPrior::read(&prior_path)?;
    let assignment = read_assignment(&codes, &cb, &named.names, args.assignment.as_deref())?;
    let gaussian = ChannelFile::read(&params_path)?
        .gaussian()?
        .ok_or_else(|| {
            anyhow!(
                "{}: simulation needs Gaussian parameters",
                params_path.display()
            )
        })?;
    let table = simulate_table(&cb, &assignment, &named.prior, &gaussian, n, seed)?;
    write_file(&out, &fio::intensities_to_csv(&table))?;
    println!("{n} rows written to {}", out.display());

    let mut inputs: Vec<(&str, &Path)> = vec![
        ("codebook", &cb_path),
        ("prior", &prior_path),
        ("params", &params_path),
    ];
    if let Some(a) = &args.assignment {
        inputs.push(("assignment", a));
    }
    write_manifest(&parent_dir(&out), "simulate", &args, &inputs)?;
    Ok(())
}
