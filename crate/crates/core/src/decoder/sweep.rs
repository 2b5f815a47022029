use rayon::prelude::*;
use serde::Serialize;

use super::confusion::{confusion, metrics};
use super::voronoi::build_voronoi;
use super::{DecoderKind, DecoderSpec};
use crate::channel::LikelihoodTable;
use crate::codebook::{random_assignment_with, sample_dirichlet_with, AssignmentMap, Codebook};
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};
use crate::special::quantile_sorted;

/// How the code assignment is chosen for each prior draw.
#[derive(Clone, Debug, PartialEq)]
pub enum AssignmentPolicy {
    RandomPerDraw,
    Fixed(AssignmentMap),
}

/// Which per-molecule error rate is summarized as the mismatch rate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchMeasure {
    /// Mean over molecules of `1 - TPR`, rejections counted as errors.
    #[default]
    UniformMismatch,
    /// Mean over molecules of the probability of decoding to another molecule.
    UniformMisdecode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub draws: usize,
    pub decoders: Vec<DecoderKind>,
    pub molecules: usize,
    pub assignment: AssignmentPolicy,
    pub seed: u64,
    pub mismatch: MismatchMeasure,
}

/// Metrics of one decoder at one sampled prior.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DrawRecord {
    pub alpha: f64,
    pub draw: usize,
    #[serde(serialize_with = "serialize_kind")]
    pub decoder: DecoderKind,
    pub fdr: Vec<f64>,
    pub never_decoded: Vec<bool>,
    pub mean_fdr: f64,
    pub uniform_mismatch: f64,
    pub uniform_misdecode: f64,
    pub weighted_mismatch: f64,
    pub rejection_rate: f64,
}

/// Percentile summary over all draws of one (alpha, decoder) pair.
///
/// FDR percentiles pool the per-molecule FDRs of every draw, leaving out
/// molecules that are never decoded; their share is `never_decoded_fraction`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    #[serde(serialize_with = "serialize_kind")]
    pub decoder: DecoderKind,
    pub fdr_p05: f64,
    pub fdr_median: f64,
    pub fdr_p95: f64,
    pub mean_fdr_median: f64,
    pub mismatch_p05: f64,
    pub mismatch_median: f64,
    pub mismatch_p95: f64,
    pub weighted_mismatch_median: f64,
    pub rejection_rate_median: f64,
    pub never_decoded_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub records: Vec<DrawRecord>,
    pub rows: Vec<SweepRow>,
}

fn serialize_kind<S: serde::Serializer>(
    kind: &DecoderKind,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(kind)
}

/// FDR and mismatch distributions across symmetric Dirichlet priors.
///
/// Draw `d` at grid point `a` uses its own random stream, so every decoder is
/// evaluated on the same prior and assignment and the report does not depend
/// on the thread count. Rows are ordered by alpha, then decoder.
pub fn dirichlet_sweep(
    config: &SweepConfig,
    codebook: &Codebook,
    table: &LikelihoodTable,
) -> Result<SweepReport> {
    if config.alphas.is_empty() || config.decoders.is_empty() || config.draws == 0 {
        return Err(Error::Size(
            "sweep needs at least one alpha, one decoder and one draw".into(),
        ));
    }
    if let Some(a) = config.alphas.iter().find(|a| !(a.is_finite() && **a > 0.0)) {
        return Err(Error::Domain(format!("alpha must be positive, got {a}")));
    }
    if let AssignmentPolicy::Fixed(a) = &config.assignment {
        a.check_against(codebook)?;
        if a.molecules() != config.molecules {
            return Err(Error::LengthMismatch {
                expected: config.molecules,
                got: a.molecules(),
            });
        }
    }
    let tasks: Vec<(usize, usize)> = (0..config.alphas.len())
        .flat_map(|a| (0..config.draws).map(move |d| (a, d)))
        .collect();
    let per_task: Vec<Vec<DrawRecord>> = tasks
        .par_iter()
        .map(|&(ai, draw)| run_draw(config, codebook, table, ai, draw))
        .collect::<Result<_>>()?;

    // Task order is alpha-major, so records group by alpha, then draw.
    let records: Vec<DrawRecord> = per_task.into_iter().flatten().collect();
    let mut rows = Vec::with_capacity(config.alphas.len() * config.decoders.len());
    for (ai, &alpha) in config.alphas.iter().enumerate() {
        let block = &records[ai * config.draws * config.decoders.len()..]
            [..config.draws * config.decoders.len()];
        for (di, &kind) in config.decoders.iter().enumerate() {
            let recs: Vec<&DrawRecord> = block
                .iter()
                .skip(di)
                .step_by(config.decoders.len())
                .collect();
            rows.push(summarize(alpha, kind, &recs, config.mismatch));
        }
    }
    Ok(SweepReport { records, rows })
}

fn run_draw(
    config: &SweepConfig,
    codebook: &Codebook,
    table: &LikelihoodTable,
    ai: usize,
    draw: usize,
) -> Result<Vec<DrawRecord>> {
    let alpha = config.alphas[ai];
    let mut rng = stream_rng(config.seed, stream_id(2, ai as u64, draw as u64));
    let prior = sample_dirichlet_with(config.molecules, alpha, &mut rng)?;
    let assignment = match &config.assignment {
        AssignmentPolicy::RandomPerDraw => {
            random_assignment_with(codebook.len(), config.molecules, &mut rng)?
        }
        AssignmentPolicy::Fixed(a) => a.clone(),
    };
    config
        .decoders
        .iter()
        .map(|&kind| {
            let spec = DecoderSpec::new(kind, prior.clone())?;
            let voronoi = build_voronoi(&spec, codebook, &assignment, table)?;
            let conf = confusion(&voronoi, &assignment, &prior, table)?;
            let m = metrics(&conf, &prior)?;
            Ok(DrawRecord {
                alpha,
                draw,
                decoder: kind,
                mean_fdr: m.mean_fdr,
                uniform_mismatch: m.uniform_mismatch,
                uniform_misdecode: m.uniform_misdecode,
                weighted_mismatch: m.weighted_mismatch,
                rejection_rate: m.rejection_rate,
                fdr: m.fdr,
                never_decoded: m.never_decoded,
            })
        })
        .collect()
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        f64::NAN
    } else {
        quantile_sorted(sorted, p)
    }
}

fn summarize(
    alpha: f64,
    decoder: DecoderKind,
    recs: &[&DrawRecord],
    measure: MismatchMeasure,
) -> SweepRow {
    let mut total = 0usize;
    let mut pooled = Vec::new();
    for r in recs {
        total += r.fdr.len();
        pooled.extend(
            r.fdr
                .iter()
                .zip(&r.never_decoded)
                .filter(|(_, &never)| !never)
                .map(|(&f, _)| f),
        );
    }
    let never = total - pooled.len();
    let pooled = sorted(pooled);
    let mismatch = sorted(
        recs.iter()
            .map(|r| match measure {
                MismatchMeasure::UniformMismatch => r.uniform_mismatch,
                MismatchMeasure::UniformMisdecode => r.uniform_misdecode,
            })
            .collect(),
    );
    let median_of =
        |f: fn(&DrawRecord) -> f64| percentile(&sorted(recs.iter().map(|r| f(r)).collect()), 0.5);
    SweepRow {
        alpha,
        decoder,
        fdr_p05: percentile(&pooled, 0.05),
        fdr_median: percentile(&pooled, 0.5),
        fdr_p95: percentile(&pooled, 0.95),
        mean_fdr_median: median_of(|r| r.mean_fdr),
        mismatch_p05: percentile(&mismatch, 0.05),
        mismatch_median: percentile(&mismatch, 0.5),
        mismatch_p95: percentile(&mismatch, 0.95),
        weighted_mismatch_median: median_of(|r| r.weighted_mismatch),
        rejection_rate_median: median_of(|r| r.rejection_rate),
        never_decoded_fraction: never as f64 / total as f64,
    }
}
