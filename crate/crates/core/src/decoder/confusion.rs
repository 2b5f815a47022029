use rayon::prelude::*;
use serde::Serialize;

use super::voronoi::VoronoiTable;
use crate::channel::LikelihoodTable;
use crate::codebook::{AssignmentMap, PriorDist};
use crate::error::{Error, Result};

const REJECT: u32 = u32::MAX;

/// Exact decode statistics of one decoder.
///
/// `d[g * G + t]` is `Pr(decode = g | truth = t)`; `j` is the same matrix
/// scaled by the true prior of the column, `j[g * G + t] = pi_t d[g * G + t]`;
/// `r[t]` is the rejection probability of molecule `t`. Matrices are
/// row-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConfusionResult {
    pub molecules: usize,
    pub d: Vec<f64>,
    pub j: Vec<f64>,
    pub r: Vec<f64>,
    /// `1 - d[t * G + t]`, summed directly from the off-diagonal mass.
    pub mismatch: Vec<f64>,
}

impl ConfusionResult {
    #[inline]
    pub fn conditional(&self, decoded: usize, truth: usize) -> f64 {
        self.d[decoded * self.molecules + truth]
    }

    #[inline]
    pub fn joint(&self, decoded: usize, truth: usize) -> f64 {
        self.j[decoded * self.molecules + truth]
    }
}

/// Sums channel probabilities over every Voronoi cell.
pub fn confusion(
    voronoi: &VoronoiTable,
    assignment: &AssignmentMap,
    prior: &PriorDist,
    table: &LikelihoodTable,
) -> Result<ConfusionResult> {
    let g_count = assignment.molecules();
    if voronoi.molecules() != g_count {
        return Err(Error::LengthMismatch {
            expected: g_count,
            got: voronoi.molecules(),
        });
    }
    if prior.len() != g_count {
        return Err(Error::LengthMismatch {
            expected: g_count,
            got: prior.len(),
        });
    }
    if table.length() != voronoi.length() || table.codes() != assignment.codebook_size() {
        return Err(Error::LengthMismatch {
            expected: voronoi.length(),
            got: table.length(),
        });
    }
    let decode = voronoi.raw();
    // One task per true molecule; each column is summed in sequence order.
    let columns: Vec<(Vec<f64>, f64, f64)> = (0..g_count)
        .into_par_iter()
        .map(|t| {
            let probs = table.prob_column(assignment.code_index(t));
            let mut col = vec![0.0; g_count];
            let mut rejected = 0.0;
            let mut wrong = 0.0;
            for (&g, &p) in decode.iter().zip(probs) {
                if g == REJECT {
                    rejected += p;
                } else {
                    col[g as usize] += p;
                    if g as usize != t {
                        wrong += p;
                    }
                }
            }
            (col, rejected, wrong + rejected)
        })
        .collect();

    let mut d = vec![0.0; g_count * g_count];
    let mut r = Vec::with_capacity(g_count);
    let mut mismatch = Vec::with_capacity(g_count);
    for (t, (col, rejected, miss)) in columns.into_iter().enumerate() {
        for (g, v) in col.into_iter().enumerate() {
            d[g * g_count + t] = v;
        }
        r.push(rejected);
        mismatch.push(miss);
    }
    let pi = prior.probs();
    let j = d
        .iter()
        .enumerate()
        .map(|(i, &v)| pi[i % g_count] * v)
        .collect();
    Ok(ConfusionResult {
        molecules: g_count,
        d,
        j,
        r,
        mismatch,
    })
}

/// Per-molecule and aggregate decoder performance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub tpr: Vec<f64>,
    pub fdr: Vec<f64>,
    /// Molecules that no observation is ever decoded to; their FDR is 0.
    pub never_decoded: Vec<bool>,
    pub mean_tpr: f64,
    /// Unweighted mean of the per-molecule FDRs.
    pub mean_fdr: f64,
    /// `sum_t pi_t (1 - TPR_t)`.
    pub weighted_mismatch: f64,
    /// `(1/G) sum_t (1 - TPR_t)`.
    pub uniform_mismatch: f64,
    /// `(1/G) sum_t Pr(decoded to another molecule | t)`, rejections excluded.
    pub uniform_misdecode: f64,
    /// `sum_t pi_t r_t`.
    pub rejection_rate: f64,
}

pub fn metrics(confusion: &ConfusionResult, prior: &PriorDist) -> Result<Metrics> {
    let g_count = confusion.molecules;
    if prior.len() != g_count {
        return Err(Error::LengthMismatch {
            expected: g_count,
            got: prior.len(),
        });
    }
    let pi = prior.probs();
    let tpr: Vec<f64> = (0..g_count).map(|g| confusion.conditional(g, g)).collect();
    let mut fdr = Vec::with_capacity(g_count);
    let mut never_decoded = Vec::with_capacity(g_count);
    for g in 0..g_count {
        let row = &confusion.j[g * g_count..(g + 1) * g_count];
        let total: f64 = row.iter().sum();
        let false_mass: f64 = row
            .iter()
            .enumerate()
            .filter(|&(t, _)| t != g)
            .map(|(_, v)| v)
            .sum();
        if total > 0.0 {
            fdr.push((false_mass / total).clamp(0.0, 1.0));
            never_decoded.push(false);
        } else {
            fdr.push(0.0);
            never_decoded.push(true);
        }
    }
    let n = g_count as f64;
    let misdecode: f64 = (0..g_count)
        .map(|t| confusion.mismatch[t] - confusion.r[t])
        .sum::<f64>();
    Ok(Metrics {
        mean_tpr: tpr.iter().sum::<f64>() / n,
        mean_fdr: fdr.iter().sum::<f64>() / n,
        weighted_mismatch: pi.iter().zip(&confusion.mismatch).map(|(p, m)| p * m).sum(),
        uniform_mismatch: confusion.mismatch.iter().sum::<f64>() / n,
        uniform_misdecode: (misdecode / n).max(0.0),
        rejection_rate: pi.iter().zip(&confusion.r).map(|(p, r)| p * r).sum(),
        tpr,
        fdr,
        never_decoded,
    })
}
