use rayon::prelude::*;

use super::{DecoderKind, DecoderSpec, TieBreak};
use crate::channel::{log_likelihood, BacParams, LikelihoodTable};
use crate::codebook::{AssignmentMap, Codebook};
use crate::error::{Error, Result};

const REJECT: u32 = u32::MAX;
const BLOCK: usize = 4096;

/// Total map from every `L`-bit sequence to a molecule or a rejection.
#[derive(Clone, Debug, PartialEq)]
pub struct VoronoiTable {
    length: usize,
    molecules: usize,
    decode: Vec<u32>,
    spec: DecoderSpec,
}

impl VoronoiTable {
    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }

    #[inline]
    pub fn molecules(&self) -> usize {
        self.molecules
    }

    /// Decoded molecule for `x`, `None` when rejected.
    #[inline]
    pub fn get(&self, x: u32) -> Option<usize> {
        match self.decode[x as usize] {
            REJECT => None,
            g => Some(g as usize),
        }
    }

    /// Sequences not rejected.
    pub fn accepted_count(&self) -> usize {
        self.decode.iter().filter(|&&g| g != REJECT).count()
    }

    pub fn is_accepted(&self, x: u32) -> bool {
        self.decode[x as usize] != REJECT
    }

    /// Members of the Voronoi set of molecule `g`.
    pub fn cell(&self, g: usize) -> Vec<u32> {
        (0..self.decode.len() as u32)
            .filter(|&x| self.decode[x as usize] == g as u32)
            .collect()
    }

    pub fn spec(&self) -> &DecoderSpec {
        &self.spec
    }

    #[inline]
    pub(crate) fn raw(&self) -> &[u32] {
        &self.decode
    }
}

/// Outcome of decoding one observation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decision {
    pub molecule: Option<usize>,
    /// Posterior of the best candidate under the decoder prior.
    pub posterior: f64,
}

/// Builds the decoder's partition of `{0,1}^L`.
///
/// Every sequence gets the molecule maximizing `ln omega_g + ln Pr(x | c_g)`;
/// exact ties are rejected unless the spec asks for smallest-code tie
/// breaking. MAP_q additionally rejects when the winner's posterior,
/// normalized over the used codes, is below `q`. The Moffitt rule accepts a
/// sequence only if a single used code attains the minimum Hamming distance.
pub fn build_voronoi(
    spec: &DecoderSpec,
    codebook: &Codebook,
    assignment: &AssignmentMap,
    table: &LikelihoodTable,
) -> Result<VoronoiTable> {
    assignment.check_against(codebook)?;
    let g_count = assignment.molecules();
    if spec.molecules() != g_count {
        return Err(Error::LengthMismatch {
            expected: g_count,
            got: spec.molecules(),
        });
    }
    if table.codes() != codebook.len() || table.length() != codebook.length() {
        return Err(Error::LengthMismatch {
            expected: codebook.len(),
            got: table.codes(),
        });
    }
    let codes: Vec<usize> = assignment.code_indices().to_vec();
    let words: Vec<u32> = (0..g_count)
        .map(|g| assignment.codeword(codebook, g).bits())
        .collect();
    // A uniform decoder prior shifts every score equally; leaving it out
    // keeps MAP under a uniform prior bit-identical to MLE.
    let offsets: Vec<f64> = if spec.omega().is_uniform() {
        vec![0.0; g_count]
    } else {
        spec.omega().log_probs().to_vec()
    };

    let n = table.sequences();
    let mut decode = vec![REJECT; n];
    decode
        .par_chunks_mut(BLOCK)
        .enumerate()
        .for_each_init(Vec::new, |scores, (block, chunk)| {
            for (i, out) in chunk.iter_mut().enumerate() {
                let x = (block * BLOCK + i) as u32;
                *out = match spec.kind {
                    DecoderKind::Moffitt { restricted_mle } => decide_moffitt(
                        x,
                        &words,
                        restricted_mle.then_some((table, &codes)),
                        spec.tie_break,
                    ),
                    _ => decide_scored(x, spec, table, &codes, &words, &offsets, scores),
                };
            }
        });
    Ok(VoronoiTable {
        length: codebook.length(),
        molecules: g_count,
        decode,
        spec: spec.clone(),
    })
}

/// Winner among tied maxima, or `REJECT`.
fn resolve_tie(tied: &[usize], words: &[u32], tie_break: TieBreak) -> u32 {
    match tie_break {
        TieBreak::Reject => REJECT,
        TieBreak::SmallestCode => *tied
            .iter()
            .min_by_key(|&&g| words[g])
            .expect("at least one candidate") as u32,
    }
}

fn decide_scored(
    x: u32,
    spec: &DecoderSpec,
    table: &LikelihoodTable,
    codes: &[usize],
    words: &[u32],
    offsets: &[f64],
    scores: &mut Vec<f64>,
) -> u32 {
    let row = table.log_row(x);
    scores.clear();
    scores.extend(codes.iter().zip(offsets).map(|(&k, &o)| o + row[k]));
    let mut best = 0;
    let mut tied = false;
    for g in 1..scores.len() {
        if scores[g] > scores[best] {
            best = g;
            tied = false;
        } else if scores[g] == scores[best] {
            tied = true;
        }
    }
    let best_score = scores[best];
    let winner = if tied {
        let all: Vec<usize> = (0..scores.len())
            .filter(|&g| scores[g] == best_score)
            .collect();
        resolve_tie(&all, words, spec.tie_break)
    } else {
        best as u32
    };
    if winner == REJECT {
        return REJECT;
    }
    if let DecoderKind::MapQ(q) = spec.kind {
        let mass: f64 = scores.iter().map(|s| (s - best_score).exp()).sum();
        if 1.0 / mass < q {
            return REJECT;
        }
    }
    winner
}

fn decide_moffitt(
    x: u32,
    words: &[u32],
    restricted: Option<(&LikelihoodTable, &Vec<usize>)>,
    tie_break: TieBreak,
) -> u32 {
    let mut best = u32::MAX;
    let mut nearest = 0usize;
    let mut count = 0;
    for (g, &w) in words.iter().enumerate() {
        let d = (x ^ w).count_ones();
        if d < best {
            best = d;
            nearest = g;
            count = 1;
        } else if d == best {
            count += 1;
        }
    }
    if count != 1 {
        return REJECT;
    }
    match restricted {
        None => nearest as u32,
        Some((table, codes)) => {
            let row = table.log_row(x);
            let mut top = 0;
            for g in 1..codes.len() {
                if row[codes[g]] > row[codes[top]] {
                    top = g;
                }
            }
            let tied: Vec<usize> = (0..codes.len())
                .filter(|&g| row[codes[g]] == row[codes[top]])
                .collect();
            if tied.len() > 1 {
                resolve_tie(&tied, words, tie_break)
            } else {
                top as u32
            }
        }
    }
}

/// Looks up a batch of sequences, preserving order.
pub fn decode_table(voronoi: &VoronoiTable, sequences: &[u32]) -> Result<Vec<Option<usize>>> {
    let limit = voronoi.length;
    sequences
        .iter()
        .map(|&x| {
            if limit < 32 && x >> limit != 0 {
                Err(Error::LengthMismatch {
                    expected: limit,
                    got: 32 - x.leading_zeros() as usize,
                })
            } else {
                Ok(voronoi.get(x))
            }
        })
        .collect()
}

fn softmax(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        total += *s;
    }
    for s in scores.iter_mut() {
        *s /= total;
    }
}

/// Posterior over the used codes for sequence `x`, by direct evaluation.
pub fn posterior(
    x: u32,
    spec: &DecoderSpec,
    codebook: &Codebook,
    assignment: &AssignmentMap,
    bac: &BacParams,
) -> Result<Vec<f64>> {
    if spec.molecules() != assignment.molecules() {
        return Err(Error::LengthMismatch {
            expected: assignment.molecules(),
            got: spec.molecules(),
        });
    }
    let mut scores: Vec<f64> = (0..assignment.molecules())
        .map(|g| {
            spec.omega().log_probs()[g] + log_likelihood(x, assignment.codeword(codebook, g), bac)
        })
        .collect();
    softmax(&mut scores);
    Ok(scores)
}

/// Posterior over the used codes for sequence `x`, from a prebuilt table.
pub fn posterior_from_table(
    x: u32,
    spec: &DecoderSpec,
    assignment: &AssignmentMap,
    table: &LikelihoodTable,
) -> Vec<f64> {
    let row = table.log_row(x);
    let mut scores: Vec<f64> = assignment
        .code_indices()
        .iter()
        .zip(spec.omega().log_probs())
        .map(|(&k, &o)| o + row[k])
        .collect();
    softmax(&mut scores);
    scores
}
