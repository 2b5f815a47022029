//! Per-round intensity model and the binary asymmetric channel derived from it.
//!
//! Each round `l` observes `ln I_l ~ N(mu_l[c_l], sigma_l[c_l]^2)` for the
//! molecule's code symbol `c_l`. Quantizing at the equal-responsibility
//! threshold turns every round into an independent binary asymmetric channel
//! with false-alarm rate `p01` and fallout rate `p10`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebook::{AssignmentMap, Codebook, Codeword, PriorDist};
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};
use crate::special::{floored_ln, norm_cdf, norm_log_pdf, norm_quantile};

/// Longest code for which the full `2^L` likelihood table may be built.
pub const MAX_TABLE_LENGTH: usize = 24;

/// Per-round Gaussian parameters of log intensity, natural log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianChannelParams {
    pub mu0: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma1: Vec<f64>,
}

impl GaussianChannelParams {
    pub fn new(mu0: Vec<f64>, sigma0: Vec<f64>, mu1: Vec<f64>, sigma1: Vec<f64>) -> Result<Self> {
        let params = GaussianChannelParams {
            mu0,
            sigma0,
            mu1,
            sigma1,
        };
        params.check()?;
        Ok(params)
    }

    /// Validates lengths, positive sigmas and `mu1 > mu0` in every round.
    pub fn check(&self) -> Result<()> {
        let l = self.mu0.len();
        if l == 0 {
            return Err(Error::Size("channel has no rounds".into()));
        }
        for v in [&self.sigma0, &self.mu1, &self.sigma1] {
            if v.len() != l {
                return Err(Error::LengthMismatch {
                    expected: l,
                    got: v.len(),
                });
            }
        }
        for r in 0..l {
            let (m0, s0, m1, s1) = (self.mu0[r], self.sigma0[r], self.mu1[r], self.sigma1[r]);
            if ![m0, s0, m1, s1].iter().all(|v| v.is_finite()) {
                return Err(Error::Domain(format!(
                    "round {}: non-finite parameter",
                    r + 1
                )));
            }
            if s0 <= 0.0 || s1 <= 0.0 {
                return Err(Error::Domain(format!(
                    "round {}: sigma must be positive",
                    r + 1
                )));
            }
            if m1 <= m0 {
                return Err(Error::Domain(format!(
                    "round {}: mu1 ({m1}) must exceed mu0 ({m0})",
                    r + 1
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rounds(&self) -> usize {
        self.mu0.len()
    }

    /// Parameters whose equal-responsibility threshold under "on" weights
    /// `w1` yields exactly the requested crossover rates.
    ///
    /// The "off" component is `N(mu0, sigma0^2)` in every round; the "on"
    /// component's mean and spread are solved in closed form.
    pub fn calibrated(mu0: f64, sigma0: f64, p01: &[f64], p10: &[f64], w1: &[f64]) -> Result<Self> {
        let l = p01.len();
        if p10.len() != l || w1.len() != l {
            return Err(Error::LengthMismatch {
                expected: l,
                got: p10.len().min(w1.len()),
            });
        }
        let mut params = GaussianChannelParams {
            mu0: vec![mu0; l],
            sigma0: vec![sigma0; l],
            mu1: Vec::with_capacity(l),
            sigma1: Vec::with_capacity(l),
        };
        for r in 0..l {
            if !(0.0 < p01[r] && p01[r] < 0.5 && 0.0 < p10[r] && p10[r] < 0.5) {
                return Err(Error::Domain(format!(
                    "round {}: target rates must lie in (0, 0.5)",
                    r + 1
                )));
            }
            if !(0.0 < w1[r] && w1[r] < 1.0) {
                return Err(Error::DegenerateRound {
                    round: r + 1,
                    w1: w1[r],
                });
            }
            let z0 = norm_quantile(1.0 - p01[r]);
            let z1 = norm_quantile(1.0 - p10[r]);
            let theta = mu0 + sigma0 * z0;
            let sigma1 = sigma0 * (w1[r] / (1.0 - w1[r])) * (0.5 * (z0 * z0 - z1 * z1)).exp();
            params.mu1.push(theta + sigma1 * z1);
            params.sigma1.push(sigma1);
        }
        params.check()?;
        Ok(params)
    }

    /// Log density of one intensity row under code `c`, natural log of the
    /// log-intensities' Gaussian densities summed over rounds.
    pub fn log_density(&self, log_intensity: &[f64], c: Codeword) -> f64 {
        log_intensity
            .iter()
            .enumerate()
            .map(|(l, &y)| {
                if c.bit(l) {
                    norm_log_pdf(y, self.mu1[l], self.sigma1[l])
                } else {
                    norm_log_pdf(y, self.mu0[l], self.sigma0[l])
                }
            })
            .sum()
    }
}

/// Per-round binary asymmetric channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacParams {
    /// Log-intensity thresholds, when the channel was derived from a
    /// Gaussian fit.
    pub theta: Option<Vec<f64>>,
    /// False alarm, `Pr(read 1 | sent 0)`.
    pub p01: Vec<f64>,
    /// Fallout, `Pr(read 0 | sent 1)`.
    pub p10: Vec<f64>,
}

impl BacParams {
    pub fn new(p01: Vec<f64>, p10: Vec<f64>) -> Result<Self> {
        let bac = BacParams {
            theta: None,
            p01,
            p10,
        };
        bac.check()?;
        Ok(bac)
    }

    /// The same channel in every one of `rounds` rounds.
    pub fn uniform(rounds: usize, p01: f64, p10: f64) -> Result<Self> {
        Self::new(vec![p01; rounds], vec![p10; rounds])
    }

    pub fn check(&self) -> Result<()> {
        if self.p01.is_empty() {
            return Err(Error::Size("channel has no rounds".into()));
        }
        if self.p10.len() != self.p01.len() {
            return Err(Error::LengthMismatch {
                expected: self.p01.len(),
                got: self.p10.len(),
            });
        }
        if let Some(theta) = &self.theta {
            if theta.len() != self.p01.len() {
                return Err(Error::LengthMismatch {
                    expected: self.p01.len(),
                    got: theta.len(),
                });
            }
        }
        for (l, (&a, &b)) in self.p01.iter().zip(&self.p10).enumerate() {
            if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
                return Err(Error::Domain(format!(
                    "round {}: crossover probabilities ({a}, {b}) outside (0, 1)",
                    l + 1
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn rounds(&self) -> usize {
        self.p01.len()
    }

    /// `ln p^{i->j}` for round `l`, indexed `[i][j]`, floored at 1e-300.
    pub fn log_transition(&self, l: usize) -> [[f64; 2]; 2] {
        let (p01, p10) = (self.p01[l], self.p10[l]);
        [
            [floored_ln(1.0 - p01), floored_ln(p01)],
            [floored_ln(p10), floored_ln(1.0 - p10)],
        ]
    }

    fn log_transitions(&self) -> Vec<[[f64; 2]; 2]> {
        (0..self.rounds()).map(|l| self.log_transition(l)).collect()
    }

    pub fn mean_p01(&self) -> f64 {
        self.p01.iter().sum::<f64>() / self.rounds() as f64
    }

    pub fn mean_p10(&self) -> f64 {
        self.p10.iter().sum::<f64>() / self.rounds() as f64
    }
}

/// Mixture weight of the "on" component in each round, `sum_g pi_g c_g[l]`.
pub fn round_weights(
    codebook: &Codebook,
    assignment: &AssignmentMap,
    prior: &PriorDist,
) -> Result<Vec<f64>> {
    assignment.check_against(codebook)?;
    if prior.len() != assignment.molecules() {
        return Err(Error::LengthMismatch {
            expected: assignment.molecules(),
            got: prior.len(),
        });
    }
    let mut w1 = vec![0.0; codebook.length()];
    for (g, &p) in prior.probs().iter().enumerate() {
        let c = assignment.codeword(codebook, g);
        for (l, w) in w1.iter_mut().enumerate() {
            if c.bit(l) {
                *w += p;
            }
        }
    }
    Ok(w1)
}

/// Equal-responsibility thresholds for the mixture induced by `prior` and
/// `assignment` on `codebook`.
pub fn quantization_thresholds(
    params: &GaussianChannelParams,
    codebook: &Codebook,
    assignment: &AssignmentMap,
    prior: &PriorDist,
) -> Result<Vec<f64>> {
    if params.rounds() != codebook.length() {
        return Err(Error::LengthMismatch {
            expected: codebook.length(),
            got: params.rounds(),
        });
    }
    let w1 = round_weights(codebook, assignment, prior)?;
    thresholds_for_weights(params, &w1)
}

/// Equal-responsibility thresholds for explicit "on" weights per round.
pub fn thresholds_for_weights(params: &GaussianChannelParams, w1: &[f64]) -> Result<Vec<f64>> {
    params.check()?;
    if w1.len() != params.rounds() {
        return Err(Error::LengthMismatch {
            expected: params.rounds(),
            got: w1.len(),
        });
    }
    (0..params.rounds())
        .map(|l| {
            if !(w1[l] > 0.0 && w1[l] < 1.0) {
                return Err(Error::DegenerateRound {
                    round: l + 1,
                    w1: w1[l],
                });
            }
            equal_responsibility(
                params.mu0[l],
                params.sigma0[l],
                params.mu1[l],
                params.sigma1[l],
                1.0 - w1[l],
                w1[l],
            )
            .ok_or_else(|| {
                Error::Numerical(format!(
                    "round {}: no equal-responsibility point between the component means",
                    l + 1
                ))
            })
        })
        .collect()
}

/// Solves `w1 N(t | m1, s1) = w0 N(t | m0, s0)` for `t` in `(m0, m1)`.
///
/// In log form this is `a t^2 + b t + c = 0`; the root where the log ratio
/// crosses from negative to positive is returned.
fn equal_responsibility(m0: f64, s0: f64, m1: f64, s1: f64, w0: f64, w1: f64) -> Option<f64> {
    let v0 = s0 * s0;
    let v1 = s1 * s1;
    let a = 0.5 / v0 - 0.5 / v1;
    let b = m1 / v1 - m0 / v0;
    let c = 0.5 * m0 * m0 / v0 - 0.5 * m1 * m1 / v1 + (w1 * s0 / (w0 * s1)).ln();
    let inside = |t: f64| t > m0 && t < m1 && t.is_finite();

    if a.abs() <= 1e-12 * b.abs() {
        let t = -c / b;
        return inside(t).then_some(t);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    // Cancellation-free pair of roots.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let mut roots: Vec<f64> = [q / a, c / q].into_iter().filter(|&t| inside(t)).collect();
    if roots.len() == 2 {
        // Keep the crossing where the "on" component takes over.
        roots.retain(|&t| 2.0 * a * t + b > 0.0);
    }
    roots.first().copied()
}

/// Crossover rates of quantizing each round at `thresholds`.
pub fn bac_from_gaussian(params: &GaussianChannelParams, thresholds: &[f64]) -> Result<BacParams> {
    params.check()?;
    if thresholds.len() != params.rounds() {
        return Err(Error::LengthMismatch {
            expected: params.rounds(),
            got: thresholds.len(),
        });
    }
    let mut p01 = Vec::with_capacity(thresholds.len());
    let mut p10 = Vec::with_capacity(thresholds.len());
    for (l, &theta) in thresholds.iter().enumerate() {
        let a = norm_cdf((params.mu0[l] - theta) / params.sigma0[l]);
        let b = norm_cdf((theta - params.mu1[l]) / params.sigma1[l]);
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0) {
            return Err(Error::Numerical(format!(
                "round {}: crossover probabilities ({a}, {b}) degenerate",
                l + 1
            )));
        }
        p01.push(a);
        p10.push(b);
    }
    Ok(BacParams {
        theta: Some(thresholds.to_vec()),
        p01,
        p10,
    })
}

#[inline]
fn log_likelihood_with(x: u32, c: u32, transitions: &[[[f64; 2]; 2]]) -> f64 {
    let mut acc = 0.0;
    for (l, t) in transitions.iter().enumerate() {
        acc += t[((c >> l) & 1) as usize][((x >> l) & 1) as usize];
    }
    acc
}

/// `ln Pr(x | c)` under the per-round channel.
pub fn log_likelihood(x: u32, c: Codeword, bac: &BacParams) -> f64 {
    log_likelihood_with(x, c.bits(), &bac.log_transitions())
}

/// `ln Pr(x | word_k)` for every sequence `x` and codebook word `k`.
#[derive(Clone, Debug)]
pub struct LikelihoodTable {
    length: usize,
    codes: usize,
    /// Sequence-major: `log[x * codes + k]`.
    log: Vec<f64>,
    /// Code-major linear probabilities: `prob[k << length | x]`.
    prob: Vec<f64>,
}

impl LikelihoodTable {
    pub fn build(codebook: &Codebook, bac: &BacParams) -> Result<Self> {
        let length = codebook.length();
        if bac.rounds() != length {
            return Err(Error::LengthMismatch {
                expected: length,
                got: bac.rounds(),
            });
        }
        if length > MAX_TABLE_LENGTH {
            return Err(Error::Size(format!(
                "code length {length} exceeds the table limit of {MAX_TABLE_LENGTH}"
            )));
        }
        let transitions = bac.log_transitions();
        let words: Vec<u32> = codebook.words().iter().map(|w| w.bits()).collect();
        let codes = words.len();
        let n = 1usize << length;
        let mut log = vec![0.0; n * codes];
        log.par_chunks_mut(codes * 1024)
            .enumerate()
            .for_each(|(block, chunk)| {
                for (i, row) in chunk.chunks_mut(codes).enumerate() {
                    let x = (block * 1024 + i) as u32;
                    for (k, v) in row.iter_mut().enumerate() {
                        *v = log_likelihood_with(x, words[k], &transitions);
                    }
                }
            });
        let mut prob = vec![0.0; n * codes];
        prob.par_chunks_mut(n).enumerate().for_each(|(k, col)| {
            for (x, v) in col.iter_mut().enumerate() {
                *v = log[x * codes + k].exp();
            }
        });
        Ok(LikelihoodTable {
            length,
            codes,
            log,
            prob,
        })
    }

    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }

    #[inline]
    pub fn sequences(&self) -> usize {
        1 << self.length
    }

    #[inline]
    pub fn codes(&self) -> usize {
        self.codes
    }

    #[inline]
    pub fn log(&self, x: u32, k: usize) -> f64 {
        self.log[x as usize * self.codes + k]
    }

    /// All `ln Pr(x | word_k)` for one sequence.
    #[inline]
    pub fn log_row(&self, x: u32) -> &[f64] {
        let start = x as usize * self.codes;
        &self.log[start..start + self.codes]
    }

    /// `Pr(x | word_k)` for all `x`, indexed by `x`.
    #[inline]
    pub fn prob_column(&self, k: usize) -> &[f64] {
        let n = self.sequences();
        &self.prob[k * n..(k + 1) * n]
    }
}

/// Rows of positive linear intensities, one column per round.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityTable {
    rounds: usize,
    values: Vec<f64>,
    /// Ground-truth molecule per row, when known.
    pub truth: Option<Vec<usize>>,
}

impl IntensityTable {
    /// Row-major `values`; every entry must be strictly positive.
    pub fn new(rounds: usize, values: Vec<f64>, truth: Option<Vec<usize>>) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::Size("intensity table has no columns".into()));
        }
        if values.len() % rounds != 0 {
            return Err(Error::Size(format!(
                "{} values do not fill rows of {rounds}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Domain(format!(
                "row {}, column {}: intensity {} is not positive",
                i / rounds,
                i % rounds + 1,
                values[i]
            )));
        }
        let rows = values.len() / rounds;
        if let Some(t) = &truth {
            if t.len() != rows {
                return Err(Error::LengthMismatch {
                    expected: rows,
                    got: t.len(),
                });
            }
        }
        Ok(IntensityTable {
            rounds,
            values,
            truth,
        })
    }

    #[inline]
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.values.len() / self.rounds
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.rounds..(i + 1) * self.rounds]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Copy of one column.
    pub fn column(&self, l: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(l)
            .step_by(self.rounds)
            .copied()
            .collect()
    }
}

const SIM_BLOCK: usize = 4096;

/// Draws `n` molecules from the generative model.
///
/// Rows are produced in fixed blocks, each from its own stream of `seed`,
/// so output is identical for any thread count.
pub fn simulate(
    codebook: &Codebook,
    assignment: &AssignmentMap,
    prior: &PriorDist,
    params: &GaussianChannelParams,
    n: usize,
    seed: u64,
) -> Result<IntensityTable> {
    assignment.check_against(codebook)?;
    params.check()?;
    if params.rounds() != codebook.length() {
        return Err(Error::LengthMismatch {
            expected: codebook.length(),
            got: params.rounds(),
        });
    }
    if prior.len() != assignment.molecules() {
        return Err(Error::LengthMismatch {
            expected: assignment.molecules(),
            got: prior.len(),
        });
    }
    if n == 0 {
        return Err(Error::Size("simulation needs at least one row".into()));
    }
    let rounds = codebook.length();
    let mut cumulative = Vec::with_capacity(prior.len());
    let mut acc = 0.0;
    for &p in prior.probs() {
        acc += p;
        cumulative.push(acc);
    }
    let total = acc;
    let codes: Vec<Codeword> = (0..assignment.molecules())
        .map(|g| assignment.codeword(codebook, g))
        .collect();

    let mut values = vec![0.0; n * rounds];
    let mut truth = vec![0usize; n];
    values
        .par_chunks_mut(SIM_BLOCK * rounds)
        .zip(truth.par_chunks_mut(SIM_BLOCK))
        .enumerate()
        .for_each(|(block, (vals, tr))| {
            let mut rng = stream_rng(seed, stream_id(1, 0, block as u64));
            for (row, t) in vals.chunks_mut(rounds).zip(tr.iter_mut()) {
                let u = rng.random::<f64>() * total;
                let g = cumulative
                    .partition_point(|&c| c <= u)
                    .min(cumulative.len() - 1);
                *t = g;
                let c = codes[g];
                for (l, v) in row.iter_mut().enumerate() {
                    let z: f64 = rng.sample(StandardNormal);
                    let y = if c.bit(l) {
                        params.mu1[l] + params.sigma1[l] * z
                    } else {
                        params.mu0[l] + params.sigma0[l] * z
                    };
                    *v = y.exp();
                }
            }
        });
    IntensityTable::new(rounds, values, Some(truth))
}

/// Hard-thresholds every row: bit `l` is 1 iff `ln I_l > theta_l`.
pub fn quantize(table: &IntensityTable, thresholds: &[f64]) -> Result<Vec<u32>> {
    if thresholds.len() != table.rounds() {
        return Err(Error::LengthMismatch {
            expected: table.rounds(),
            got: thresholds.len(),
        });
    }
    if table.rounds() > 32 {
        return Err(Error::Size("more than 32 rounds".into()));
    }
    (0..table.rows())
        .map(|i| {
            quantize_row(table.row(i), thresholds).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("row {i}: {msg}")),
                other => other,
            })
        })
        .collect()
}

/// Quantizes a single row.
pub fn quantize_row(row: &[f64], thresholds: &[f64]) -> Result<u32> {
    let mut x = 0u32;
    for (l, (&v, &theta)) in row.iter().zip(thresholds).enumerate() {
        if !(v > 0.0) {
            return Err(Error::Domain(format!(
                "column {}: intensity {v} is not positive",
                l + 1
            )));
        }
        if v.ln() > theta {
            x |= 1 << l;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::{generate_mhd4, random_assignment, sample_dirichlet_prior};
    use crate::special::log_sum_exp;

    fn toy_params() -> GaussianChannelParams {
        GaussianChannelParams::new(
            vec![0.0, 1.0],
            vec![0.5, 0.3],
            vec![2.0, 4.0],
            vec![0.5, 0.9],
        )
        .unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(GaussianChannelParams::new(vec![1.0], vec![0.5], vec![0.5], vec![0.5]).is_err());
        assert!(GaussianChannelParams::new(vec![0.0], vec![0.0], vec![1.0], vec![0.5]).is_err());
        assert!(GaussianChannelParams::new(vec![0.0], vec![0.5], vec![1.0], vec![]).is_err());
    }

    #[test]
    fn symmetric_threshold_is_midpoint() {
        let p = GaussianChannelParams::new(vec![1.0], vec![0.4], vec![3.0], vec![0.4]).unwrap();
        let t = thresholds_for_weights(&p, &[0.5]).unwrap();
        assert!((t[0] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn equal_variance_threshold_closed_form() {
        let (m0, m1, s) = (0.5, 2.5, 0.6);
        let p = GaussianChannelParams::new(vec![m0], vec![s], vec![m1], vec![s]).unwrap();
        for &w1 in &[0.1, 0.25, 0.7] {
            let t = thresholds_for_weights(&p, &[w1]).unwrap()[0];
            let expected = 0.5 * (m0 + m1) + s * s * ((1.0 - w1) / w1).ln() / (m1 - m0);
            assert!((t - expected).abs() < 1e-12, "w1 {w1}: {t} vs {expected}");
        }
    }

    #[test]
    fn unequal_variance_threshold_balances_responsibilities() {
        let p = toy_params();
        for &w1 in &[0.05, 0.25, 0.5, 0.8] {
            let t = thresholds_for_weights(&p, &[w1, w1]).unwrap();
            for l in 0..2 {
                let on = w1 * norm_log_pdf(t[l], p.mu1[l], p.sigma1[l]).exp();
                let off = (1.0 - w1) * norm_log_pdf(t[l], p.mu0[l], p.sigma0[l]).exp();
                assert!(((on - off) / off).abs() < 1e-10, "round {l}, w1 {w1}");
                assert!(t[l] > p.mu0[l] && t[l] < p.mu1[l]);
            }
        }
    }

    #[test]
    fn degenerate_rounds_are_named() {
        let p = toy_params();
        match thresholds_for_weights(&p, &[0.5, 0.0]) {
            Err(Error::DegenerateRound { round: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(thresholds_for_weights(&p, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn bac_examples() {
        let p = toy_params();
        let bac = bac_from_gaussian(&p, &[0.0, 2.0]).unwrap();
        assert!((bac.p01[0] - 0.5).abs() < 1e-15);
        let sym = GaussianChannelParams::new(vec![0.0], vec![0.7], vec![3.0], vec![0.7]).unwrap();
        let bac = bac_from_gaussian(&sym, &[1.5]).unwrap();
        assert!((bac.p01[0] - bac.p10[0]).abs() < 1e-15);
    }

    #[test]
    fn raising_threshold_trades_false_alarm_for_fallout() {
        let p = toy_params();
        let mut prev = bac_from_gaussian(&p, &[0.2, 1.2]).unwrap();
        for i in 1..30 {
            let t = 0.2 + 0.05 * i as f64;
            let bac = bac_from_gaussian(&p, &[t, t + 1.0]).unwrap();
            for l in 0..2 {
                assert!(bac.p01[l] < prev.p01[l]);
                assert!(bac.p10[l] > prev.p10[l]);
            }
            prev = bac;
        }
    }

    #[test]
    fn calibrated_params_reproduce_target_rates() {
        let p01 = [0.046, 0.03, 0.06];
        let p10 = [0.102, 0.08, 0.12];
        let w1 = [0.25, 0.2, 0.3];
        let params = GaussianChannelParams::calibrated(6.0, 0.5, &p01, &p10, &w1).unwrap();
        let theta = thresholds_for_weights(&params, &w1).unwrap();
        let bac = bac_from_gaussian(&params, &theta).unwrap();
        for l in 0..3 {
            assert!((bac.p01[l] - p01[l]).abs() < 1e-10);
            assert!((bac.p10[l] - p10[l]).abs() < 1e-10);
        }
    }

    #[test]
    fn log_likelihood_examples() {
        let exact = BacParams::uniform(3, 1e-300, 1e-300).unwrap();
        let c = Codeword::new(0b101, 3).unwrap();
        assert_eq!(log_likelihood(0b101, c, &exact), 0.0);

        let bsc = BacParams::uniform(3, 0.1, 0.1).unwrap();
        assert!((log_likelihood(0b101, c, &bsc) - 3.0 * 0.9f64.ln()).abs() < 1e-15);

        let bac = BacParams::uniform(3, 0.1, 0.2).unwrap();
        let zero = Codeword::new(0, 3).unwrap();
        // Round 1 reads 1 while the others stay 0.
        let expected = 2.0 * 0.9f64.ln() + 0.1f64.ln();
        assert!((log_likelihood(0b001, zero, &bac) - expected).abs() < 1e-15);
    }

    #[test]
    fn bac_validation() {
        assert!(BacParams::uniform(3, 0.0, 0.1).is_err());
        assert!(BacParams::uniform(3, 0.1, 1.0).is_err());
        assert!(BacParams::new(vec![0.1], vec![0.1, 0.2]).is_err());
    }

    #[test]
    fn toy_table_matches_hand_enumeration() {
        let cb = Codebook::from_words(
            3,
            vec![
                Codeword::new(0b000, 3).unwrap(),
                Codeword::new(0b111, 3).unwrap(),
            ],
        )
        .unwrap();
        let bac = BacParams::uniform(3, 0.1, 0.2).unwrap();
        let table = LikelihoodTable::build(&cb, &bac).unwrap();
        for x in 0..8u32 {
            let ones = x.count_ones() as i32;
            let p_zero = 0.1f64.powi(ones) * 0.9f64.powi(3 - ones);
            let p_one = 0.8f64.powi(ones) * 0.2f64.powi(3 - ones);
            assert!((table.prob_column(0)[x as usize] - p_zero).abs() < 1e-15);
            assert!((table.prob_column(1)[x as usize] - p_one).abs() < 1e-15);
        }
    }

    #[test]
    fn mhd4_table_is_exact_and_normalized() {
        let cb = generate_mhd4();
        let p01: Vec<f64> = (0..16).map(|l| 0.03 + 0.002 * l as f64).collect();
        let p10: Vec<f64> = (0..16).map(|l| 0.12 - 0.003 * l as f64).collect();
        let bac = BacParams::new(p01, p10).unwrap();
        let table = LikelihoodTable::build(&cb, &bac).unwrap();
        // Bit-exact against per-call evaluation on a deterministic sample.
        let mut rng = stream_rng(1, 0);
        for _ in 0..100 {
            let x = rng.random_range(0..1u32 << 16);
            let k = rng.random_range(0..cb.len());
            assert_eq!(table.log(x, k), log_likelihood(x, cb.words()[k], &bac));
        }
        // Each codeword's distribution over all 2^16 sequences sums to 1.
        for k in 0..cb.len() {
            let total: f64 = table.prob_column(k).iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "code {k}: {total}");
            let column: Vec<f64> = (0..1u32 << 16).map(|x| table.log(x, k)).collect();
            assert!(log_sum_exp(&column).abs() < 1e-9);
        }
    }

    #[test]
    fn table_length_guard() {
        let cb = Codebook::from_words(25, vec![Codeword::new(0, 25).unwrap()]).unwrap();
        let bac = BacParams::uniform(25, 0.1, 0.1).unwrap();
        assert!(matches!(
            LikelihoodTable::build(&cb, &bac),
            Err(Error::Size(_))
        ));
    }

    #[test]
    fn quantize_examples() {
        let theta = [1.0, -0.5, 2.0];
        let up: Vec<f64> = theta.iter().map(|t: &f64| t.exp() * 2.0).collect();
        let down: Vec<f64> = theta.iter().map(|t: &f64| t.exp() / 2.0).collect();
        let table = IntensityTable::new(3, [up, down].concat(), None).unwrap();
        assert_eq!(quantize(&table, &theta).unwrap(), vec![0b111, 0b000]);
        // ln(e^0) == 0 exactly, so the tie maps to 0.
        assert_eq!(quantize_row(&[1.0], &[0.0]).unwrap(), 0);
        assert!(quantize_row(&[1.0, 0.0], &[0.0, 0.0]).is_err());
        assert!(IntensityTable::new(2, vec![1.0, -1.0], None).is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_matches_prior() {
        let cb = generate_mhd4();
        let a = random_assignment(&cb, 20, 3).unwrap();
        let prior = sample_dirichlet_prior(20, 1.0, 4).unwrap();
        let w1 = round_weights(&cb, &a, &prior).unwrap();
        let params =
            GaussianChannelParams::calibrated(5.0, 0.4, &[0.046; 16], &[0.102; 16], &w1).unwrap();
        let n = 200_000;
        let t1 = simulate(&cb, &a, &prior, &params, n, 9).unwrap();
        let t2 = simulate(&cb, &a, &prior, &params, n, 9).unwrap();
        assert_eq!(t1, t2);
        let truth = t1.truth.as_ref().unwrap();
        let mut counts = vec![0usize; 20];
        for &g in truth {
            counts[g] += 1;
        }
        for (g, &c) in counts.iter().enumerate() {
            let p = prior.probs()[g];
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (c as f64 - n as f64 * p).abs() <= 3.0 * sd + 1.0,
                "molecule {g}"
            );
        }
        // Column means of log intensity against the mixture mean, 4 sigma
        // across 16 simultaneous checks.
        for l in 0..16 {
            let logs: Vec<f64> = t1.column(l).iter().map(|v| v.ln()).collect();
            let mean = logs.iter().sum::<f64>() / n as f64;
            let mix_mean = w1[l] * params.mu1[l] + (1.0 - w1[l]) * params.mu0[l];
            let mix_var = w1[l] * (params.sigma1[l].powi(2) + params.mu1[l].powi(2))
                + (1.0 - w1[l]) * (params.sigma0[l].powi(2) + params.mu0[l].powi(2))
                - mix_mean * mix_mean;
            assert!(
                (mean - mix_mean).abs() < 4.0 * (mix_var / n as f64).sqrt(),
                "round {l}"
            );
        }
    }

    #[test]
    fn empirical_crossover_matches_bac() {
        let cb = generate_mhd4();
        let a = random_assignment(&cb, 140, 5).unwrap();
        let prior = PriorDist::uniform(140).unwrap();
        let w1 = round_weights(&cb, &a, &prior).unwrap();
        let p01: Vec<f64> = (0..16).map(|l| 0.03 + 0.002 * l as f64).collect();
        let p10: Vec<f64> = (0..16).map(|l| 0.08 + 0.003 * l as f64).collect();
        let params = GaussianChannelParams::calibrated(5.0, 0.4, &p01, &p10, &w1).unwrap();
        let theta = quantization_thresholds(&params, &cb, &a, &prior).unwrap();
        let bac = bac_from_gaussian(&params, &theta).unwrap();
        let n = 1_000_000;
        let table = simulate(&cb, &a, &prior, &params, n, 17).unwrap();
        let bits = quantize(&table, &theta).unwrap();
        let truth = table.truth.as_ref().unwrap();
        let mut flips = [[0usize; 2]; 16];
        let mut sent = [[0usize; 2]; 16];
        for (x, &g) in bits.iter().zip(truth) {
            let c = a.codeword(&cb, g);
            for l in 0..16 {
                let s = c.bit(l) as usize;
                sent[l][s] += 1;
                if ((x >> l) & 1) as usize != s {
                    flips[l][s] += 1;
                }
            }
        }
        for l in 0..16 {
            for (s, p) in [(0, bac.p01[l]), (1, bac.p10[l])] {
                let m = sent[l][s] as f64;
                let rate = flips[l][s] as f64 / m;
                let sd = (p * (1.0 - p) / m).sqrt();
                assert!(
                    (rate - p).abs() < 3.0 * sd,
                    "round {l}, symbol {s}: {rate} vs {p}"
                );
            }
        }
    }
}
