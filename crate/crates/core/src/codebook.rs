//! Binary codebooks, code-to-molecule assignments and molecule priors.
//!
//! Codewords are packed into a `u32` with bit `l` (zero based) holding the
//! symbol read out in imaging round `l + 1`. The same convention is used by
//! every other module and by the codebook file format, whose leftmost
//! character is round 1.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::special::{digamma, log_sum_exp};

/// Longest supported code.
pub const MAX_LENGTH: usize = 32;

/// An `L`-bit binary word, `L <= 32`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Codeword(u32);

impl Codeword {
    /// Builds a codeword, rejecting bits above position `length - 1`.
    pub fn new(bits: u32, length: usize) -> Result<Self> {
        if length == 0 || length > MAX_LENGTH {
            return Err(Error::Size(format!("code length {length} not in 1..=32")));
        }
        if length < 32 && bits >> length != 0 {
            return Err(Error::Domain(format!(
                "word {bits:#x} has bits set above length {length}"
            )));
        }
        Ok(Codeword(bits))
    }

    #[inline]
    pub fn bits(self) -> u32 {
        self.0
    }

    /// Symbol of round `l` (zero based).
    #[inline]
    pub fn bit(self, l: usize) -> bool {
        (self.0 >> l) & 1 == 1
    }

    #[inline]
    pub fn weight(self) -> u32 {
        self.0.count_ones()
    }

    /// Renders the word with round 1 leftmost.
    pub fn to_bit_string(self, length: usize) -> String {
        (0..length)
            .map(|l| if self.bit(l) { '1' } else { '0' })
            .collect()
    }

    /// Parses a `0`/`1` string with round 1 leftmost.
    pub fn parse_bit_string(s: &str) -> Result<(Self, usize)> {
        let length = s.len();
        if length == 0 || length > MAX_LENGTH {
            return Err(Error::Size(format!("code length {length} not in 1..=32")));
        }
        let mut bits = 0u32;
        for (l, ch) in s.chars().enumerate() {
            match ch {
                '0' => {}
                '1' => bits |= 1 << l,
                other => {
                    return Err(Error::Domain(format!(
                        "invalid symbol {other:?} in code {s:?}"
                    )))
                }
            }
        }
        Ok((Codeword(bits), length))
    }
}

/// Popcount of the XOR of two words.
#[inline]
pub fn hamming_distance(a: Codeword, b: Codeword) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Structural summary of a word list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationReport {
    pub distinct: bool,
    /// Smallest pairwise distance; `None` for fewer than two words.
    pub min_distance: Option<u32>,
    /// Popcount histogram.
    pub weights: BTreeMap<u32, usize>,
}

impl ValidationReport {
    pub fn constant_weight(&self) -> Option<u32> {
        if self.weights.len() == 1 {
            self.weights.keys().next().copied()
        } else {
            None
        }
    }
}

/// Exhaustive structural check of a word list. Never fails.
pub fn validate(words: &[Codeword]) -> ValidationReport {
    let mut weights = BTreeMap::new();
    for w in words {
        *weights.entry(w.weight()).or_insert(0) += 1;
    }
    let mut min_distance: Option<u32> = None;
    for (i, &a) in words.iter().enumerate() {
        for &b in &words[i + 1..] {
            let d = hamming_distance(a, b);
            min_distance = Some(min_distance.map_or(d, |m| m.min(d)));
        }
    }
    ValidationReport {
        distinct: min_distance != Some(0),
        min_distance,
        weights,
    }
}

/// An ordered list of distinct `L`-bit words with a distance guarantee.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Codebook {
    length: usize,
    words: Vec<Codeword>,
    min_distance: u32,
    weight: Option<u32>,
}

impl Codebook {
    /// Builds a codebook from explicit words, measuring its distance and
    /// weight profile. Fails on duplicates or out-of-range bits.
    pub fn from_words(length: usize, words: Vec<Codeword>) -> Result<Self> {
        if length == 0 || length > MAX_LENGTH {
            return Err(Error::Size(format!("code length {length} not in 1..=32")));
        }
        if words.is_empty() {
            return Err(Error::Size("codebook is empty".into()));
        }
        for w in &words {
            Codeword::new(w.bits(), length)?;
        }
        let report = validate(&words);
        if !report.distinct {
            return Err(Error::Domain("codebook contains duplicate words".into()));
        }
        Ok(Codebook {
            length,
            min_distance: report.min_distance.unwrap_or(length as u32 + 1),
            weight: report.constant_weight(),
            words,
        })
    }

    #[inline]
    pub fn length(&self) -> usize {
        self.length
    }

    #[inline]
    pub fn words(&self) -> &[Codeword] {
        &self.words
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn min_distance(&self) -> u32 {
        self.min_distance
    }

    pub fn weight(&self) -> Option<u32> {
        self.weight
    }

    pub fn validate(&self) -> ValidationReport {
        validate(&self.words)
    }
}

/// Columns of the [16,11,4] extended Hamming parity-check matrix, restricted
/// to the first 15 positions: position `j` carries the syndrome `j + 1`.
/// Position 15 is the overall parity bit.
fn hamming_syndrome(word: u32) -> u32 {
    (0..15)
        .filter(|&j| (word >> j) & 1 == 1)
        .fold(0, |s, j| s ^ (j + 1))
}

/// Encodes an 11-bit message systematically into the extended Hamming code.
fn encode_extended_hamming(message: u32) -> u32 {
    // Parity sits at the power-of-two syndrome positions 0, 1, 3, 7.
    const PARITY_POSITIONS: [u32; 4] = [0, 1, 3, 7];
    let mut word = 0u32;
    let mut m = 0;
    for j in 0..15u32 {
        if PARITY_POSITIONS.contains(&j) {
            continue;
        }
        if (message >> m) & 1 == 1 {
            word |= 1 << j;
        }
        m += 1;
    }
    let syndrome = hamming_syndrome(word);
    for (i, &p) in PARITY_POSITIONS.iter().enumerate() {
        if (syndrome >> i) & 1 == 1 {
            word |= 1 << p;
        }
    }
    if word.count_ones() % 2 == 1 {
        word |= 1 << 15;
    }
    word
}

/// True when `word` lies in the [16,11,4] extended Hamming code.
pub fn is_extended_hamming_codeword(word: u32) -> bool {
    word >> 16 == 0 && hamming_syndrome(word) == 0 && word.count_ones() % 2 == 0
}

/// The 140-word MHD4 codebook: all weight-4 words of the [16,11,4] extended
/// Hamming code, in ascending integer order.
pub fn generate_mhd4() -> Codebook {
    let mut words: Vec<Codeword> = (0..1u32 << 11)
        .map(encode_extended_hamming)
        .filter(|w| w.count_ones() == 4)
        .map(Codeword)
        .collect();
    words.sort_unstable();
    assert_eq!(
        words.len(),
        140,
        "extended Hamming code has 140 weight-4 words"
    );
    Codebook {
        length: 16,
        words,
        min_distance: 4,
        weight: Some(4),
    }
}

/// Bijection from molecules `0..G` onto `G` distinct codebook entries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AssignmentMap {
    /// `codes[g]` is the codebook index carried by molecule `g`.
    codes: Vec<usize>,
    codebook_size: usize,
}

impl AssignmentMap {
    pub fn new(codes: Vec<usize>, codebook_size: usize) -> Result<Self> {
        if codes.len() > codebook_size {
            return Err(Error::Size(format!(
                "{} molecules exceed codebook size {codebook_size}",
                codes.len()
            )));
        }
        let mut seen = vec![false; codebook_size];
        for &c in &codes {
            if c >= codebook_size {
                return Err(Error::Domain(format!(
                    "code index {c} out of range for codebook of size {codebook_size}"
                )));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Domain(format!("code index {c} assigned twice")));
            }
        }
        Ok(AssignmentMap {
            codes,
            codebook_size,
        })
    }

    /// Molecule `g` gets codebook entry `g`.
    pub fn identity(g: usize, codebook_size: usize) -> Result<Self> {
        Self::new((0..g).collect(), codebook_size)
    }

    #[inline]
    pub fn molecules(&self) -> usize {
        self.codes.len()
    }

    #[inline]
    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    #[inline]
    pub fn code_index(&self, molecule: usize) -> usize {
        self.codes[molecule]
    }

    pub fn code_indices(&self) -> &[usize] {
        &self.codes
    }

    pub fn codeword(&self, codebook: &Codebook, molecule: usize) -> Codeword {
        codebook.words()[self.codes[molecule]]
    }

    /// Codebook indices not carried by any molecule, ascending.
    pub fn unused(&self) -> Vec<usize> {
        let mut used = vec![false; self.codebook_size];
        for &c in &self.codes {
            used[c] = true;
        }
        (0..self.codebook_size).filter(|&c| !used[c]).collect()
    }

    /// Molecule carrying codebook entry `code`, if any.
    pub fn molecule_of(&self, code: usize) -> Option<usize> {
        self.codes.iter().position(|&c| c == code)
    }

    pub fn swap_molecules(&mut self, a: usize, b: usize) {
        self.codes.swap(a, b);
    }

    /// Moves molecule `g` onto an unused codebook entry.
    pub(crate) fn set_code_unchecked(&mut self, g: usize, code: usize) {
        self.codes[g] = code;
    }

    /// Checks that the map is consistent with `codebook`.
    pub fn check_against(&self, codebook: &Codebook) -> Result<()> {
        if self.codebook_size != codebook.len() {
            return Err(Error::LengthMismatch {
                expected: codebook.len(),
                got: self.codebook_size,
            });
        }
        Ok(())
    }
}

/// Uniformly random injection of `g` molecules into the codebook.
pub fn random_assignment(codebook: &Codebook, g: usize, seed: u64) -> Result<AssignmentMap> {
    let mut rng = stream_rng(seed, 0);
    random_assignment_with(codebook.len(), g, &mut rng)
}

pub(crate) fn random_assignment_with<R: Rng + ?Sized>(
    k: usize,
    g: usize,
    rng: &mut R,
) -> Result<AssignmentMap> {
    if g > k {
        return Err(Error::Size(format!(
            "{g} molecules exceed codebook size {k}"
        )));
    }
    let codes = index::sample(rng, k, g).into_vec();
    AssignmentMap::new(codes, k)
}

/// Molecule abundance distribution.
///
/// Held in log space as well as linear space: priors drawn at very small
/// Dirichlet concentrations have entries far below the smallest positive
/// `f64`, which are kept exactly in `log_probs` while `probs` may round to 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorDist {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

impl PriorDist {
    /// Validates strictly positive probabilities summing to 1 within 1e-9,
    /// then renormalizes exactly.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        Self::from_probs_with_tolerance(probs, 1e-9)
    }

    /// As [`PriorDist::from_probs`] with a caller-chosen sum tolerance.
    pub fn from_probs_with_tolerance(probs: Vec<f64>, tolerance: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Size("prior is empty".into()));
        }
        for (g, &p) in probs.iter().enumerate() {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Domain(format!(
                    "prior entry {g} is {p}; entries must be strictly positive"
                )));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > tolerance {
            return Err(Error::Domain(format!(
                "prior sums to {sum}, not 1 within {tolerance}"
            )));
        }
        let probs: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(PriorDist { probs, log_probs })
    }

    /// Normalizes finite log-weights into a distribution.
    pub fn from_log_weights(log_weights: &[f64]) -> Result<Self> {
        if log_weights.is_empty() {
            return Err(Error::Size("prior is empty".into()));
        }
        if let Some(g) = log_weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Domain(format!("log-weight {g} is not finite")));
        }
        Ok(Self::from_log_weights_unchecked(log_weights))
    }

    fn from_log_weights_unchecked(log_weights: &[f64]) -> Self {
        let lse = log_sum_exp(log_weights);
        let log_probs: Vec<f64> = log_weights.iter().map(|w| w - lse).collect();
        let probs = log_probs.iter().map(|l| l.exp()).collect();
        PriorDist { probs, log_probs }
    }

    pub fn uniform(g: usize) -> Result<Self> {
        Self::from_log_weights(&vec![0.0; g])
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    #[inline]
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    #[inline]
    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// True when all entries are equal.
    pub fn is_uniform(&self) -> bool {
        self.log_probs.windows(2).all(|w| w[0] == w[1])
    }
}

/// Natural log of a `Gamma(shape, 1)` variate, stable for tiny shapes.
fn ln_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let gamma = Gamma::new(shape, 1.0).expect("shape is positive and finite");
        gamma.sample(rng).ln()
    } else {
        // Gamma(a) = Gamma(a + 1) * U^(1/a), taken in log space.
        let gamma = Gamma::new(shape + 1.0, 1.0).expect("shape is positive and finite");
        let u: f64 = 1.0 - rng.random::<f64>();
        gamma.sample(rng).ln() + u.ln() / shape
    }
}

/// One draw from the symmetric Dirichlet `Dir(alpha * 1_G)`.
pub fn sample_dirichlet_prior(g: usize, alpha: f64, seed: u64) -> Result<PriorDist> {
    let mut rng = stream_rng(seed, 0);
    sample_dirichlet_with(g, alpha, &mut rng)
}

pub(crate) fn sample_dirichlet_with<R: Rng + ?Sized>(
    g: usize,
    alpha: f64,
    rng: &mut R,
) -> Result<PriorDist> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Domain(format!(
            "Dirichlet concentration must be positive, got {alpha}"
        )));
    }
    if g < 2 {
        return Err(Error::Size(format!(
            "Dirichlet prior needs G >= 2, got {g}"
        )));
    }
    let log_weights: Vec<f64> = (0..g).map(|_| ln_gamma_variate(alpha, rng)).collect();
    PriorDist::from_log_weights(&log_weights)
}

pub const ALPHA_MIN: f64 = 1e-6;
pub const ALPHA_MAX: f64 = 1e6;

/// Derivative of the symmetric-Dirichlet log-likelihood of `prior` in `alpha`,
/// up to the positive factor it shares with the root condition.
pub fn dirichlet_alpha_score(prior: &PriorDist, alpha: f64) -> f64 {
    let g = prior.len() as f64;
    let sum_log: f64 = prior.log_probs().iter().sum();
    g * digamma(g * alpha) - g * digamma(alpha) + sum_log
}

/// Maximum-likelihood symmetric Dirichlet concentration for one observed
/// probability vector, clamped to `[1e-6, 1e6]`.
pub fn estimate_dirichlet_alpha(prior: &PriorDist) -> Result<f64> {
    if prior.len() < 2 {
        return Err(Error::Size("need at least two categories".into()));
    }
    if prior.log_probs().iter().any(|l| !l.is_finite()) {
        return Err(Error::Domain("prior has a zero entry".into()));
    }
    // The score is decreasing in alpha.
    let score = |a: f64| dirichlet_alpha_score(prior, a);
    if score(ALPHA_MAX) >= 0.0 {
        return Ok(ALPHA_MAX);
    }
    if score(ALPHA_MIN) <= 0.0 {
        return Ok(ALPHA_MIN);
    }
    // Bisection in log alpha down to adjacent floats.
    let (mut lo, mut hi) = (ALPHA_MIN.ln(), ALPHA_MAX.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if score(mid.exp()) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (a_lo, a_hi) = (lo.exp(), hi.exp());
    let mut best = if score(a_lo).abs() <= score(a_hi).abs() {
        a_lo
    } else {
        a_hi
    };
    // A couple of secant steps remove the residual left by log-space rounding.
    let (mut x0, mut x1) = (a_lo, a_hi);
    for _ in 0..4 {
        let (f0, f1) = (score(x0), score(x1));
        if f1 == f0 {
            break;
        }
        let x2 = x1 - f1 * (x1 - x0) / (f1 - f0);
        if !(x2.is_finite() && x2 > 0.0) {
            break;
        }
        if score(x2).abs() < score(best).abs() {
            best = x2;
        }
        x0 = x1;
        x1 = x2;
    }
    Ok(best)
}

impl fmt::Display for Codeword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#b}", self.0)
    }
}
