//! Evolutionary search over code assignments.
//!
//! Fitness is the exact mean per-molecule FDR of the chosen decoder, so a
//! lower value is better. The likelihood table is shared by every
//! evaluation; only the assignment and the decoder prior offsets change.

use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::LikelihoodTable;
use crate::codebook::{
    hamming_distance, random_assignment_with, AssignmentMap, Codebook, PriorDist,
};
use crate::decoder::{build_voronoi, confusion, metrics, DecoderKind, DecoderSpec};
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};

/// Which codes a mutating molecule may swap with.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapPool {
    /// Other molecules and every code no molecule carries.
    #[default]
    IncludeUnused,
    /// Other molecules only; the set of used codes never changes.
    UsedOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvoConfig {
    pub population_size: usize,
    /// Per-molecule probability of initiating a swap in each mutation.
    pub mutation_prob: f64,
    pub generations: usize,
    pub seed: u64,
    #[serde(serialize_with = "serialize_kind")]
    pub decoder: DecoderKind,
    pub pool: SwapPool,
}

fn serialize_kind<S: serde::Serializer>(
    kind: &DecoderKind,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(kind)
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population_size: 64,
            mutation_prob: 0.05,
            generations: 50,
            seed: 0,
            decoder: DecoderKind::Map,
            pool: SwapPool::IncludeUnused,
        }
    }
}

impl EvoConfig {
    pub fn check(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Domain(format!(
                "population size must be at least 2, got {}",
                self.population_size
            )));
        }
        if !(self.mutation_prob > 0.0 && self.mutation_prob < 1.0) {
            return Err(Error::Domain(format!(
                "mutation probability must lie in (0, 1), got {}",
                self.mutation_prob
            )));
        }
        if self.generations == 0 {
            return Err(Error::Domain("at least one generation is required".into()));
        }
        Ok(())
    }
}

/// Population summary after selection. Generation 0 is the initial population.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub best_fdr: f64,
    pub mean_fdr: f64,
    /// Population mean of the order parameter; NaN when fewer than 3 molecules.
    pub mean_chi: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvoHistory {
    pub generations: Vec<GenerationStats>,
    pub best: AssignmentMap,
    pub best_fitness: f64,
}

/// Everything a fitness evaluation needs besides the assignment.
pub struct FitnessContext<'a> {
    codebook: &'a Codebook,
    table: &'a LikelihoodTable,
    prior: &'a PriorDist,
    spec: DecoderSpec,
}

impl<'a> FitnessContext<'a> {
    /// The decoder prior is the true prior for MAP-type decoders.
    pub fn new(
        codebook: &'a Codebook,
        table: &'a LikelihoodTable,
        prior: &'a PriorDist,
        decoder: DecoderKind,
    ) -> Result<Self> {
        Ok(FitnessContext {
            codebook,
            table,
            prior,
            spec: DecoderSpec::new(decoder, prior.clone())?,
        })
    }

    pub fn evaluate(&self, assignment: &AssignmentMap) -> Result<f64> {
        let voronoi = build_voronoi(&self.spec, self.codebook, assignment, self.table)?;
        let conf = confusion(&voronoi, assignment, self.prior, self.table)?;
        Ok(metrics(&conf, self.prior)?.mean_fdr)
    }
}

/// Exact mean FDR of `decoder` for this assignment.
pub fn fitness(
    assignment: &AssignmentMap,
    prior: &PriorDist,
    codebook: &Codebook,
    table: &LikelihoodTable,
    decoder: DecoderKind,
) -> Result<f64> {
    FitnessContext::new(codebook, table, prior, decoder)?.evaluate(assignment)
}

/// Visits molecules in order; each starts a swap with probability `prob`,
/// with a partner drawn uniformly from the pool.
pub fn mutate<R: Rng + ?Sized>(
    assignment: &AssignmentMap,
    prob: f64,
    pool: SwapPool,
    rng: &mut R,
) -> AssignmentMap {
    let mut out = assignment.clone();
    let g_count = out.molecules();
    let k = out.codebook_size();
    for g in 0..g_count {
        if rng.random::<f64>() >= prob {
            continue;
        }
        let unused = match pool {
            SwapPool::IncludeUnused => k - g_count,
            SwapPool::UsedOnly => 0,
        };
        let partners = g_count - 1 + unused;
        if partners == 0 {
            continue;
        }
        let j = rng.random_range(0..partners);
        if j < g_count - 1 {
            out.swap_molecules(g, if j < g { j } else { j + 1 });
        } else {
            let code = out.unused()[j - (g_count - 1)];
            out.set_code_unchecked(g, code);
        }
    }
    out
}

/// Spearman rank correlation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spearman {
    /// 0 when either input is constant.
    pub rho: f64,
    pub constant_input: bool,
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Spearman> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::Size(
            "Spearman correlation needs at least 2 points".into(),
        ));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Spearman {
            rho: 0.0,
            constant_input: true,
        });
    }
    Ok(Spearman {
        rho: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        constant_input: false,
    })
}

/// Mean over molecules of the rank correlation between Hamming distance and
/// abundance distance `|pi_g - pi_h|` to every other molecule's code.
pub fn order_parameter(
    assignment: &AssignmentMap,
    codebook: &Codebook,
    prior: &PriorDist,
) -> Result<f64> {
    let g_count = assignment.molecules();
    if g_count < 3 {
        return Err(Error::Size(format!(
            "order parameter needs at least 3 molecules, got {g_count}"
        )));
    }
    if prior.len() != g_count {
        return Err(Error::LengthMismatch {
            expected: g_count,
            got: prior.len(),
        });
    }
    let pi = prior.probs();
    let words: Vec<_> = (0..g_count)
        .map(|g| assignment.codeword(codebook, g))
        .collect();
    let mut dh = Vec::with_capacity(g_count - 1);
    let mut dp = Vec::with_capacity(g_count - 1);
    let mut total = 0.0;
    for g in 0..g_count {
        dh.clear();
        dp.clear();
        for h in (0..g_count).filter(|&h| h != g) {
            dh.push(f64::from(hamming_distance(words[g], words[h])));
            dp.push((pi[g] - pi[h]).abs());
        }
        total += spearman(&dh, &dp)?.rho;
    }
    Ok(total / g_count as f64)
}

fn population_stats(
    generation: usize,
    population: &[AssignmentMap],
    fitness: &[f64],
    codebook: &Codebook,
    prior: &PriorDist,
) -> Result<GenerationStats> {
    let n = population.len() as f64;
    let mean_chi = if prior.len() < 3 {
        f64::NAN
    } else {
        population
            .par_iter()
            .map(|a| order_parameter(a, codebook, prior))
            .collect::<Result<Vec<f64>>>()?
            .iter()
            .sum::<f64>()
            / n
    };
    Ok(GenerationStats {
        generation,
        best_fdr: fitness.iter().cloned().fold(f64::INFINITY, f64::min),
        mean_fdr: fitness.iter().sum::<f64>() / n,
        mean_chi,
    })
}

fn by_fitness(fit: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| fit[a].total_cmp(&fit[b]).then(a.cmp(&b))
}

/// Elitist (mu + lambda) evolution without crossover.
pub fn evolve(
    config: &EvoConfig,
    prior: &PriorDist,
    codebook: &Codebook,
    table: &LikelihoodTable,
) -> Result<EvoHistory> {
    evolve_with(config, prior, codebook, table, |_| Ok(()))
}

/// As [`evolve`], calling `on_generation` after every selection step
/// (and once for the initial population).
///
/// Member `i` of the initial population and the mutant of member `i` at
/// generation `t` each draw from a dedicated random stream, so the history
/// is independent of the thread count. Selection keeps the fittest
/// `population_size` of parents followed by mutants, ties going to the
/// earlier index.
pub fn evolve_with<F>(
    config: &EvoConfig,
    prior: &PriorDist,
    codebook: &Codebook,
    table: &LikelihoodTable,
    mut on_generation: F,
) -> Result<EvoHistory>
where
    F: FnMut(&GenerationStats) -> Result<()>,
{
    config.check()?;
    let g_count = prior.len();
    let ctx = FitnessContext::new(codebook, table, prior, config.decoder)?;
    let n = config.population_size;

    let mut population: Vec<AssignmentMap> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, stream_id(4, 0, i as u64));
            random_assignment_with(codebook.len(), g_count, &mut rng)
        })
        .collect::<Result<_>>()?;
    let mut fit: Vec<f64> = population
        .par_iter()
        .map(|a| ctx.evaluate(a))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(by_fitness(&fit));
    population = order.iter().map(|&i| population[i].clone()).collect();
    fit = order.iter().map(|&i| fit[i]).collect();

    let mut history = Vec::with_capacity(config.generations + 1);
    let stats = population_stats(0, &population, &fit, codebook, prior)?;
    on_generation(&stats)?;
    history.push(stats);

    for t in 1..=config.generations {
        let mutants: Vec<(AssignmentMap, f64)> = population
            .par_iter()
            .enumerate()
            .map(|(i, parent)| {
                let mut rng = stream_rng(config.seed, stream_id(4, t as u64, i as u64));
                let child = mutate(parent, config.mutation_prob, config.pool, &mut rng);
                let f = ctx.evaluate(&child)?;
                Ok((child, f))
            })
            .collect::<Result<_>>()?;
        let mut pool_fit = fit.clone();
        let mut pool: Vec<AssignmentMap> = std::mem::take(&mut population);
        for (child, f) in mutants {
            pool.push(child);
            pool_fit.push(f);
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(by_fitness(&pool_fit));
        order.truncate(n);
        population = order.iter().map(|&i| pool[i].clone()).collect();
        fit = order.iter().map(|&i| pool_fit[i]).collect();
        let stats = population_stats(t, &population, &fit, codebook, prior)?;
        on_generation(&stats)?;
        history.push(stats);
    }
    Ok(EvoHistory {
        generations: history,
        best: population[0].clone(),
        best_fitness: fit[0],
    })
}
