//! Two-component Gaussian mixture fits of log-intensity columns.
//!
//! Each column is fitted on the natural log of its intensities by EM started
//! from a median split. Component 1 is always the one with the larger mean.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{GaussianChannelParams, IntensityTable};
use crate::error::{Error, Result};
use crate::rng::{stream_id, stream_rng};
use crate::special::{log_sum_exp, norm_log_pdf, norm_quantile, quantile_sorted};

/// Shortest column EM will fit.
pub const MIN_COLUMN: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EmConfig {
    /// Stop when successive log-likelihoods differ by less than
    /// `tol * max(|ll|, 1)`.
    pub tol: f64,
    pub max_iter: usize,
    pub sigma_floor: f64,
    /// Extra randomly initialized runs; the best log-likelihood is kept.
    pub restarts: usize,
    pub seed: u64,
    /// Fits with `mu1 - mu0` below this are flagged as poorly separated.
    pub separation_floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            tol: 1e-8,
            max_iter: 500,
            sigma_floor: 1e-3,
            restarts: 0,
            seed: 0,
            separation_floor: 0.5,
        }
    }
}

impl EmConfig {
    fn check(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.sigma_floor > 0.0 && self.max_iter > 0) {
            return Err(Error::Domain(
                "EM needs positive tol, sigma_floor and max_iter".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Mixture {
    w1: f64,
    mu: [f64; 2],
    sigma: [f64; 2],
}

impl Mixture {
    #[inline]
    fn log_joint(&self, y: f64) -> [f64; 2] {
        [
            (1.0 - self.w1).ln() + norm_log_pdf(y, self.mu[0], self.sigma[0]),
            self.w1.ln() + norm_log_pdf(y, self.mu[1], self.sigma[1]),
        ]
    }
}

/// Fitted mixture of one column, in log-intensity units.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnFit {
    pub w0: f64,
    pub w1: f64,
    pub mu0: f64,
    pub sigma0: f64,
    pub mu1: f64,
    pub sigma1: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observed-data log-likelihood before the first and after every M step.
    pub trace: Vec<f64>,
}

impl ColumnFit {
    fn mixture(&self) -> Mixture {
        Mixture {
            w1: self.w1,
            mu: [self.mu0, self.mu1],
            sigma: [self.sigma0, self.sigma1],
        }
    }
}

fn log_column(column: &[f64]) -> Result<Vec<f64>> {
    if column.len() < MIN_COLUMN {
        return Err(Error::Size(format!(
            "EM needs at least {MIN_COLUMN} values, got {}",
            column.len()
        )));
    }
    column
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if v > 0.0 && v.is_finite() {
                Ok(v.ln())
            } else {
                Err(Error::Domain(format!(
                    "value {v} at row {} is not positive",
                    i + 1
                )))
            }
        })
        .collect()
}

fn spread(values: &[f64], floor: f64) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt().max(floor)
}

fn median_split(sorted: &[f64], floor: f64) -> Mixture {
    let half = sorted.len() / 2;
    Mixture {
        w1: 0.5,
        mu: [quantile_sorted(sorted, 0.25), quantile_sorted(sorted, 0.75)],
        sigma: [
            spread(&sorted[..half], floor),
            spread(&sorted[half..], floor),
        ],
    }
}

fn random_start<R: Rng>(ys: &[f64], floor: f64, rng: &mut R) -> Mixture {
    let a = ys[rng.random_range(0..ys.len())];
    let b = ys[rng.random_range(0..ys.len())];
    let s = spread(ys, floor);
    Mixture {
        w1: 0.5,
        mu: [a.min(b), a.max(b)],
        sigma: [s, s],
    }
}

/// E step: fills responsibilities of component 1, returns the log-likelihood.
fn e_step(m: &Mixture, ys: &[f64], resp: &mut [f64]) -> f64 {
    let mut ll = 0.0;
    for (r, &y) in resp.iter_mut().zip(ys) {
        let lj = m.log_joint(y);
        let lse = log_sum_exp(&lj);
        *r = (lj[1] - lse).exp();
        ll += lse;
    }
    ll
}

fn m_step(prev: &Mixture, ys: &[f64], resp: &[f64], floor: f64) -> Mixture {
    let n = ys.len() as f64;
    let mut mass = [0.0; 2];
    let mut sum = [0.0; 2];
    for (&r, &y) in resp.iter().zip(ys) {
        mass[0] += 1.0 - r;
        mass[1] += r;
        sum[0] += (1.0 - r) * y;
        sum[1] += r * y;
    }
    let mut next = *prev;
    next.w1 = mass[1] / n;
    for k in 0..2 {
        // An empty component keeps its shape; its weight carries the collapse.
        if mass[k] <= 1e-12 * n {
            continue;
        }
        let mu = sum[k] / mass[k];
        let mut ss = 0.0;
        for (&r, &y) in resp.iter().zip(ys) {
            let rk = if k == 1 { r } else { 1.0 - r };
            ss += rk * (y - mu) * (y - mu);
        }
        next.mu[k] = mu;
        next.sigma[k] = (ss / mass[k]).sqrt().max(floor);
    }
    next
}

fn run_em(start: Mixture, ys: &[f64], cfg: &EmConfig) -> ColumnFit {
    let mut resp = vec![0.0; ys.len()];
    let mut m = start;
    let mut ll = e_step(&m, ys, &mut resp);
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        let next = m_step(&m, ys, &resp, cfg.sigma_floor);
        let next_ll = e_step(&next, ys, &mut resp);
        iterations += 1;
        trace.push(next_ll);
        let delta = (next_ll - ll).abs();
        m = next;
        ll = next_ll;
        if delta < cfg.tol * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    let flip = m.mu[1] < m.mu[0];
    let (lo, hi) = if flip { (1, 0) } else { (0, 1) };
    let w1 = if flip { 1.0 - m.w1 } else { m.w1 };
    ColumnFit {
        w0: 1.0 - w1,
        w1,
        mu0: m.mu[lo],
        sigma0: m.sigma[lo],
        mu1: m.mu[hi],
        sigma1: m.sigma[hi],
        log_likelihood: ll,
        iterations,
        converged,
        trace,
    }
}

/// EM fit of a two-component mixture to `ln column`.
///
/// Fails only on short columns or non-positive values; running out of
/// iterations is reported through `converged`.
pub fn fit_em(column: &[f64], cfg: &EmConfig) -> Result<ColumnFit> {
    cfg.check()?;
    let ys = log_column(column)?;
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let mut best = run_em(median_split(&sorted, cfg.sigma_floor), &ys, cfg);
    for r in 0..cfg.restarts {
        let mut rng = stream_rng(cfg.seed, stream_id(3, 0, r as u64));
        let fit = run_em(random_start(&ys, cfg.sigma_floor, &mut rng), &ys, cfg);
        if fit.log_likelihood > best.log_likelihood {
            best = fit;
        }
    }
    Ok(best)
}

/// Per-column fits of a whole intensity table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelFit {
    pub params: GaussianChannelParams,
    pub columns: Vec<ColumnFit>,
    /// Fitted "on" weight of every round.
    pub w1: Vec<f64>,
    /// Rounds whose component means are closer than the separation floor.
    pub poorly_separated: Vec<bool>,
}

/// Fits every column independently.
///
/// Fails with a numerical error when some column ends with coincident means,
/// since no channel can be formed from it.
pub fn fit_all(table: &IntensityTable, cfg: &EmConfig) -> Result<ChannelFit> {
    let columns: Vec<ColumnFit> = (0..table.rounds())
        .into_par_iter()
        .map(|l| {
            fit_em(&table.column(l), cfg).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("column {}: {msg}", l + 1)),
                other => other,
            })
        })
        .collect::<Result<_>>()?;
    let params = GaussianChannelParams {
        mu0: columns.iter().map(|c| c.mu0).collect(),
        sigma0: columns.iter().map(|c| c.sigma0).collect(),
        mu1: columns.iter().map(|c| c.mu1).collect(),
        sigma1: columns.iter().map(|c| c.sigma1).collect(),
    };
    params
        .check()
        .map_err(|e| Error::Numerical(format!("fitted channel is unusable: {e}")))?;
    Ok(ChannelFit {
        w1: columns.iter().map(|c| c.w1).collect(),
        poorly_separated: columns
            .iter()
            .map(|c| c.mu1 - c.mu0 < cfg.separation_floor)
            .collect(),
        params,
        columns,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QqPoint {
    pub p: f64,
    pub theoretical: f64,
    pub empirical: f64,
}

/// QQ points of one mixture component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentQq {
    pub component: usize,
    /// Empty exactly when `empty` is set.
    pub points: Vec<QqPoint>,
    /// No observation was assigned to this component.
    pub empty: bool,
}

/// Type 6 empirical quantile, `p (n + 1)` with 1-based order statistics.
fn weibull_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = p * (n + 1) as f64;
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let lo = h.floor();
    let i = lo as usize - 1;
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

/// Per-component QQ data on the grid `p_i = i / (grid_size + 1)`.
///
/// Each observation is hard-assigned to the component with the larger
/// posterior responsibility, ties going to component 0.
pub fn qq_data(column: &[f64], fit: &ColumnFit, grid_size: usize) -> Result<[ComponentQq; 2]> {
    if grid_size == 0 {
        return Err(Error::Size("QQ grid needs at least one point".into()));
    }
    let m = fit.mixture();
    let mut parts: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for &v in column {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Domain(format!("value {v} is not positive")));
        }
        let y = v.ln();
        let lj = m.log_joint(y);
        parts[usize::from(lj[1] > lj[0])].push(y);
    }
    let result = [0, 1].map(|k| {
        let part = &mut parts[k];
        if part.is_empty() {
            return ComponentQq {
                component: k,
                points: Vec::new(),
                empty: true,
            };
        }
        part.sort_by(f64::total_cmp);
        let points = (1..=grid_size)
            .map(|i| {
                let p = i as f64 / (grid_size + 1) as f64;
                QqPoint {
                    p,
                    theoretical: m.mu[k] + m.sigma[k] * norm_quantile(p),
                    empirical: weibull_quantile(part, p),
                }
            })
            .collect();
        ComponentQq {
            component: k,
            points,
            empty: false,
        }
    });
    Ok(result)
}
