//! Exact decoding over the full sequence space.
//!
//! For codes of up to 24 bits every observable sequence can be enumerated, so
//! each decoder is materialized as a [`VoronoiTable`]: a total map from the
//! `2^L` sequences to a molecule or a rejection. Confusion matrices then
//! follow from exact sums over that table, with no sampling involved.

mod confusion;
mod soft;
mod sweep;
mod voronoi;

use std::fmt;
use std::str::FromStr;

use crate::codebook::PriorDist;
use crate::error::{Error, Result};

pub use confusion::{confusion, metrics, ConfusionResult, Metrics};
pub use soft::decode_soft;
pub use sweep::{
    dirichlet_sweep, AssignmentPolicy, DrawRecord, MismatchMeasure, SweepConfig, SweepReport,
    SweepRow,
};
pub use voronoi::{
    build_voronoi, decode_table, posterior, posterior_from_table, Decision, VoronoiTable,
};

/// Decoding rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecoderKind {
    /// Maximum likelihood: MAP under a uniform decoder prior.
    Mle,
    /// Maximum a posteriori under the decoder prior.
    Map,
    /// MAP that rejects when the winner's posterior is below `q`.
    MapQ(f64),
    /// Unique-nearest-codeword rule with rejection of equidistant sequences.
    /// With `restricted_mle`, accepted sequences are decoded by the channel
    /// likelihood instead of Hamming distance.
    Moffitt { restricted_mle: bool },
}

impl DecoderKind {
    pub const MOFFITT: DecoderKind = DecoderKind::Moffitt {
        restricted_mle: false,
    };

    /// True when the decoder prior plays no role in the decision.
    pub fn ignores_prior(&self) -> bool {
        matches!(self, DecoderKind::Mle | DecoderKind::Moffitt { .. })
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DecoderKind::Mle => write!(f, "mle"),
            DecoderKind::Map => write!(f, "map"),
            DecoderKind::MapQ(q) => write!(f, "mapq:{q}"),
            DecoderKind::Moffitt {
                restricted_mle: false,
            } => write!(f, "moffitt"),
            DecoderKind::Moffitt {
                restricted_mle: true,
            } => write!(f, "moffitt-mle"),
        }
    }
}

impl FromStr for DecoderKind {
    type Err = Error;

    /// Accepts `mle`, `map`, `mapq:<q>`, `moffitt` and `moffitt-mle`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let kind = match lower.as_str() {
            "mle" => DecoderKind::Mle,
            "map" => DecoderKind::Map,
            "moffitt" => DecoderKind::MOFFITT,
            "moffitt-mle" => DecoderKind::Moffitt {
                restricted_mle: true,
            },
            other => {
                let q = other
                    .strip_prefix("mapq:")
                    .or_else(|| other.strip_prefix("map_q:"))
                    .ok_or_else(|| Error::Domain(format!("unknown decoder kind {s:?}")))?;
                let q: f64 = q
                    .parse()
                    .map_err(|_| Error::Domain(format!("invalid MAP_q threshold in {s:?}")))?;
                DecoderKind::MapQ(q)
            }
        };
        kind.check()?;
        Ok(kind)
    }
}

impl DecoderKind {
    fn check(&self) -> Result<()> {
        if let DecoderKind::MapQ(q) = *self {
            if !(q > 0.0 && q < 1.0) {
                return Err(Error::Domain(format!(
                    "MAP_q threshold must lie in (0, 1), got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// How exact score ties are resolved.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TieBreak {
    /// Ties belong to no Voronoi set and are rejected.
    #[default]
    Reject,
    /// The tied candidate with the smallest codeword wins. Used to state
    /// Bayes optimality without a reject option.
    SmallestCode,
}

/// A decoder rule plus the prior it assumes.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderSpec {
    pub kind: DecoderKind,
    omega: PriorDist,
    pub tie_break: TieBreak,
}

impl DecoderSpec {
    /// `omega` is ignored (replaced by uniform) for MLE and Moffitt. A
    /// uniform `omega` is stored canonically, so MAP under it reproduces MLE
    /// bit for bit, posteriors included.
    pub fn new(kind: DecoderKind, omega: PriorDist) -> Result<Self> {
        kind.check()?;
        let omega = if kind.ignores_prior() || omega.is_uniform() {
            PriorDist::uniform(omega.len())?
        } else {
            omega
        };
        Ok(DecoderSpec {
            kind,
            omega,
            tie_break: TieBreak::Reject,
        })
    }

    pub fn mle(molecules: usize) -> Result<Self> {
        Self::new(DecoderKind::Mle, PriorDist::uniform(molecules)?)
    }

    pub fn map(omega: PriorDist) -> Result<Self> {
        Self::new(DecoderKind::Map, omega)
    }

    pub fn map_q(omega: PriorDist, q: f64) -> Result<Self> {
        Self::new(DecoderKind::MapQ(q), omega)
    }

    pub fn moffitt(molecules: usize) -> Result<Self> {
        Self::new(DecoderKind::MOFFITT, PriorDist::uniform(molecules)?)
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    pub fn omega(&self) -> &PriorDist {
        &self.omega
    }

    pub fn molecules(&self) -> usize {
        self.omega.len()
    }
}
