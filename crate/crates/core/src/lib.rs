//! Coding-theory toolkit for multiplexed fluorescence in-situ hybridization.
//!
//! The pipeline runs in stages that mirror the experiment:
//!
//! * [`codebook`]: constant-weight MHD4 codes, code-to-molecule assignments and
//!   molecule abundance priors (including symmetric Dirichlet sampling).
//! * [`channel`]: the per-round log-normal intensity model, quantization
//!   thresholds, the derived per-round binary asymmetric channel and synthetic
//!   data generation.
//! * [`gmmfit`]: EM fitting of two-component Gaussian mixtures to log-intensity
//!   columns, plus QQ diagnostics.
//! * [`decoder`]: exact MLE / MAP / MAP-with-reject / nearest-codeword decoders
//!   over the full `2^L` sequence space, exact confusion matrices and
//!   per-molecule TPR/FDR.
//! * [`assignopt`]: evolutionary search over code assignments minimizing mean
//!   FDR, and the Hamming/prior-distance order parameter.
//! * [`io`]: the on-disk formats shared by the command-line tool.

pub mod assignopt;
pub mod channel;
pub mod codebook;
pub mod decoder;
mod error;
pub mod gmmfit;
pub mod io;
pub mod rng;
pub mod special;

pub use crate::assignopt::{EvoConfig, EvoHistory, GenerationStats, SwapPool};
pub use crate::channel::{BacParams, GaussianChannelParams, IntensityTable, LikelihoodTable};
pub use crate::codebook::{AssignmentMap, Codebook, Codeword, PriorDist};
pub use crate::decoder::{ConfusionResult, DecoderKind, DecoderSpec, Metrics, VoronoiTable};
pub use crate::error::{Error, Result};
pub use crate::gmmfit::{ChannelFit, ColumnFit, EmConfig};
