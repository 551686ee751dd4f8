//! Design of zero-delay analog encoder/decoder pairs for two correlated
//! Gaussian sources sent over two parallel noisy channels.
//!
//! Encoders are piecewise affine with randomized associations and are
//! optimized by deterministic annealing ([`annealer`]); greedy descent and
//! noisy channel relaxation ([`baselines`]) serve as references. The
//! [`harness`] module drives experiments and writes their outputs.

pub mod annealer;
pub mod baselines;
pub mod codebook;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod objective;

pub use annealer::{anneal, AnnealConfig, AnnealOutcome, AnnealReport, TempRecord};
pub use baselines::{greedy_descend, ncr, GreedyConfig, GreedyOutcome, NcrConfig};
pub use codebook::{AffineModel, DecoderTable, GridEncoder, Hardened, InputTable, RandomizedEncoder};
pub use error::{Error, Result};
pub use numerics::{
    build_noise_model, build_output_axis, build_source_model, NoiseModel, OutputAxis, OutputGrid, Side, SourceModel,
    UniformAxis,
};
pub use objective::{CostReport, DistortionTensor, LagrangeWeights, Problem};
