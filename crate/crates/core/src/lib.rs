//! Bayesian structure learning for sparse pairwise binary Markov random
//! fields under a spike-and-slab prior.
//!
//! The sampler alternates conjugate hyper-parameter updates, persistent
//! Gibbs chains, preconditioned Langevin moves on the active parameters and
//! reversible-jump edge additions/deletions. Small models (up to 20 nodes)
//! can also be sampled with exact gradients and exact acceptance ratios,
//! which is what the approximate chain is validated against.
//!
//! States are `{0,1}` vectors; the log-density of a state `x` is
//! `sum_i b_i x_i + sum_{(i,j) active} A_ij x_i x_j - log Z`.

pub mod baseline;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod gibbs;
pub mod hyper;
pub mod langevin;
pub mod mrf;
pub mod numeric;
pub mod rjmcmc;
pub mod sampler;

pub use error::{Error, Result};
pub use mrf::{Dataset, FeatureMoments, GroupQuery, ModelSpec, ParamState};
