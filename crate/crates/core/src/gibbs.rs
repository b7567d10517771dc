//! Persistent Gibbs chains supplying the model-state samples behind the
//! gradient, preconditioner and edge-jump moment estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mrf::{FeatureMoments, ModelSpec, ParamState};
use crate::numeric::logistic;

// below this many nodes a sweep is cheaper than rayon's dispatch
const PARALLEL_MIN_NODES: usize = 32;

/// `n` persistent binary states, each advanced by its own random stream.
#[derive(Debug, Clone)]
pub struct ChainBank {
    d: usize,
    states: Vec<u8>,
    streams: Vec<ChaCha8Rng>,
}

/// Sample means and `(n-1)`-divisor variances of every feature.
#[derive(Debug, Clone)]
pub struct MomentEstimates {
    pub moments: FeatureMoments,
    pub n: usize,
}

/// Stream `k` of the generator seeded with `seed`.
pub(crate) fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Uniformly random starting states; chain `k` uses stream `k + 1` of `seed`.
pub fn init_chains(m: &ModelSpec, n: usize, seed: u64) -> Result<ChainBank> {
    if n < 2 {
        return Err(Error::TooFewChains(n));
    }
    let d = m.num_nodes();
    let mut streams: Vec<ChaCha8Rng> = (0..n as u64).map(|k| stream(seed, k + 1)).collect();
    let mut states = vec![0u8; n * d];
    for (x, rng) in states.chunks_mut(d.max(1)).zip(streams.iter_mut()) {
        x.iter_mut().for_each(|v| *v = rng.random_range(0..2));
    }
    Ok(ChainBank { d, states, streams })
}

impl ChainBank {
    /// Builds a bank from explicit states (row-major, `n x d`).
    pub fn from_states(d: usize, states: Vec<u8>, seed: u64) -> Result<Self> {
        let n = if d == 0 { 0 } else { states.len() / d };
        if n < 2 {
            return Err(Error::TooFewChains(n));
        }
        if states.len() != n * d || states.iter().any(|&v| v > 1) {
            return Err(Error::InvalidModel("chain states must be an n x d binary matrix".into()));
        }
        let streams = (0..n as u64).map(|k| stream(seed, k + 1)).collect();
        Ok(Self { d, states, streams })
    }

    pub fn num_chains(&self) -> usize {
        self.streams.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.d
    }

    pub fn state(&self, k: usize) -> &[u8] {
        &self.states[k * self.d..(k + 1) * self.d]
    }

    pub fn states(&self) -> impl Iterator<Item = &[u8]> {
        self.states.chunks_exact(self.d.max(1))
    }

    /// Advances every chain by `sweeps` systematic scans (sites `0..d`),
    /// resampling `x_i` from `P(x_i = 1 | rest) = logistic(b_i + sum_j w_ij x_j)`.
    pub fn sweep(&mut self, p: &ParamState, m: &ModelSpec, sweeps: usize) -> Result<()> {
        if sweeps == 0 {
            return Err(Error::Config("gibbs sweeps must be at least 1".into()));
        }
        p.check(m)?;
        if m.num_nodes() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: m.num_nodes() });
        }
        let biases = &p.biases;
        let d = self.d.max(1);
        if self.d >= PARALLEL_MIN_NODES {
            let adj = p.adjacency(m);
            let run = |(x, rng): (&mut [u8], &mut ChaCha8Rng)| {
                for _ in 0..sweeps {
                    for i in 0..x.len() {
                        let z = biases[i] + adj[i].iter().filter(|(j, _)| x[*j] != 0).map(|(_, w)| w).sum::<f64>();
                        x[i] = (rng.random::<f64>() < logistic(z)) as u8;
                    }
                }
            };
            self.states.par_chunks_mut(d).zip(self.streams.par_iter_mut()).for_each(run);
        } else {
            // small models: dense weights, accumulated in the same order as the sparse form
            let mut w = vec![0.0; d * d];
            for (i, row) in p.adjacency(m).iter().enumerate() {
                for &(j, v) in row {
                    w[i * d + j] += v;
                }
            }
            for (x, rng) in self.states.chunks_mut(d).zip(self.streams.iter_mut()) {
                for _ in 0..sweeps {
                    for i in 0..x.len() {
                        let z = biases[i] + w[i * d..(i + 1) * d].iter().zip(x.iter()).map(|(w, &v)| w * v as f64).sum::<f64>();
                        x[i] = (rng.random::<f64>() < logistic(z)) as u8;
                    }
                }
            }
        }
        Ok(())
    }

    /// Feature means and unbiased variances over the current states.
    pub fn estimate_moments(&self, m: &ModelSpec) -> MomentEstimates {
        let n = self.num_chains();
        let d = self.d;
        let mut node = vec![0u64; d];
        let mut edge = vec![0u64; m.num_edges()];
        for x in self.states() {
            for (c, &v) in node.iter_mut().zip(x) {
                *c += v as u64;
            }
            for (c, &(i, j)) in edge.iter_mut().zip(m.edges()) {
                *c += (x[i] & x[j]) as u64;
            }
        }
        let nf = n as f64;
        let mean = |c: &u64| *c as f64 / nf;
        // binary features: sum of squares equals sum
        let var = |c: &u64| {
            let c = *c as f64;
            ((c - c * c / nf) / (nf - 1.0)).max(0.0)
        };
        MomentEstimates {
            moments: FeatureMoments {
                node_mean: node.iter().map(mean).collect(),
                node_var: node.iter().map(var).collect(),
                edge_mean: edge.iter().map(mean).collect(),
                edge_var: edge.iter().map(var).collect(),
            },
            n,
        }
    }
}

/// Free-function form of [`ChainBank::sweep`].
pub fn gibbs_sweep(bank: &mut ChainBank, p: &ParamState, m: &ModelSpec, sweeps: usize) -> Result<()> {
    bank.sweep(p, m, sweeps)
}

pub fn estimate_moments(bank: &ChainBank, m: &ModelSpec) -> MomentEstimates {
    bank.estimate_moments(m)
}
