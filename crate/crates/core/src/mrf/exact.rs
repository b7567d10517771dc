//! Exact inference by enumerating all `2^d` states.

use crate::error::{Error, Result};
use crate::numeric::LogSumExp;

use super::{FeatureMoments, GroupQuery, ModelSpec, ParamState, MAX_GROUP_SIZE};

pub const MAX_ENUM_NODES: usize = 20;

fn check_enum(m: &ModelSpec) -> Result<()> {
    if m.num_nodes() > MAX_ENUM_NODES {
        return Err(Error::TooManyNodes { nodes: m.num_nodes(), max: MAX_ENUM_NODES });
    }
    Ok(())
}

/// Unnormalized log weight of every state, indexed by bitmask (bit `i` is `x_i`).
fn state_log_weights(p: &ParamState, m: &ModelSpec) -> Vec<f64> {
    let d = m.num_nodes();
    let adj = p.adjacency(m);
    let total = 1usize << d;
    let mut out = vec![0.0; total];
    let mut x = vec![0u8; d];
    let mut e = 0.0;
    // Gray-code walk: consecutive states differ in one bit
    for i in 1..total {
        let k = i.trailing_zeros() as usize;
        let field = p.biases[k] + adj[k].iter().filter(|(j, _)| x[*j] != 0).map(|(_, w)| w).sum::<f64>();
        if x[k] == 0 {
            x[k] = 1;
            e += field;
        } else {
            x[k] = 0;
            e -= field;
        }
        out[i ^ (i >> 1)] = e;
    }
    out
}

/// Normalized log probability of every state, indexed by bitmask.
pub fn state_log_probabilities(p: &ParamState, m: &ModelSpec) -> Result<Vec<f64>> {
    check_enum(m)?;
    p.check(m)?;
    let mut lw = state_log_weights(p, m);
    let lz = crate::numeric::log_sum_exp(&lw);
    lw.iter_mut().for_each(|v| *v -= lz);
    Ok(lw)
}

pub fn exact_log_partition(p: &ParamState, m: &ModelSpec) -> Result<f64> {
    check_enum(m)?;
    p.check(m)?;
    Ok(crate::numeric::log_sum_exp(&state_log_weights(p, m)))
}

/// Log partition function together with the exact feature moments.
#[derive(Debug, Clone)]
pub struct ExactInference {
    pub log_partition: f64,
    pub moments: FeatureMoments,
}

pub fn exact_inference(p: &ParamState, m: &ModelSpec) -> Result<ExactInference> {
    check_enum(m)?;
    p.check(m)?;
    let d = m.num_nodes();
    let lw = state_log_weights(p, m);
    let lz = crate::numeric::log_sum_exp(&lw);
    let mut node = vec![0.0; d];
    let mut pair = vec![0.0; d * d];
    for (s, &l) in lw.iter().enumerate() {
        let w = (l - lz).exp();
        if w == 0.0 {
            continue;
        }
        let mut bits = s;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            node[i] += w;
            let row = &mut pair[i * d..(i + 1) * d];
            let mut rest = bits;
            while rest != 0 {
                let j = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                row[j] += w;
            }
        }
    }
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let node_mean: Vec<f64> = node.into_iter().map(clamp).collect();
    let edge_mean: Vec<f64> = m.edges().iter().map(|&(i, j)| clamp(pair[i * d + j])).collect();
    let bern_var = |mu: &f64| mu * (1.0 - mu);
    Ok(ExactInference {
        log_partition: lz,
        moments: FeatureMoments {
            node_var: node_mean.iter().map(bern_var).collect(),
            edge_var: edge_mean.iter().map(bern_var).collect(),
            node_mean,
            edge_mean,
        },
    })
}

pub fn exact_moments(p: &ParamState, m: &ModelSpec) -> Result<FeatureMoments> {
    Ok(exact_inference(p, m)?.moments)
}

/// `log Z(theta + a e_k) - log Z(theta)` for a binary feature whose mean
/// under `theta` is `mean`: tilting a `{0,1}` feature gives
/// `E[exp(a f)] = 1 - mean + mean e^a`.
pub fn log_partition_shift(mean: f64, a: f64) -> f64 {
    (mean * a.exp_m1()).ln_1p()
}

/// `log P(x_group | x_rest)`, enumerating the `2^|group|` completions of the
/// context. Only terms touching the group are evaluated; the rest cancel.
pub fn conditional_log_likelihood(p: &ParamState, m: &ModelSpec, q: &GroupQuery) -> Result<f64> {
    p.check(m)?;
    if q.context.len() != m.num_nodes() {
        return Err(Error::DimensionMismatch { expected: m.num_nodes(), found: q.context.len() });
    }
    let adj = p.adjacency(m);
    conditional_log_likelihood_adj(&adj, &p.biases, &q.group, &q.context)
}

pub(crate) fn conditional_log_likelihood_adj(
    adj: &[Vec<(usize, f64)>],
    biases: &[f64],
    group: &[usize],
    context: &[u8],
) -> Result<f64> {
    let g = group.len();
    if g > MAX_GROUP_SIZE {
        return Err(Error::GroupTooLarge { size: g, max: MAX_GROUP_SIZE });
    }
    let d = biases.len();
    let mut pos = vec![usize::MAX; d];
    for (k, &v) in group.iter().enumerate() {
        if v >= d || pos[v] != usize::MAX {
            return Err(Error::InvalidGroup(format!("bad or repeated node {v}")));
        }
        pos[v] = k;
    }
    // external fields and within-group couplings
    let mut ext = vec![0.0; g];
    let mut inner: Vec<Vec<(usize, f64)>> = vec![Vec::new(); g];
    for (k, &v) in group.iter().enumerate() {
        ext[k] = biases[v];
        for &(u, w) in &adj[v] {
            if pos[u] == usize::MAX {
                if context[u] != 0 {
                    ext[k] += w;
                }
            } else {
                inner[k].push((pos[u], w));
            }
        }
    }
    let mut observed = 0.0;
    for k in 0..g {
        if context[group[k]] != 0 {
            observed += ext[k];
            for &(l, w) in &inner[k] {
                if l > k && context[group[l]] != 0 {
                    observed += w;
                }
            }
        }
    }
    let mut acc = LogSumExp::default();
    acc.add(0.0);
    let mut y = vec![0u8; g];
    let mut e = 0.0;
    for i in 1..(1usize << g) {
        let k = i.trailing_zeros() as usize;
        let field = ext[k] + inner[k].iter().filter(|(l, _)| y[*l] != 0).map(|(_, w)| w).sum::<f64>();
        if y[k] == 0 {
            y[k] = 1;
            e += field;
        } else {
            y[k] = 0;
            e -= field;
        }
        acc.add(e);
    }
    Ok(observed - acc.value())
}
