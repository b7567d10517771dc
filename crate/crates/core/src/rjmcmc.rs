//! Reversible-jump edge moves: adding an inactive edge with a value drawn
//! from a truncated Gaussian on `[-delta, delta]`, or deleting an active edge
//! whose value lies inside that window.
//!
//! The partition-function ratio in the acceptance probability is replaced by
//! a second-order estimate built from the chain-bank moments. Exact variants
//! using enumeration are provided for small models.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::MomentEstimates;
use crate::hyper::HyperState;
use crate::mrf::{exact_inference, log_partition_shift, Dataset, ExactInference, ModelSpec, ParamState};
use crate::numeric::{log_ndtr, log_ndtr_inv, ndtr, ndtri, normal_log_pdf};
use statrs::function::erf::{erf, erf_inv};

/// Sample variances below this are treated as exactly zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Floor on the empirical data variance used for the jump widths.
pub const DATA_VARIANCE_FLOOR: f64 = 1e-4;

// edges per sweep above which decisions are evaluated on the rayon pool
const PARALLEL_MIN_EDGES: usize = 512;

/// How the per-edge jump half-widths are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpWidthRule {
    /// `scale / sqrt(N Var f)` with `Var f` the empirical data variance.
    Data { scale: f64 },
    /// The same width for every edge.
    Constant(f64),
}

impl Default for JumpWidthRule {
    fn default() -> Self {
        JumpWidthRule::Data { scale: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpWidths {
    widths: Vec<f64>,
}

impl JumpWidths {
    pub fn constant(num_edges: usize, width: f64) -> Result<Self> {
        Self::from_vec(vec![width; num_edges])
    }

    pub fn from_vec(widths: Vec<f64>) -> Result<Self> {
        if let Some(w) = widths.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("jump widths must be positive and finite, got {w}")));
        }
        Ok(Self { widths })
    }

    pub fn get(&self, k: usize) -> f64 {
        self.widths[k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.widths
    }

    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }
}

/// `0.01 / sqrt(N Var f)` per candidate edge.
pub fn compute_jump_widths(data: &Dataset, m: &ModelSpec) -> Result<JumpWidths> {
    jump_widths(data, m, JumpWidthRule::default())
}

pub fn jump_widths(data: &Dataset, m: &ModelSpec, rule: JumpWidthRule) -> Result<JumpWidths> {
    match rule {
        JumpWidthRule::Constant(w) => JumpWidths::constant(m.num_edges(), w),
        JumpWidthRule::Data { scale } => {
            data.check_model(m)?;
            if data.len() < 2 {
                return Err(Error::Config(format!(
                    "data-driven jump widths need at least 2 observations, got {}",
                    data.len()
                )));
            }
            let n = data.len() as f64;
            let widths = m
                .edges()
                .iter()
                .map(|&(i, j)| {
                    let mean = data.pair_count(i, j) / n;
                    let var = (mean * (1.0 - mean)).max(DATA_VARIANCE_FLOOR);
                    scale / (n * var).sqrt()
                })
                .collect();
            JumpWidths::from_vec(widths)
        }
    }
}

/// Which move the proposal serves. `Delete` carries the current edge value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Move {
    Add,
    Delete { current: f64 },
}

/// Data sufficient statistic and model moments of one edge feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    /// `sum_m x_i x_j` over the data.
    pub suff: f64,
    pub mean: f64,
    pub var: f64,
}

/// Truncated Gaussian `q(a) ∝ exp(-kappa a^2 / 2 + lambda a)` on `[-width, width]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProposalCoeffs {
    pub kappa: f64,
    pub lambda: f64,
    pub width: f64,
}

/// `kappa = 1/sigma0^2 + N S^2`, `lambda = sum f - N E`, with `E = mean` when
/// adding and `E = mean - a S^2` when deleting an edge of value `a`.
pub fn proposal_coeffs(stats: &EdgeStats, sigma0_sq: f64, n_data: usize, width: f64, mv: Move) -> ProposalCoeffs {
    let var = floored(stats.var);
    let n = n_data as f64;
    let expect = match mv {
        Move::Add => stats.mean,
        Move::Delete { current } => stats.mean - current * var,
    };
    ProposalCoeffs { kappa: 1.0 / sigma0_sq + n * var, lambda: stats.suff - n * expect, width }
}

fn floored(var: f64) -> f64 {
    if var < VARIANCE_FLOOR {
        0.0
    } else {
        var
    }
}

// Standardized bounds of the truncation interval, mirrored so that the lower
// bound is never in the upper half.
struct Standardized {
    mu: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    mirrored: bool,
}

impl Standardized {
    fn new(c: &ProposalCoeffs) -> Self {
        let mu = c.lambda / c.kappa;
        let sd = 1.0 / c.kappa.sqrt();
        let lo = (-c.width - mu) / sd;
        let hi = (c.width - mu) / sd;
        if lo > 0.0 {
            Self { mu, sd, lo: -hi, hi: -lo, mirrored: true }
        } else {
            Self { mu, sd, lo, hi, mirrored: false }
        }
    }

    /// `log(Phi(hi) - Phi(lo))`.
    fn log_mass(&self) -> f64 {
        if self.hi > 0.0 {
            // opposite signs: no cancellation in the erf sum
            let s = std::f64::consts::FRAC_1_SQRT_2;
            (0.5 * (erf(self.hi * s) - erf(self.lo * s))).ln()
        } else {
            let (la, lb) = (log_ndtr(self.lo), log_ndtr(self.hi));
            lb + (-(la - lb).exp_m1()).ln()
        }
    }

    fn to_value(&self, z: f64) -> f64 {
        let z = if self.mirrored { -z } else { z };
        self.mu + self.sd * z
    }
}

/// Normalized log-density of the truncated proposal; `-inf` outside the support.
pub fn truncated_gaussian_log_density(c: &ProposalCoeffs, a: f64) -> f64 {
    if a.abs() > c.width {
        return f64::NEG_INFINITY;
    }
    let s = Standardized::new(c);
    normal_log_pdf(a, s.mu, s.sd * s.sd) - s.log_mass()
}

/// Draws `a` from the truncated proposal and returns it with its normalized
/// log-density. Requires `kappa > 0`.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(c: &ProposalCoeffs, rng: &mut R) -> (f64, f64) {
    let a = truncated_gaussian_quantile(c, rng.random());
    (a, truncated_gaussian_log_density(c, a))
}

/// Inverse CDF of the truncated proposal at `u` in `[0, 1)`.
pub fn truncated_gaussian_quantile(c: &ProposalCoeffs, u: f64) -> f64 {
    debug_assert!(c.kappa > 0.0 && c.width > 0.0);
    let s = Standardized::new(c);
    let z = if s.hi > 0.0 {
        straddling_quantile(s.lo, s.hi, u)
    } else {
        let (la, lb) = (log_ndtr(s.lo), log_ndtr(s.hi));
        // log(Phi(lo) + u (Phi(hi) - Phi(lo)))
        let r = (la - lb).exp();
        log_ndtr_inv(lb + (r + u * (1.0 - r)).ln())
    };
    s.to_value(z.clamp(s.lo, s.hi)).clamp(-c.width, c.width)
}

// Quantile of a standard normal restricted to [lo, hi] with lo <= 0 < hi.
// Masses are measured from zero so narrow windows keep full precision.
fn straddling_quantile(lo: f64, hi: f64, u: f64) -> f64 {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let below = 0.5 * erf(-lo * s);
    let above = 0.5 * erf(hi * s);
    let t = u * (below + above);
    if t < below {
        let r = below - t;
        if r < 0.25 {
            -std::f64::consts::SQRT_2 * erf_inv(2.0 * r)
        } else {
            ndtri(ndtr(lo) + t)
        }
    } else {
        let r = t - below;
        if r < 0.25 {
            std::f64::consts::SQRT_2 * erf_inv(2.0 * r)
        } else {
            -ndtri(ndtr(-hi) + (above - r))
        }
    }
}

/// Second-order estimate of `(Z(theta) / Z(theta + a e_k))^N` from `n`
/// samples with feature mean `mean` and variance `var` under `theta`.
/// For deletions pass `-a` with the with-edge moments.
pub fn r_tilde(a: f64, mean: f64, var: f64, n_data: usize, n_chains: usize) -> f64 {
    log_r_tilde(a, mean, var, n_data, n_chains).exp()
}

pub fn log_r_tilde(a: f64, mean: f64, var: f64, n_data: usize, n_chains: usize) -> f64 {
    let var = floored(var);
    let n = n_data as f64;
    let correction = if var == 0.0 { 0.0 } else { (n * n * a * a * var / (2.0 * n_chains as f64)).ln_1p() };
    -n * a * mean - 0.5 * n * a * a * var - correction
}

/// `log p0 - log(1 - p0) + log N(a; 0, sigma0^2)`.
fn log_prior_odds(a: f64, hyper: &HyperState) -> f64 {
    hyper.p0.ln() - (-hyper.p0).ln_1p() + normal_log_pdf(a, 0.0, hyper.sigma0_sq)
}

/// `log Q*(a)` of adding an edge with value `a`:
/// `a sum f + log R + log odds + log N(a; 0, sigma0^2) - log q(a)`.
pub fn log_q_star(a: f64, suff: f64, log_ratio: f64, log_q: f64, hyper: &HyperState) -> f64 {
    a * suff + log_ratio + log_prior_odds(a, hyper) - log_q
}

fn prob_from_log(log_q: f64) -> f64 {
    if log_q >= 0.0 {
        1.0
    } else {
        log_q.exp()
    }
}

fn edge_stats(k: usize, m: &ModelSpec, data: &Dataset, mean: f64, var: f64) -> EdgeStats {
    let (i, j) = m.edge(k);
    EdgeStats { suff: data.pair_count(i, j), mean, var }
}

/// Acceptance probability `min(1, Q*)` for adding edge `k` with value `a`
/// (drawn with log-density `log_q`), using bank moments taken without the edge.
#[allow(clippy::too_many_arguments)]
pub fn acceptance_add(
    k: usize,
    a: f64,
    log_q: f64,
    p: &ParamState,
    m: &ModelSpec,
    data: &Dataset,
    mom: &MomentEstimates,
    hyper: &HyperState,
    widths: &JumpWidths,
) -> Result<f64> {
    if p.edge_active[k] {
        return Err(Error::EdgeState { edge: k, reason: "cannot add an active edge" });
    }
    if a.abs() > widths.get(k) {
        return Err(Error::EdgeState { edge: k, reason: "proposed value outside the jump window" });
    }
    let s = edge_stats(k, m, data, mom.moments.edge_mean[k], mom.moments.edge_var[k]);
    let log_r = log_r_tilde(a, s.mean, s.var, data.len(), mom.n);
    Ok(prob_from_log(log_q_star(a, s.suff, log_r, log_q, hyper)))
}

/// Delete-mode proposal for active edge `k` under bank moments taken with
/// the edge present.
pub fn delete_proposal(k: usize, p: &ParamState, m: &ModelSpec, data: &Dataset, mom: &MomentEstimates, hyper: &HyperState, widths: &JumpWidths) -> ProposalCoeffs {
    let s = edge_stats(k, m, data, mom.moments.edge_mean[k], mom.moments.edge_var[k]);
    proposal_coeffs(&s, hyper.sigma0_sq, data.len(), widths.get(k), Move::Delete { current: p.edge_values[k] })
}

/// Acceptance probability `min(1, 1/Q*)` for deleting active edge `k`, with
/// `log_q` the delete-mode proposal density at the current value.
#[allow(clippy::too_many_arguments)]
pub fn acceptance_delete(
    k: usize,
    p: &ParamState,
    m: &ModelSpec,
    data: &Dataset,
    mom: &MomentEstimates,
    hyper: &HyperState,
    widths: &JumpWidths,
    log_q: f64,
) -> Result<f64> {
    if !p.edge_active[k] {
        return Err(Error::EdgeState { edge: k, reason: "cannot delete an inactive edge" });
    }
    let a = p.edge_values[k];
    if a.abs() > widths.get(k) {
        return Err(Error::EdgeState { edge: k, reason: "edge value outside the jump window" });
    }
    let s = edge_stats(k, m, data, mom.moments.edge_mean[k], mom.moments.edge_var[k]);
    // R_add = 1 / R_del, with R_del estimated at -a from the with-edge moments
    let log_r_add = -log_r_tilde(-a, s.mean, s.var, data.len(), mom.n);
    Ok(prob_from_log(-log_q_star(a, s.suff, log_r_add, log_q, hyper)))
}

/// Edges that changed state in one sweep, in index order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepOutcome {
    pub added: Vec<usize>,
    pub removed: Vec<usize>,
}

enum Decision {
    Keep,
    Add(f64),
    Remove,
}

/// One add/delete proposal for every eligible edge, all judged against the
/// same bank moments. Each edge uses two uniforms drawn from `rng` in index
/// order, so the result does not depend on evaluation order.
#[allow(clippy::too_many_arguments)]
pub fn parallel_sweep<R: Rng + ?Sized>(
    p: &mut ParamState,
    m: &ModelSpec,
    data: &Dataset,
    mom: &MomentEstimates,
    hyper: &HyperState,
    widths: &JumpWidths,
    rng: &mut R,
) -> Result<SweepOutcome> {
    p.check(m)?;
    data.check_model(m)?;
    if widths.len() != m.num_edges() {
        return Err(Error::DimensionMismatch { expected: m.num_edges(), found: widths.len() });
    }
    let draws: Vec<[f64; 2]> = (0..m.num_edges()).map(|_| [rng.random(), rng.random()]).collect();
    let state = &*p;
    let decide = |(k, &[u_prop, u_acc]): (usize, &[f64; 2])| -> Result<Decision> {
        if !state.edge_active[k] {
            let s = edge_stats(k, m, data, mom.moments.edge_mean[k], mom.moments.edge_var[k]);
            let c = proposal_coeffs(&s, hyper.sigma0_sq, data.len(), widths.get(k), Move::Add);
            let a = truncated_gaussian_quantile(&c, u_prop);
            let log_q = truncated_gaussian_log_density(&c, a);
            let acc = acceptance_add(k, a, log_q, state, m, data, mom, hyper, widths)?;
            Ok(if u_acc < acc { Decision::Add(a) } else { Decision::Keep })
        } else if state.edge_values[k].abs() <= widths.get(k) {
            let c = delete_proposal(k, state, m, data, mom, hyper, widths);
            let log_q = truncated_gaussian_log_density(&c, state.edge_values[k]);
            let acc = acceptance_delete(k, state, m, data, mom, hyper, widths, log_q)?;
            Ok(if u_acc < acc { Decision::Remove } else { Decision::Keep })
        } else {
            Ok(Decision::Keep)
        }
    };
    let decisions: Vec<Decision> = if m.num_edges() >= PARALLEL_MIN_EDGES {
        draws.par_iter().enumerate().map(decide).collect::<Result<_>>()?
    } else {
        draws.iter().enumerate().map(decide).collect::<Result<_>>()?
    };
    let mut out = SweepOutcome::default();
    for (k, dec) in decisions.into_iter().enumerate() {
        match dec {
            Decision::Keep => {}
            Decision::Add(a) => {
                p.edge_active[k] = true;
                p.edge_values[k] = a;
                out.added.push(k);
            }
            Decision::Remove => {
                p.edge_active[k] = false;
                p.edge_values[k] = 0.0;
                out.removed.push(k);
            }
        }
    }
    Ok(out)
}

/// Exact `log R_add` for adding edge `k` at value `a`, given the exact mean of
/// its feature without the edge.
pub fn exact_log_ratio_add(mean_without: f64, a: f64, n_data: usize) -> f64 {
    -(n_data as f64) * log_partition_shift(mean_without, a)
}

/// Mean of a binary feature after removing a tilt of `a` from a model in
/// which it has mean `mean_with`.
pub fn untilted_mean(mean_with: f64, a: f64) -> f64 {
    let t = mean_with * (-a).exp();
    (t / (1.0 - mean_with + t)).clamp(0.0, 1.0)
}

/// Exact add acceptance from the exact moments of the current (edge-off) model.
pub fn exact_acceptance_add(k: usize, a: f64, log_q: f64, m: &ModelSpec, data: &Dataset, inf: &ExactInference, hyper: &HyperState) -> f64 {
    let s = edge_stats(k, m, data, inf.moments.edge_mean[k], inf.moments.edge_var[k]);
    let log_r = exact_log_ratio_add(s.mean, a, data.len());
    prob_from_log(log_q_star(a, s.suff, log_r, log_q, hyper))
}

/// Proposal the reverse (add) move would use, computed exactly from the
/// moments of the current edge-on model.
pub fn exact_delete_proposal(k: usize, a: f64, m: &ModelSpec, data: &Dataset, inf: &ExactInference, sigma0_sq: f64, width: f64) -> (ProposalCoeffs, f64) {
    let mean0 = untilted_mean(inf.moments.edge_mean[k], a);
    let s = edge_stats(k, m, data, mean0, mean0 * (1.0 - mean0));
    (proposal_coeffs(&s, sigma0_sq, data.len(), width, Move::Add), mean0)
}

/// Sequential add/delete sweep with exact partition ratios; the model is
/// re-enumerated after every accepted move.
pub fn exact_sweep<R: Rng + ?Sized>(
    p: &mut ParamState,
    m: &ModelSpec,
    data: &Dataset,
    hyper: &HyperState,
    widths: &JumpWidths,
    rng: &mut R,
) -> Result<SweepOutcome> {
    data.check_model(m)?;
    let mut inf = exact_inference(p, m)?;
    let mut out = SweepOutcome::default();
    for k in 0..m.num_edges() {
        let width = widths.get(k);
        let (i, j) = m.edge(k);
        let suff = data.pair_count(i, j);
        if !p.edge_active[k] {
            let s = EdgeStats { suff, mean: inf.moments.edge_mean[k], var: inf.moments.edge_var[k] };
            let c = proposal_coeffs(&s, hyper.sigma0_sq, data.len(), width, Move::Add);
            let (a, log_q) = sample_truncated_gaussian(&c, rng);
            let acc = exact_acceptance_add(k, a, log_q, m, data, &inf, hyper);
            if rng.random::<f64>() < acc {
                p.edge_active[k] = true;
                p.edge_values[k] = a;
                out.added.push(k);
                inf = exact_inference(p, m)?;
            }
        } else if p.edge_values[k].abs() <= width {
            let a = p.edge_values[k];
            let (c, mean0) = exact_delete_proposal(k, a, m, data, &inf, hyper.sigma0_sq, width);
            let log_q = truncated_gaussian_log_density(&c, a);
            let log_r = exact_log_ratio_add(mean0, a, data.len());
            let acc = prob_from_log(-log_q_star(a, suff, log_r, log_q, hyper));
            if rng.random::<f64>() < acc {
                p.edge_active[k] = false;
                p.edge_values[k] = 0.0;
                out.removed.push(k);
                inf = exact_inference(p, m)?;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mrf::{exact_log_partition, exact_moments};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn coeffs(kappa: f64, lambda: f64, width: f64) -> ProposalCoeffs {
        ProposalCoeffs { kappa, lambda, width }
    }

    #[test]
    fn width_rule_examples() {
        let rows: Vec<Vec<u8>> = (0..100).map(|r| vec![1, (r % 2) as u8]).collect();
        let data = Dataset::from_rows(2, &rows).unwrap();
        let m = ModelSpec::complete(2);
        let w = compute_jump_widths(&data, &m).unwrap();
        assert!((w.get(0) - 0.002).abs() < 1e-15);

        let rows: Vec<Vec<u8>> = (0..100).map(|_| vec![1, 1]).collect();
        let w = compute_jump_widths(&Dataset::from_rows(2, &rows).unwrap(), &m).unwrap();
        assert!((w.get(0) - 0.01 / (100.0f64 * 1e-4).sqrt()).abs() < 1e-15);

        let rows: Vec<Vec<u8>> = (0..400).map(|r| vec![1, (r % 2) as u8]).collect();
        let w4 = compute_jump_widths(&Dataset::from_rows(2, &rows).unwrap(), &m).unwrap();
        assert!((w4.get(0) - 0.001).abs() < 1e-15);

        assert!(compute_jump_widths(&Dataset::from_rows(2, &[vec![0, 1]]).unwrap(), &m).is_err());
    }

    #[test]
    fn add_mode_is_centred_when_data_matches_bank() {
        let s = EdgeStats { suff: 30.0, mean: 0.3, var: 0.21 };
        let c = proposal_coeffs(&s, 1.0, 100, 0.01, Move::Add);
        assert_eq!(c.lambda, 0.0);
        assert!((c.kappa - 22.0).abs() < 1e-12);
        let d = proposal_coeffs(&s, 1.0, 100, 0.01, Move::Delete { current: 0.5 });
        assert!((d.lambda - 100.0 * 0.5 * 0.21).abs() < 1e-12);
    }

    #[test]
    fn flat_limit_is_uniform() {
        let c = coeffs(1e-12, 0.0, 0.5);
        let mut r = rng(1);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_truncated_gaussian(&c, &mut r).0).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 0.25 / 3.0).abs() < 0.002);
        assert!((truncated_gaussian_log_density(&c, 0.3) - (1.0f64).ln()).abs() < 1e-9);
    }

    #[test]
    fn narrow_window_quantiles_are_precise() {
        // nearly flat kernel: the quantile is close to linear in u
        let c = coeffs(1e-6, 0.0, 2e-3);
        for &u in &[0.0, 1e-9, 0.1, 0.5, 0.77, 1.0 - 1e-9] {
            let want = c.width * (2.0 * u - 1.0);
            assert!((truncated_gaussian_quantile(&c, u) - want).abs() <= 1e-12 * c.width, "u={u}");
        }
        // strong tilt: the mode sits far outside the window
        let c = coeffs(0.01, 1000.0, 0.1);
        let peak = log_kernel(&c, c.width);
        let mass = |b: f64| {
            let n = 20_000;
            let h = (b + c.width) / n as f64;
            let f = |x: f64| (log_kernel(&c, x) - peak).exp();
            (1..n).fold(f(-c.width) + f(b), |s, i| s + if i % 2 == 1 { 4.0 } else { 2.0 } * f(-c.width + i as f64 * h)) * h / 3.0
        };
        let total = mass(c.width);
        for &u in &[0.01, 0.5, 0.99] {
            let a = truncated_gaussian_quantile(&c, u);
            assert!((mass(a) / total - u).abs() < 1e-8, "u={u} a={a}");
        }
    }

    fn log_kernel(c: &ProposalCoeffs, a: f64) -> f64 {
        -0.5 * c.kappa * a * a + c.lambda * a
    }

    #[test]
    fn symmetric_draws_respect_support() {
        let c = coeffs(50.0, 0.0, 0.2);
        let mut r = rng(2);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let (a, lq) = sample_truncated_gaussian(&c, &mut r);
            assert!(a.abs() <= 0.2 && lq.is_finite());
            sum += a;
            sq += a * a;
        }
        let mean = sum / n as f64;
        let sd = (sq / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt());
    }

    #[test]
    fn wide_window_recovers_standard_normal() {
        let c = coeffs(1.0, 0.0, 10.0);
        let mut r = rng(3);
        let n = 1_000_000;
        let sq: f64 = (0..n).map(|_| sample_truncated_gaussian(&c, &mut r).0.powi(2)).sum();
        assert!(((sq / n as f64).sqrt() - 1.0).abs() < 0.01);
    }

    fn truncated_cdf(c: &ProposalCoeffs, a: f64) -> f64 {
        let mu = c.lambda / c.kappa;
        let sd = 1.0 / c.kappa.sqrt();
        let f = |x: f64| ndtr((x - mu) / sd);
        (f(a) - f(-c.width)) / (f(c.width) - f(-c.width))
    }

    fn ks_pvalue(stat: f64, n: usize) -> f64 {
        // asymptotic Kolmogorov distribution
        let t = stat * (n as f64).sqrt();
        let mut p = 0.0;
        for j in 1..200 {
            let j = j as f64;
            p += 2.0 * (-1.0f64).powf(j - 1.0) * (-2.0 * j * j * t * t).exp();
        }
        p.clamp(0.0, 1.0)
    }

    #[test]
    fn draws_follow_truncated_cdf() {
        let cases = [coeffs(4.0, 1.0, 1.0), coeffs(25.0, 40.0, 0.5), coeffs(2.0, -0.3, 2.0), coeffs(100.0, 0.0, 0.05)];
        for (t, c) in cases.iter().enumerate() {
            let mut r = rng(10 + t as u64);
            let n = 100_000;
            let mut xs: Vec<f64> = (0..n).map(|_| sample_truncated_gaussian(c, &mut r).0).collect();
            xs.sort_by(f64::total_cmp);
            let stat = xs
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = truncated_cdf(c, x);
                    (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks_pvalue(stat, n) > 0.01, "case {t}: D = {stat}");
        }
    }

    #[test]
    fn far_tail_windows_stay_inside_and_normalize() {
        // mode far outside the window on either side
        for c in [coeffs(1e4, 5e3, 0.01), coeffs(1e4, -5e3, 0.01), coeffs(400.0, 1e5, 0.02)] {
            let mut r = rng(4);
            for _ in 0..1000 {
                let (a, lq) = sample_truncated_gaussian(&c, &mut r);
                assert!(a.abs() <= c.width && lq.is_finite());
                // mass piles against the near boundary
                assert!(a * c.lambda.signum() > 0.0);
            }
            // boundary layer of width ~1/lambda needs a fine grid
            let total = simpson(&c, 2_000_000);
            assert!((total - 1.0).abs() < 1e-8, "{c:?}: {total}");
        }
    }

    fn simpson(c: &ProposalCoeffs, intervals: usize) -> f64 {
        let h = 2.0 * c.width / intervals as f64;
        let f = |a: f64| truncated_gaussian_log_density(c, a).exp();
        let mut s = f(-c.width) + f(c.width);
        for i in 1..intervals {
            let a = -c.width + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a);
        }
        s * h / 3.0
    }

    #[test]
    fn density_integrates_to_one() {
        for c in [coeffs(1.0, 0.0, 10.0), coeffs(22.0, 3.0, 0.002), coeffs(4.0, -8.0, 1.5), coeffs(1e-6, 1e-3, 0.3)] {
            assert!((simpson(&c, 20_000) - 1.0).abs() < 1e-8, "{c:?}");
        }
    }

    #[test]
    fn r_tilde_trivial_cases() {
        assert_eq!(r_tilde(0.0, 0.3, 0.2, 100, 100), 1.0);
        let r = r_tilde(0.01, 0.3, 0.0, 100, 100);
        assert!((r - (-100.0f64 * 0.01 * 0.3).exp()).abs() < 1e-15);
        assert_eq!(r_tilde(0.01, 0.3, 1e-13, 100, 100), r);
    }

    fn toy(d: usize, seed: u64) -> (ModelSpec, ParamState) {
        let m = ModelSpec::complete(d);
        let mut r = rng(seed);
        let p = crate::mrf::tests::random_params(&m, 0.4, 0.6, &mut r);
        (m, p)
    }

    fn hyper() -> HyperState {
        HyperState::new(0.3, 0.8, None).unwrap()
    }

    fn random_data(d: usize, n: usize, seed: u64) -> Dataset {
        let mut r = rng(seed);
        let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..d).map(|_| r.random_range(0..2)).collect()).collect();
        Dataset::from_rows(d, &rows).unwrap()
    }

    #[test]
    fn proposal_matches_exact_taylor_fit() {
        // log of the a-dependent factors: a sum f - N log(Z_a / Z_0) - a^2 / (2 sigma0^2)
        let (m, mut p) = toy(5, 5);
        let data = random_data(5, 100, 6);
        let k = 3;
        p.edge_active[k] = false;
        let sigma0_sq = 0.8;
        let (i, j) = m.edge(k);
        let lz0 = exact_log_partition(&p, &m).unwrap();
        let f = |a: f64| {
            let mut q = p.clone();
            q.edge_active[k] = true;
            q.edge_values[k] = a;
            a * data.pair_count(i, j) - 100.0 * (exact_log_partition(&q, &m).unwrap() - lz0) - a * a / (2.0 * sigma0_sq)
        };
        let h = 1e-3;
        let slope = (f(h) - f(-h)) / (2.0 * h);
        let curv = -(f(h) - 2.0 * f(0.0) + f(-h)) / (h * h);
        let mom = exact_moments(&p, &m).unwrap();
        let s = EdgeStats { suff: data.pair_count(i, j), mean: mom.edge_mean[k], var: mom.edge_var[k] };
        let c = proposal_coeffs(&s, sigma0_sq, 100, 0.01, Move::Add);
        assert!((c.lambda - slope).abs() / slope.abs() < 1e-3);
        assert!((c.kappa - curv).abs() / curv.abs() < 1e-3);
    }

    #[test]
    fn exact_q_star_is_flat_under_optimal_proposal() {
        let (m, mut p) = toy(5, 7);
        let data = random_data(5, 100, 8);
        let k = 2;
        p.edge_active[k] = false;
        let inf = exact_inference(&p, &m).unwrap();
        let widths = compute_jump_widths(&data, &m).unwrap();
        let s = edge_stats(k, &m, &data, inf.moments.edge_mean[k], inf.moments.edge_var[k]);
        let c = proposal_coeffs(&s, hyper().sigma0_sq, 100, widths.get(k), Move::Add);
        let lq = |a: f64| {
            let log_r = exact_log_ratio_add(s.mean, a, 100);
            log_q_star(a, s.suff, log_r, truncated_gaussian_log_density(&c, a), &hyper())
        };
        let base = lq(0.0);
        for t in -50..=50 {
            let a = c.width * t as f64 / 50.0;
            assert!((lq(a) - base).exp_m1().abs() < 1e-6);
        }
        let h = c.width / 10.0;
        assert!(((lq(h) - lq(-h)) / (2.0 * h)).abs() < 1e-6);
    }

    #[test]
    fn delete_at_zero_reduces_to_prior_odds() {
        let (m, mut p) = toy(4, 9);
        let data = random_data(4, 50, 10);
        let k = 1;
        p.edge_active[k] = true;
        p.edge_values[k] = 0.0;
        let widths = JumpWidths::constant(m.num_edges(), 0.05).unwrap();
        let inf = exact_inference(&p, &m).unwrap();
        let mom = MomentEstimates { moments: inf.moments, n: 100 };
        let h = hyper();
        let c = delete_proposal(k, &p, &m, &data, &mom, &h, &widths);
        let log_q = truncated_gaussian_log_density(&c, 0.0);
        let acc = acceptance_delete(k, &p, &m, &data, &mom, &h, &widths, log_q).unwrap();
        let expected = ((1.0 - h.p0) * log_q.exp() / (h.p0 * normal_log_pdf(0.0, 0.0, h.sigma0_sq).exp())).min(1.0);
        assert!((acc - expected).abs() < 1e-12);
    }

    #[test]
    fn extreme_p0_suppresses_moves() {
        let (m, mut p) = toy(4, 11);
        let data = random_data(4, 50, 12);
        let widths = JumpWidths::constant(m.num_edges(), 0.05).unwrap();
        let inf = exact_inference(&p, &m).unwrap();
        let mom = MomentEstimates { moments: inf.moments, n: 100 };
        let k = 0;
        p.edge_active[k] = false;
        let low = HyperState::new(1e-300, 0.8, None).unwrap();
        let acc = acceptance_add(k, 0.01, 0.0, &p, &m, &data, &mom, &low, &widths).unwrap();
        assert!(acc < 1e-250);
        p.edge_active[k] = true;
        p.edge_values[k] = 0.02;
        let high = HyperState::new(1.0 - 1e-15, 0.8, None).unwrap();
        let c = delete_proposal(k, &p, &m, &data, &mom, &high, &widths);
        let acc = acceptance_delete(k, &p, &m, &data, &mom, &high, &widths, truncated_gaussian_log_density(&c, 0.02)).unwrap();
        assert!(acc < 1e-10);
        assert!(acceptance_delete(k, &p, &m, &data, &mom, &high, &JumpWidths::constant(6, 0.01).unwrap(), 0.0).is_err());
        assert!(acceptance_add(k, 0.01, 0.0, &p, &m, &data, &mom, &high, &widths).is_err());
    }

    #[test]
    fn add_then_delete_ratios_are_reciprocal() {
        let (m, mut p) = toy(5, 13);
        let data = random_data(5, 100, 14);
        let k = 4;
        p.edge_active[k] = false;
        let h = hyper();
        let inf0 = exact_inference(&p, &m).unwrap();
        let s = edge_stats(k, &m, &data, inf0.moments.edge_mean[k], inf0.moments.edge_var[k]);
        let c = proposal_coeffs(&s, h.sigma0_sq, 100, 0.05, Move::Add);
        let a = 0.03;
        let log_q = truncated_gaussian_log_density(&c, a);
        let fwd = log_q_star(a, s.suff, exact_log_ratio_add(s.mean, a, 100), log_q, &h);
        p.edge_active[k] = true;
        p.edge_values[k] = a;
        let inf1 = exact_inference(&p, &m).unwrap();
        let (c1, mean0) = exact_delete_proposal(k, a, &m, &data, &inf1, h.sigma0_sq, 0.05);
        assert!((mean0 - s.mean).abs() < 1e-12);
        let rev = log_q_star(a, s.suff, exact_log_ratio_add(mean0, a, 100), truncated_gaussian_log_density(&c1, a), &h);
        assert!((fwd.exp() * (-rev).exp() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sweep_is_deterministic_and_quiet_when_p0_tiny() {
        let (m, mut p) = toy(6, 15);
        for k in 0..m.num_edges() {
            if p.edge_active[k] {
                p.edge_values[k] = 5.0;
            }
        }
        let data = random_data(6, 100, 16);
        let widths = compute_jump_widths(&data, &m).unwrap();
        let mom = MomentEstimates { moments: exact_moments(&p, &m).unwrap(), n: 100 };
        let h = HyperState::new(1e-12, 0.8, None).unwrap();
        let mut flips = 0;
        let mut r = rng(17);
        for _ in 0..100 {
            let mut q = p.clone();
            let out = parallel_sweep(&mut q, &m, &data, &mom, &h, &widths, &mut r).unwrap();
            flips += out.added.len() + out.removed.len();
        }
        assert!(flips <= 1);

        let h = hyper();
        let (mut a, mut b) = (p.clone(), p.clone());
        let oa = parallel_sweep(&mut a, &m, &data, &mom, &h, &widths, &mut rng(18)).unwrap();
        let ob = parallel_sweep(&mut b, &m, &data, &mom, &h, &widths, &mut rng(18)).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
    }

    #[test]
    fn parallel_evaluation_matches_sequential() {
        // enough candidate edges to cross the rayon threshold
        let m = ModelSpec::complete(40);
        let p = ParamState::zeros(&m);
        let data = random_data(40, 50, 19);
        let widths = compute_jump_widths(&data, &m).unwrap();
        let mom = MomentEstimates { moments: crate::gibbs::init_chains(&m, 100, 20).unwrap().estimate_moments(&m).moments, n: 100 };
        let h = HyperState::new(0.5, 1.0, None).unwrap();
        let mut q = p.clone();
        let out = parallel_sweep(&mut q, &m, &data, &mom, &h, &widths, &mut rng(21)).unwrap();
        // replay each edge one at a time with its two uniforms
        let mut r = rng(21);
        let draws: Vec<(f64, f64)> = (0..m.num_edges()).map(|_| (r.random(), r.random())).collect();
        for (k, &(u_prop, u_acc)) in draws.iter().enumerate() {
            let s = edge_stats(k, &m, &data, mom.moments.edge_mean[k], mom.moments.edge_var[k]);
            let c = proposal_coeffs(&s, h.sigma0_sq, data.len(), widths.get(k), Move::Add);
            let a = truncated_gaussian_quantile(&c, u_prop);
            let lq = truncated_gaussian_log_density(&c, a);
            let acc = acceptance_add(k, a, lq, &p, &m, &data, &mom, &h, &widths).unwrap();
            let added = u_acc < acc;
            assert_eq!(added, out.added.contains(&k));
            if added {
                assert_eq!(q.edge_values[k], a);
            }
        }
    }
}
