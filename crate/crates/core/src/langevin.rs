//! Preconditioned Langevin moves (one leapfrog step) with partial momentum
//! refreshment, for the biases and the active edge values.
//!
//! The approximate move skips the Metropolis correction; [`lmc_step_exact`]
//! uses exact gradients and an accept/reject step for small models.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::mrf::{exact_inference, Dataset, ExactInference, FeatureMoments, ModelSpec, ParamState};
use crate::numeric::normal_log_pdf;

// floor on the averaged curvature before taking H^(-1/2)
const CURVATURE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmcConfig {
    pub step_size: f64,
    /// Momentum carry-over `alpha`; fresh noise enters with `sqrt(1 - alpha^2)`.
    pub refresh: f64,
    pub prior_var_edges: f64,
    pub prior_var_bias: f64,
}

impl LmcConfig {
    pub fn new(step_size: f64, refresh: f64, prior_var_edges: f64, prior_var_bias: f64) -> Result<Self> {
        let cfg = Self { step_size, refresh, prior_var_edges, prior_var_bias };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.refresh) {
            return Err(Error::Config(format!("refresh rate must lie in [0, 1), got {}", self.refresh)));
        }
        if !(self.prior_var_edges > 0.0 && self.prior_var_bias > 0.0) {
            return Err(Error::Config("prior variances must be positive".into()));
        }
        Ok(())
    }

    pub fn noise_scale(&self) -> f64 {
        (1.0 - self.refresh * self.refresh).sqrt()
    }
}

/// Gradient of the log posterior. Entries for inactive edges are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub bias: Vec<f64>,
    pub edge: Vec<f64>,
}

/// `sum_m f(x^m) - N E[f] - theta / prior_var` with the model expectation
/// taken from `moments`.
pub fn gradient_estimate(
    p: &ParamState,
    m: &ModelSpec,
    data: &Dataset,
    moments: &FeatureMoments,
    cfg: &LmcConfig,
) -> Gradient {
    let n = data.len() as f64;
    let bias = (0..m.num_nodes())
        .map(|i| data.node_count(i) - n * moments.node_mean[i] - p.biases[i] / cfg.prior_var_bias)
        .collect();
    let edge = (0..m.num_edges())
        .map(|k| {
            if !p.edge_active[k] {
                return 0.0;
            }
            let (i, j) = m.edge(k);
            data.pair_count(i, j) - n * moments.edge_mean[k] - p.edge_values[k] / cfg.prior_var_edges
        })
        .collect();
    Gradient { bias, edge }
}

/// Momentum, diagonal preconditioner and its burn-in curvature average.
#[derive(Debug, Clone)]
pub struct LmcState {
    bias_momentum: Vec<f64>,
    edge_momentum: Vec<Option<f64>>,
    hessian_sum_bias: Vec<f64>,
    hessian_sum_edge: Vec<f64>,
    accumulated: usize,
    precond_bias: Vec<f64>,
    precond_edge: Vec<f64>,
    frozen: bool,
}

impl LmcState {
    /// Fresh `N(0, 1)` momentum for the biases and every active edge, and an
    /// identity preconditioner.
    pub fn new<R: Rng + ?Sized>(p: &ParamState, rng: &mut R) -> Self {
        let bias_momentum = p.biases.iter().map(|_| rng.sample(StandardNormal)).collect();
        let edge_momentum = p.edge_active.iter().map(|&y| y.then(|| rng.sample(StandardNormal))).collect();
        Self {
            bias_momentum,
            edge_momentum,
            hessian_sum_bias: vec![0.0; p.biases.len()],
            hessian_sum_edge: vec![0.0; p.edge_active.len()],
            accumulated: 0,
            precond_bias: vec![1.0; p.biases.len()],
            precond_edge: vec![1.0; p.edge_active.len()],
            frozen: false,
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn bias_momentum(&self) -> &[f64] {
        &self.bias_momentum
    }

    pub fn edge_momentum(&self, k: usize) -> Option<f64> {
        self.edge_momentum[k]
    }

    /// Number of momentum coordinates, biases plus active edges.
    pub fn momentum_len(&self) -> usize {
        self.bias_momentum.len() + self.edge_momentum.iter().filter(|v| v.is_some()).count()
    }

    pub fn precond_bias(&self) -> &[f64] {
        &self.precond_bias
    }

    pub fn precond_edge(&self) -> &[f64] {
        &self.precond_edge
    }

    /// Gives a newly added edge fresh momentum.
    pub fn activate_edge<R: Rng + ?Sized>(&mut self, k: usize, rng: &mut R) {
        self.edge_momentum[k] = Some(rng.sample(StandardNormal));
    }

    pub fn deactivate_edge(&mut self, k: usize) {
        self.edge_momentum[k] = None;
    }

    /// Folds the diagonal curvature `N Var f + 1/prior_var` at the current
    /// parameters into the running average; the preconditioner tracks
    /// `mean(H)^(-1/2)` until frozen.
    pub fn accumulate_preconditioner(
        &mut self,
        moments: &FeatureMoments,
        n_data: usize,
        prior_var_edges: f64,
        prior_var_bias: f64,
    ) -> Result<()> {
        if self.frozen {
            return Err(Error::Config("preconditioner is frozen".into()));
        }
        let n = n_data as f64;
        for (s, v) in self.hessian_sum_bias.iter_mut().zip(&moments.node_var) {
            *s += n * v + 1.0 / prior_var_bias;
        }
        for (s, v) in self.hessian_sum_edge.iter_mut().zip(&moments.edge_var) {
            *s += n * v + 1.0 / prior_var_edges;
        }
        self.accumulated += 1;
        let count = self.accumulated as f64;
        let diag = |sum: &f64| 1.0 / (sum / count).max(CURVATURE_FLOOR).sqrt();
        self.precond_bias = self.hessian_sum_bias.iter().map(diag).collect();
        self.precond_edge = self.hessian_sum_edge.iter().map(diag).collect();
        Ok(())
    }

    /// Stops adaptation; the diagonal never changes afterwards.
    pub fn freeze(&mut self) -> Result<()> {
        if self.accumulated == 0 {
            return Err(Error::EmptyPreconditioner);
        }
        self.frozen = true;
        Ok(())
    }

    fn refresh<R: Rng + ?Sized>(&mut self, cfg: &LmcConfig, rng: &mut R) {
        let (alpha, beta) = (cfg.refresh, cfg.noise_scale());
        for v in self.bias_momentum.iter_mut() {
            *v = alpha * *v + beta * rng.sample::<f64, _>(StandardNormal);
        }
        for v in self.edge_momentum.iter_mut().flatten() {
            *v = alpha * *v + beta * rng.sample::<f64, _>(StandardNormal);
        }
    }

    fn kick(&mut self, g: &Gradient, scale: f64) {
        for ((v, c), gi) in self.bias_momentum.iter_mut().zip(&self.precond_bias).zip(&g.bias) {
            *v += scale * c * gi;
        }
        for (k, v) in self.edge_momentum.iter_mut().enumerate() {
            if let Some(v) = v {
                *v += scale * self.precond_edge[k] * g.edge[k];
            }
        }
    }

    fn drift(&self, p: &mut ParamState, eps: f64) {
        for ((b, c), v) in p.biases.iter_mut().zip(&self.precond_bias).zip(&self.bias_momentum) {
            *b += eps * c * v;
        }
        for (k, v) in self.edge_momentum.iter().enumerate() {
            if let Some(v) = v {
                p.edge_values[k] += eps * self.precond_edge[k] * v;
            }
        }
    }

    fn kinetic(&self) -> f64 {
        let b: f64 = self.bias_momentum.iter().map(|v| v * v).sum();
        let e: f64 = self.edge_momentum.iter().flatten().map(|v| v * v).sum();
        0.5 * (b + e)
    }

    fn negate(&mut self) {
        self.bias_momentum.iter_mut().for_each(|v| *v = -*v);
        self.edge_momentum.iter_mut().flatten().for_each(|v| *v = -*v);
    }

    fn check_aligned(&self, p: &ParamState) -> Result<()> {
        if self.edge_momentum.len() != p.edge_active.len() || self.bias_momentum.len() != p.biases.len() {
            return Err(Error::DimensionMismatch { expected: p.edge_active.len(), found: self.edge_momentum.len() });
        }
        for (k, (mom, &y)) in self.edge_momentum.iter().zip(&p.edge_active).enumerate() {
            if mom.is_some() != y {
                return Err(Error::EdgeState { edge: k, reason: "momentum not aligned with active set" });
            }
        }
        Ok(())
    }
}

/// Partial refresh followed by one preconditioned leapfrog step, with no
/// accept/reject. `grad` is evaluated at the start and end points.
pub fn lmc_step<R, G>(p: &mut ParamState, state: &mut LmcState, mut grad: G, cfg: &LmcConfig, rng: &mut R) -> Result<()>
where
    R: Rng + ?Sized,
    G: FnMut(&ParamState) -> Gradient,
{
    state.check_aligned(p)?;
    let eps = cfg.step_size;
    state.refresh(cfg, rng);
    state.kick(&grad(p), 0.5 * eps);
    state.drift(p, eps);
    state.kick(&grad(p), 0.5 * eps);
    Ok(())
}

/// Exact log posterior over biases and active edge values (structure and
/// hyper-parameters held fixed), its gradient and the enumeration behind it.
#[derive(Debug, Clone)]
pub struct ExactEval {
    pub log_posterior: f64,
    pub gradient: Gradient,
    pub inference: ExactInference,
}

pub fn exact_log_posterior(
    p: &ParamState,
    m: &ModelSpec,
    data: &Dataset,
    prior_var_edges: f64,
    prior_var_bias: f64,
) -> Result<ExactEval> {
    data.check_model(m)?;
    let inference = exact_inference(p, m)?;
    let n = data.len() as f64;
    let mut lp = -n * inference.log_partition;
    for i in 0..m.num_nodes() {
        lp += p.biases[i] * data.node_count(i) + normal_log_pdf(p.biases[i], 0.0, prior_var_bias);
    }
    for k in p.active_edges() {
        let (i, j) = m.edge(k);
        lp += p.edge_values[k] * data.pair_count(i, j) + normal_log_pdf(p.edge_values[k], 0.0, prior_var_edges);
    }
    let cfg = LmcConfig { step_size: 1.0, refresh: 0.0, prior_var_edges, prior_var_bias };
    let gradient = gradient_estimate(p, m, data, &inference.moments, &cfg);
    Ok(ExactEval { log_posterior: lp, gradient, inference })
}

/// Leapfrog with exact gradients followed by a Metropolis-Hastings test on
/// `-log posterior + |p|^2 / 2`; the momentum is negated on rejection.
/// Returns whether the move was accepted.
pub fn lmc_step_exact<R: Rng + ?Sized>(
    p: &mut ParamState,
    state: &mut LmcState,
    m: &ModelSpec,
    data: &Dataset,
    cfg: &LmcConfig,
    rng: &mut R,
) -> Result<bool> {
    let current = exact_log_posterior(p, m, data, cfg.prior_var_edges, cfg.prior_var_bias)?;
    Ok(lmc_step_exact_from(p, state, m, data, cfg, current, rng)?.0)
}

/// As [`lmc_step_exact`], reusing an evaluation at the current point and
/// returning the evaluation at the resulting point.
pub fn lmc_step_exact_from<R: Rng + ?Sized>(
    p: &mut ParamState,
    state: &mut LmcState,
    m: &ModelSpec,
    data: &Dataset,
    cfg: &LmcConfig,
    current: ExactEval,
    rng: &mut R,
) -> Result<(bool, ExactEval)> {
    state.check_aligned(p)?;
    let eps = cfg.step_size;
    state.refresh(cfg, rng);
    let start = p.clone();
    let start_momentum = (state.bias_momentum.clone(), state.edge_momentum.clone());
    let h0 = -current.log_posterior + state.kinetic();

    state.kick(&current.gradient, 0.5 * eps);
    state.drift(p, eps);
    let proposed = exact_log_posterior(p, m, data, cfg.prior_var_edges, cfg.prior_var_bias)?;
    state.kick(&proposed.gradient, 0.5 * eps);
    let h1 = -proposed.log_posterior + state.kinetic();

    let log_ratio = h0 - h1;
    let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accept {
        Ok((true, proposed))
    } else {
        *p = start;
        state.bias_momentum = start_momentum.0;
        state.edge_momentum = start_momentum.1;
        state.negate();
        Ok((false, current))
    }
}
