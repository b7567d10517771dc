//! The full posterior sampler. Each iteration:
//!
//! 1. resample `p0` and `sigma0^2` given the structure;
//! 2. advance the persistent Gibbs chains and estimate feature moments;
//! 3. adapt the preconditioner (burn-in only);
//! 4. take one Langevin step on the biases and active edges;
//! 5. propose adding or deleting every eligible edge.
//!
//! In exact mode the moments come from enumeration, the Langevin step is
//! Metropolis-corrected and the edge moves use exact partition ratios.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::gibbs::{init_chains, stream, ChainBank};
use crate::hyper::{HyperPriors, HyperState};
use crate::langevin::{exact_log_posterior, gradient_estimate, lmc_step, lmc_step_exact_from, LmcConfig, LmcState};
use crate::mrf::{Dataset, ModelSpec, ParamState, MAX_ENUM_NODES};
use crate::rjmcmc::{exact_sweep, jump_widths, parallel_sweep, JumpWidthRule, JumpWidths, SweepOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Approximate,
    Exact,
}

/// How the curvature behind the preconditioner scales with the data size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecondScale {
    /// `N Var f + 1/sigma^2`: steps are a fixed fraction of the posterior scale.
    #[default]
    Data,
    /// `Var f + 1/sigma^2`: steps grow with the square root of the data size.
    Unit,
}

impl PrecondScale {
    fn count(self, n_data: usize) -> usize {
        match self {
            PrecondScale::Data => n_data,
            PrecondScale::Unit => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub iters: usize,
    pub n_chains: usize,
    pub n_gibbs: usize,
    pub step_size: f64,
    pub refresh: f64,
    pub widths: JumpWidthRule,
    pub precond_scale: PrecondScale,
    pub burn_in: usize,
    pub thin: usize,
    pub keep: usize,
    pub mode: Mode,
    pub seed: u64,
    pub priors: HyperPriors,
    pub fixed_p0: Option<f64>,
    /// Edge add/delete moves; off keeps the initial structure.
    pub jumps: bool,
    pub init_edge_prob: f64,
    pub init_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iters: 11_000,
            n_chains: 100,
            n_gibbs: 1,
            step_size: 1e-3,
            refresh: 0.9,
            widths: JumpWidthRule::Data { scale: 0.01 },
            precond_scale: PrecondScale::Data,
            burn_in: 1_000,
            thin: 10,
            keep: 1_000,
            mode: Mode::Approximate,
            seed: 0,
            priors: HyperPriors::default(),
            fixed_p0: None,
            jumps: true,
            init_edge_prob: 0.5,
            init_std: 0.5,
        }
    }
}

impl RunConfig {
    /// Defaults for the exact sampler: larger step, carry-over and windows.
    pub fn exact() -> Self {
        Self {
            mode: Mode::Exact,
            step_size: 1e-2,
            refresh: 0.95,
            widths: JumpWidthRule::Data { scale: 0.1 },
            ..Self::default()
        }
    }

    /// Sets `iters` to the smallest value that yields `keep` samples.
    pub fn with_schedule(mut self, burn_in: usize, thin: usize, keep: usize) -> Self {
        self.burn_in = burn_in;
        self.thin = thin;
        self.keep = keep;
        self.iters = burn_in + thin * keep;
        self
    }

    pub fn validate(&self, m: &ModelSpec) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.burn_in == 0 {
            return fail("burn_in must be at least 1 (the preconditioner adapts during burn-in)".into());
        }
        if self.keep.saturating_mul(self.thin) > self.iters.saturating_sub(self.burn_in) {
            return fail(format!(
                "keep * thin = {} exceeds iters - burn_in = {}",
                self.keep * self.thin,
                self.iters.saturating_sub(self.burn_in)
            ));
        }
        if self.n_gibbs == 0 {
            return fail("n_gibbs must be at least 1".into());
        }
        if self.mode == Mode::Approximate && self.n_chains < 2 {
            return Err(Error::TooFewChains(self.n_chains));
        }
        if self.mode == Mode::Exact && m.num_nodes() > MAX_ENUM_NODES {
            return Err(Error::TooManyNodes { nodes: m.num_nodes(), max: MAX_ENUM_NODES });
        }
        if let Some(p) = self.fixed_p0 {
            if !(p > 0.0 && p < 1.0) {
                return fail(format!("fixed_p0 must lie in (0, 1), got {p}"));
            }
        }
        if !(0.0..=1.0).contains(&self.init_edge_prob) || !(self.init_std >= 0.0) {
            return fail("init_edge_prob must lie in [0, 1] and init_std must be non-negative".into());
        }
        self.priors.validate()?;
        self.lmc_config(1.0).validate()
    }

    fn lmc_config(&self, sigma0_sq: f64) -> LmcConfig {
        LmcConfig {
            step_size: self.step_size,
            refresh: self.refresh,
            prior_var_edges: sigma0_sq,
            prior_var_bias: self.priors.sigma_b * self.priors.sigma_b,
        }
    }
}

/// One retained state of the chain. Edge values are stored only for active
/// edges, in candidate-edge order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSample {
    pub iter: usize,
    pub p0: f64,
    pub sigma0_sq: f64,
    #[serde(serialize_with = "bits_out", deserialize_with = "bits_in")]
    pub y: Vec<bool>,
    pub a: Vec<f64>,
    #[serde(rename = "bias")]
    pub biases: Vec<f64>,
}

fn bits_out<S: Serializer>(y: &[bool], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&y.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>())
}

fn bits_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<bool>, D::Error> {
    let s = String::deserialize(d)?;
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(serde::de::Error::custom(format!("invalid structure bit {other:?}"))),
        })
        .collect()
}

impl PosteriorSample {
    fn capture(iter: usize, p: &ParamState, hyper: &HyperState) -> Self {
        Self {
            iter,
            p0: hyper.p0,
            sigma0_sq: hyper.sigma0_sq,
            y: p.edge_active.clone(),
            a: p.active_edges().map(|k| p.edge_values[k]).collect(),
            biases: p.biases.clone(),
        }
    }

    pub fn num_active(&self) -> usize {
        self.y.iter().filter(|&&y| y).count()
    }

    pub fn density(&self) -> f64 {
        if self.y.is_empty() {
            0.0
        } else {
            self.num_active() as f64 / self.y.len() as f64
        }
    }

    /// Edge value of candidate `k`, or `None` when inactive.
    pub fn edge_value(&self, k: usize) -> Option<f64> {
        if !self.y[k] {
            return None;
        }
        let pos = self.y[..k].iter().filter(|&&y| y).count();
        Some(self.a[pos])
    }

    pub fn to_params(&self, m: &ModelSpec) -> Result<ParamState> {
        if self.y.len() != m.num_edges() || self.biases.len() != m.num_nodes() {
            return Err(Error::DimensionMismatch { expected: m.num_edges(), found: self.y.len() });
        }
        if self.a.len() != self.num_active() {
            return Err(Error::DimensionMismatch { expected: self.num_active(), found: self.a.len() });
        }
        let mut values = vec![0.0; m.num_edges()];
        let mut it = self.a.iter();
        for (v, &y) in values.iter_mut().zip(&self.y) {
            if y {
                *v = *it.next().expect("length checked above");
            }
        }
        Ok(ParamState { biases: self.biases.clone(), edge_values: values, edge_active: self.y.clone() })
    }
}

/// Counters for the moves made so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MoveStats {
    pub iterations: usize,
    pub lmc_accepted: usize,
    pub edges_added: usize,
    pub edges_removed: usize,
}

/// Iterator over the retained samples of one chain.
pub struct Sampler<'a> {
    data: &'a Dataset,
    m: &'a ModelSpec,
    cfg: RunConfig,
    rng: ChaCha8Rng,
    params: ParamState,
    hyper: HyperState,
    lmc: LmcState,
    bank: Option<ChainBank>,
    widths: JumpWidths,
    t: usize,
    emitted: usize,
    stats: MoveStats,
}

/// Starts the chain described by `cfg`. Deterministic given `cfg.seed`.
pub fn run<'a>(data: &'a Dataset, m: &'a ModelSpec, cfg: &RunConfig) -> Result<Sampler<'a>> {
    Sampler::new(data, m, cfg.clone())
}

/// As [`run`] with the mode forced to exact.
pub fn run_exact<'a>(data: &'a Dataset, m: &'a ModelSpec, cfg: &RunConfig) -> Result<Sampler<'a>> {
    Sampler::new(data, m, RunConfig { mode: Mode::Exact, ..cfg.clone() })
}

/// Runs the chain to completion and collects the retained samples.
pub fn sample_posterior(data: &Dataset, m: &ModelSpec, cfg: &RunConfig) -> Result<Vec<PosteriorSample>> {
    run(data, m, cfg)?.collect()
}

impl<'a> Sampler<'a> {
    fn new(data: &'a Dataset, m: &'a ModelSpec, cfg: RunConfig) -> Result<Self> {
        cfg.validate(m)?;
        data.check_model(m)?;
        let widths = jump_widths(data, m, cfg.widths)?;
        let mut rng = stream(cfg.seed, 0);
        let params = initial_params(m, &cfg, &mut rng)?;
        let hyper = HyperState::new(0.5, 1.0, cfg.fixed_p0)?;
        let lmc = LmcState::new(&params, &mut rng);
        let bank = match cfg.mode {
            Mode::Approximate => Some(init_chains(m, cfg.n_chains, cfg.seed)?),
            Mode::Exact => None,
        };
        Ok(Self { data, m, cfg, rng, params, hyper, lmc, bank, widths, t: 0, emitted: 0, stats: MoveStats::default() })
    }

    pub fn params(&self) -> &ParamState {
        &self.params
    }

    pub fn hyper(&self) -> &HyperState {
        &self.hyper
    }

    pub fn lmc_state(&self) -> &LmcState {
        &self.lmc
    }

    pub fn widths(&self) -> &JumpWidths {
        &self.widths
    }

    pub fn iteration(&self) -> usize {
        self.t
    }

    pub fn stats(&self) -> MoveStats {
        self.stats
    }

    /// Runs one full iteration.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let cfg = &self.cfg;
        self.hyper.update(&self.params.edge_active, &self.params.edge_values, &cfg.priors, &mut self.rng);
        let lmc_cfg = cfg.lmc_config(self.hyper.sigma0_sq);
        let adapting = self.t <= cfg.burn_in;

        let outcome = match self.bank.as_mut() {
            Some(bank) => {
                bank.sweep(&self.params, self.m, cfg.n_gibbs)?;
                let mom = bank.estimate_moments(self.m);
                if adapting {
                    self.lmc.accumulate_preconditioner(&mom.moments, cfg.precond_scale.count(self.data.len()), lmc_cfg.prior_var_edges, lmc_cfg.prior_var_bias)?;
                }
                let (m, data) = (self.m, self.data);
                let grad = |q: &ParamState| gradient_estimate(q, m, data, &mom.moments, &lmc_cfg);
                lmc_step(&mut self.params, &mut self.lmc, grad, &lmc_cfg, &mut self.rng)?;
                self.stats.lmc_accepted += 1;
                if cfg.jumps {
                    parallel_sweep(&mut self.params, m, data, &mom, &self.hyper, &self.widths, &mut self.rng)?
                } else {
                    SweepOutcome::default()
                }
            }
            None => {
                let eval = exact_log_posterior(&self.params, self.m, self.data, lmc_cfg.prior_var_edges, lmc_cfg.prior_var_bias)?;
                if adapting {
                    self.lmc.accumulate_preconditioner(&eval.inference.moments, cfg.precond_scale.count(self.data.len()), lmc_cfg.prior_var_edges, lmc_cfg.prior_var_bias)?;
                }
                let (accepted, _) = lmc_step_exact_from(&mut self.params, &mut self.lmc, self.m, self.data, &lmc_cfg, eval, &mut self.rng)?;
                self.stats.lmc_accepted += accepted as usize;
                if cfg.jumps {
                    exact_sweep(&mut self.params, self.m, self.data, &self.hyper, &self.widths, &mut self.rng)?
                } else {
                    SweepOutcome::default()
                }
            }
        };
        if self.t == cfg.burn_in {
            self.lmc.freeze()?;
        }
        for &k in &outcome.removed {
            self.lmc.deactivate_edge(k);
        }
        for &k in &outcome.added {
            self.lmc.activate_edge(k, &mut self.rng);
        }
        self.stats.iterations += 1;
        self.stats.edges_added += outcome.added.len();
        self.stats.edges_removed += outcome.removed.len();
        if !self.params.biases.iter().chain(&self.params.edge_values).all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite parameter at iteration {}", self.t)));
        }
        Ok(())
    }

    fn due(&self) -> bool {
        self.t > self.cfg.burn_in && (self.t - self.cfg.burn_in).is_multiple_of(self.cfg.thin)
    }
}

impl Iterator for Sampler<'_> {
    type Item = Result<PosteriorSample>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.emitted < self.cfg.keep && self.t < self.cfg.iters {
            if let Err(e) = self.step() {
                // stop after the first failure
                self.emitted = self.cfg.keep;
                return Some(Err(e));
            }
            if self.due() {
                self.emitted += 1;
                return Some(Ok(PosteriorSample::capture(self.t, &self.params, &self.hyper)));
            }
        }
        None
    }
}

fn initial_params<R: Rng + ?Sized>(m: &ModelSpec, cfg: &RunConfig, rng: &mut R) -> Result<ParamState> {
    let bern = Bernoulli::new(cfg.init_edge_prob).map_err(|e| Error::Config(e.to_string()))?;
    let normal = Normal::new(0.0, cfg.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let biases = (0..m.num_nodes()).map(|_| normal.sample(rng)).collect();
    let mut edge_active = Vec::with_capacity(m.num_edges());
    let mut edge_values = Vec::with_capacity(m.num_edges());
    for _ in 0..m.num_edges() {
        let y = bern.sample(rng);
        let a = normal.sample(rng);
        edge_active.push(y);
        edge_values.push(if y { a } else { 0.0 });
    }
    Ok(ParamState { biases, edge_values, edge_active })
}
