//! Posterior summaries, structure-recovery metrics, predictive conditional
//! log-likelihood and chain diagnostics.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::stream;
use crate::mrf::exact::conditional_log_likelihood_adj;
use crate::mrf::{exact_log_partition, log_unnormalized, Dataset, ModelSpec, ParamState, MAX_GROUP_SIZE};
use crate::numeric::LogSumExp;
use crate::sampler::PosteriorSample;

/// Per-edge posterior statistics over a set of retained samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_samples: usize,
    /// Fraction of samples with the edge present.
    pub edge_prob: Vec<f64>,
    /// Mean of the edge value over samples where it is present; needs two such samples.
    pub cond_mean: Vec<Option<f64>>,
    /// Standard deviation (`n - 1` divisor) of the same; needs two such samples.
    pub cond_std: Vec<Option<f64>>,
    /// Mean edge value over the samples where it is present, zero if never present.
    pub active_mean: Vec<f64>,
    pub bias_mean: Vec<f64>,
    pub density_mean: f64,
    pub density_std: f64,
}

// Sum that does not depend on the order of `xs`.
fn ordered_sum(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

fn mean_std(xs: &mut [f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = ordered_sum(xs) / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let mut sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    (mean, (ordered_sum(&mut sq) / (n - 1.0)).sqrt())
}

/// Summarizes a sample set. The result does not depend on sample order.
pub fn summarize(samples: &[PosteriorSample]) -> Result<PosteriorSummary> {
    let first = samples.first().ok_or_else(|| Error::Empty("no posterior samples to summarize".into()))?;
    let (e, d) = (first.y.len(), first.biases.len());
    for s in samples {
        if s.y.len() != e || s.biases.len() != d {
            return Err(Error::DimensionMismatch { expected: e, found: s.y.len() });
        }
        if s.a.len() != s.num_active() {
            return Err(Error::DimensionMismatch { expected: s.num_active(), found: s.a.len() });
        }
    }
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); e];
    let mut biases: Vec<Vec<f64>> = vec![Vec::with_capacity(samples.len()); d];
    let mut density = Vec::with_capacity(samples.len());
    for s in samples {
        let mut it = s.a.iter();
        for (k, &y) in s.y.iter().enumerate() {
            if y {
                values[k].push(*it.next().expect("lengths checked"));
            }
        }
        for (b, &v) in biases.iter_mut().zip(&s.biases) {
            b.push(v);
        }
        density.push(s.density());
    }
    let n = samples.len() as f64;
    let mut out = PosteriorSummary {
        n_samples: samples.len(),
        edge_prob: Vec::with_capacity(e),
        cond_mean: Vec::with_capacity(e),
        cond_std: Vec::with_capacity(e),
        active_mean: Vec::with_capacity(e),
        bias_mean: biases.iter_mut().map(|b| ordered_sum(b) / n).collect(),
        density_mean: 0.0,
        density_std: 0.0,
    };
    for v in values.iter_mut() {
        out.edge_prob.push(v.len() as f64 / n);
        if v.is_empty() {
            out.active_mean.push(0.0);
            out.cond_mean.push(None);
            out.cond_std.push(None);
            continue;
        }
        let (mean, std) = mean_std(v);
        out.active_mean.push(mean);
        let defined = v.len() >= 2;
        out.cond_mean.push(defined.then_some(mean));
        out.cond_std.push(defined.then_some(std));
    }
    (out.density_mean, out.density_std) = mean_std(&mut density);
    Ok(out)
}

/// The thresholded posterior-mean model: edges with `edge_prob >= threshold`
/// take their conditional mean, biases their posterior mean.
pub fn point_model(summary: &PosteriorSummary, m: &ModelSpec, threshold: f64) -> Result<ParamState> {
    if summary.edge_prob.len() != m.num_edges() || summary.bias_mean.len() != m.num_nodes() {
        return Err(Error::DimensionMismatch { expected: m.num_edges(), found: summary.edge_prob.len() });
    }
    let mut p = ParamState::zeros(m);
    p.biases.copy_from_slice(&summary.bias_mean);
    for k in 0..m.num_edges() {
        if summary.edge_prob[k] >= threshold && summary.edge_prob[k] > 0.0 {
            p.edge_active[k] = true;
            p.edge_values[k] = summary.active_mean[k];
        }
    }
    Ok(p)
}

/// One point of a precision-recall curve; edges with `score >= threshold` are predicted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

impl PrPoint {
    pub fn f1(&self) -> f64 {
        f1_score(self.precision, self.recall)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn check_scores(scores: &[f64], truth: &[bool]) -> Result<usize> {
    if scores.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN edge score".into()));
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::InvalidModel("no true edges: recall is undefined".into()));
    }
    Ok(positives)
}

/// Precision and recall of a predicted edge set. Precision is 1 for an empty prediction.
pub fn precision_recall(predicted: &[bool], truth: &[bool]) -> Result<(f64, f64)> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: predicted.len() });
    }
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return Err(Error::InvalidModel("no true edges: recall is undefined".into()));
    }
    let tp = predicted.iter().zip(truth).filter(|(&p, &t)| p && t).count();
    let pred = predicted.iter().filter(|&&p| p).count();
    let precision = if pred == 0 { 1.0 } else { tp as f64 / pred as f64 };
    Ok((precision, tp as f64 / positives as f64))
}

/// One point per distinct score, by decreasing threshold.
pub fn pr_curve(scores: &[f64], truth: &[bool]) -> Result<Vec<PrPoint>> {
    let positives = check_scores(scores, truth)? as f64;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut pred) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            pred += 1;
            tp += truth[order[i]] as usize;
            i += 1;
        }
        out.push(PrPoint { threshold, precision: tp as f64 / pred as f64, recall: tp as f64 / positives });
    }
    Ok(out)
}

/// F1 of the edge set `score >= threshold`; zero when precision and recall are both zero.
pub fn f1_at(scores: &[f64], truth: &[bool], threshold: f64) -> Result<f64> {
    check_scores(scores, truth)?;
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    let (p, r) = precision_recall(&predicted, truth)?;
    Ok(f1_score(p, r))
}

/// Which variables are predicted from the rest in each test case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupRule {
    /// Every variable: the full log-likelihood.
    All,
    /// A `rows x cols` window of the lattice at a uniformly random position.
    Window { rows: usize, cols: usize },
}

impl GroupRule {
    /// All variables for unstructured models, 3x3 windows on lattices.
    pub fn default_for(m: &ModelSpec) -> Self {
        match m.lattice_dims() {
            Some(_) => GroupRule::Window { rows: 3, cols: 3 },
            None => GroupRule::All,
        }
    }

    fn check(&self, m: &ModelSpec) -> Result<()> {
        let size = match *self {
            GroupRule::All => m.num_nodes(),
            GroupRule::Window { rows, cols } => {
                let (r, c) = m.lattice_dims().ok_or_else(|| Error::InvalidGroup("window groups need a lattice model".into()))?;
                if rows == 0 || cols == 0 || rows > r || cols > c {
                    return Err(Error::InvalidGroup(format!("{rows}x{cols} window does not fit a {r}x{c} lattice")));
                }
                rows * cols
            }
        };
        if size > MAX_GROUP_SIZE {
            return Err(Error::GroupTooLarge { size, max: MAX_GROUP_SIZE });
        }
        Ok(())
    }
}

/// One group per test case, drawn from stream 0 of `seed`.
pub fn draw_groups(m: &ModelSpec, rule: GroupRule, cases: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    rule.check(m)?;
    match rule {
        GroupRule::All => Ok(vec![(0..m.num_nodes()).collect(); cases]),
        GroupRule::Window { rows, cols } => {
            let (r, c) = m.lattice_dims().expect("checked above");
            let mut rng = stream(seed, 0);
            Ok((0..cases)
                .map(|_| {
                    let r0 = rng.random_range(0..=r - rows);
                    let c0 = rng.random_range(0..=c - cols);
                    (r0..r0 + rows).flat_map(|i| (c0..c0 + cols).map(move |j| i * c + j)).collect()
                })
                .collect())
        }
    }
}

// Per-model evaluator: full-group cases reuse one log-partition.
struct CllModel<'a> {
    p: &'a ParamState,
    m: &'a ModelSpec,
    adj: Vec<Vec<(usize, f64)>>,
    log_z: Option<f64>,
}

impl<'a> CllModel<'a> {
    fn new(p: &'a ParamState, m: &'a ModelSpec, rule: GroupRule) -> Result<Self> {
        p.check(m)?;
        let log_z = match rule {
            GroupRule::All => Some(exact_log_partition(p, m)?),
            GroupRule::Window { .. } => None,
        };
        Ok(Self { p, m, adj: p.adjacency(m), log_z })
    }

    fn cll(&self, group: &[usize], x: &[u8]) -> Result<f64> {
        match self.log_z {
            Some(lz) if group.len() == self.m.num_nodes() => Ok(log_unnormalized(x, self.p, self.m)? - lz),
            _ => conditional_log_likelihood_adj(&self.adj, &self.p.biases, group, x),
        }
    }
}

fn check_test(m: &ModelSpec, test: &Dataset) -> Result<()> {
    test.check_model(m)?;
    if test.is_empty() {
        return Err(Error::Empty("test set has no cases".into()));
    }
    Ok(())
}

/// Conditional log-likelihood of each test case under a single model.
pub fn cll_point_cases(p: &ParamState, m: &ModelSpec, test: &Dataset, rule: GroupRule, seed: u64) -> Result<Vec<f64>> {
    check_test(m, test)?;
    let groups = draw_groups(m, rule, test.len(), seed)?;
    let model = CllModel::new(p, m, rule)?;
    (0..test.len()).into_par_iter().map(|t| model.cll(&groups[t], test.row(t))).collect()
}

/// Mean conditional log-likelihood of a single model over the test set.
pub fn cll_point(p: &ParamState, m: &ModelSpec, test: &Dataset, rule: GroupRule, seed: u64) -> Result<f64> {
    let cases = cll_point_cases(p, m, test, rule, seed)?;
    Ok(cases.iter().sum::<f64>() / cases.len() as f64)
}

/// Per-case conditional log-likelihood of the equal-weight mixture of the
/// sampled models, `log (1/K) sum_k exp(cll_k)`.
pub fn cll_bayes_cases(samples: &[PosteriorSample], m: &ModelSpec, test: &Dataset, rule: GroupRule, seed: u64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("no posterior samples for the mixture".into()));
    }
    check_test(m, test)?;
    let groups = draw_groups(m, rule, test.len(), seed)?;
    let params: Vec<ParamState> = samples.iter().map(|s| s.to_params(m)).collect::<Result<_>>()?;
    let models: Vec<CllModel> = params.iter().map(|p| CllModel::new(p, m, rule)).collect::<Result<_>>()?;
    let log_k = (models.len() as f64).ln();
    (0..test.len())
        .into_par_iter()
        .map(|t| {
            let mut acc = LogSumExp::default();
            for model in &models {
                acc.add(model.cll(&groups[t], test.row(t))?);
            }
            Ok(acc.value() - log_k)
        })
        .collect()
}

/// Mean mixture conditional log-likelihood over the test set.
pub fn cll_bayes(samples: &[PosteriorSample], m: &ModelSpec, test: &Dataset, rule: GroupRule, seed: u64) -> Result<f64> {
    let cases = cll_bayes_cases(samples, m, test, rule, seed)?;
    Ok(cases.iter().sum::<f64>() / cases.len() as f64)
}

/// Biased autocorrelation estimate at lags `0..=max_lag`.
pub fn autocorr(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if n <= max_lag.saturating_mul(4) || n < 2 {
        return Err(Error::Config(format!("series of length {n} is too short for lag {max_lag}")));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = series.iter().map(|x| x - mean).collect();
    let c0: f64 = dev.iter().map(|v| v * v).sum();
    if c0 == 0.0 || !c0.is_finite() {
        return Err(Error::Numeric("autocorrelation of a constant series".into()));
    }
    Ok((0..=max_lag)
        .map(|k| if k == 0 { 1.0 } else { dev.iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / c0 })
        .collect())
}

/// Monte Carlo standard error of the series mean from `batches` contiguous
/// batch means. Trailing values that do not fill a batch are dropped.
pub fn batch_means_se(series: &[f64], batches: usize) -> Result<f64> {
    if batches < 2 || series.len() < batches {
        return Err(Error::Config(format!("need at least {batches} >= 2 values for batch means, got {}", series.len())));
    }
    let size = series.len() / batches;
    let means: Vec<f64> = series.chunks_exact(size).take(batches).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (batches as f64 - 1.0);
    Ok((var / batches as f64).sqrt())
}

/// Value of edge `k` across samples, zero where absent.
pub fn edge_trace(samples: &[PosteriorSample], k: usize) -> Vec<f64> {
    samples.iter().map(|s| s.edge_value(k).unwrap_or(0.0)).collect()
}

/// The `count` edges with the highest posterior probability, ties to the lower index.
pub fn monitored_edges(summary: &PosteriorSummary, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..summary.edge_prob.len()).collect();
    order.sort_by(|&a, &b| summary.edge_prob[b].total_cmp(&summary.edge_prob[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}
