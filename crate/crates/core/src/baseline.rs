//! Nodewise L1-regularized logistic regression ("Wain Max" / "Wain Min"):
//! each variable is regressed on all others and the two directed estimates of
//! every pair are symmetrized into one pairwise model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{Dataset, ModelSpec, ParamState};
use crate::numeric::{logistic, softplus};

/// Converged when every coordinate of the minimum-norm subgradient is below this.
pub const KKT_TOLERANCE: f64 = 1e-6;
const MAX_ITERS: usize = 200_000;
const MIN_STEP: f64 = 1e-14;

/// Intercepts and directed weights of the per-node regressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodewiseFit {
    pub d: usize,
    pub lambda: f64,
    pub intercepts: Vec<f64>,
    /// Row-major `d x d`: entry `(i, j)` is `w_{i<-j}`, the weight of `x_j` in
    /// the regression for `x_i`. The diagonal is zero.
    pub weights: Vec<f64>,
}

impl NodewiseFit {
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.d + j]
    }

    fn node_coeffs(&self, i: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.d + 1);
        v.push(self.intercepts[i]);
        v.extend_from_slice(&self.weights[i * self.d..(i + 1) * self.d]);
        v
    }
}

/// How the two directed weights of a pair become one edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Larger magnitude; active if either weight is nonzero.
    Max,
    /// Smaller magnitude; active only if both weights are nonzero.
    Min,
}

// One regression problem: predict column `target` from the others.
struct NodeProblem<'a> {
    x: &'a [f64],
    d: usize,
    n: usize,
    target: usize,
    lambda: f64,
}

impl NodeProblem<'_> {
    fn row(&self, m: usize) -> &[f64] {
        &self.x[m * self.d..(m + 1) * self.d]
    }

    // coefficient vector: [intercept, w_0 .. w_{d-1}] with w_target pinned to 0
    fn linear(&self, beta: &[f64], m: usize) -> f64 {
        beta[0] + self.row(m).iter().zip(&beta[1..]).map(|(x, w)| x * w).sum::<f64>()
    }

    fn loss(&self, beta: &[f64]) -> f64 {
        let s: f64 = (0..self.n).map(|m| softplus(self.linear(beta, m)) - self.row(m)[self.target] * self.linear(beta, m)).sum();
        s / self.n as f64
    }

    fn loss_and_grad(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        for m in 0..self.n {
            let row = self.row(m);
            let z = self.linear(beta, m);
            let y = row[self.target];
            loss += softplus(z) - y * z;
            let r = logistic(z) - y;
            grad[0] += r;
            for (g, x) in grad[1..].iter_mut().zip(row) {
                *g += r * x;
            }
        }
        let inv = 1.0 / self.n as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        grad[1 + self.target] = 0.0;
        loss * inv
    }

    fn prox(&self, v: &mut [f64], step: f64) {
        let t = self.lambda * step;
        for (j, w) in v[1..].iter_mut().enumerate() {
            *w = if j == self.target { 0.0 } else { w.signum() * (w.abs() - t).max(0.0) };
        }
    }

    // Upper bound on the Lipschitz constant of the smooth part's gradient:
    // 1/4 of the top eigenvalue of X'X / N (power iteration, padded).
    fn lipschitz(&self) -> f64 {
        let k = self.d + 1;
        let mut v = vec![1.0 / (k as f64).sqrt(); k];
        let mut top = 0.0;
        for _ in 0..50 {
            let mut out = vec![0.0; k];
            for m in 0..self.n {
                let row = self.row(m);
                let xv = v[0] + row.iter().zip(&v[1..]).map(|(x, w)| x * w).sum::<f64>();
                out[0] += xv;
                for (o, x) in out[1..].iter_mut().zip(row) {
                    *o += xv * x;
                }
            }
            let norm = out.iter().map(|o| o * o).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            top = norm / self.n as f64;
            v = out.into_iter().map(|o| o / norm).collect();
        }
        (0.25 * top * 1.05).max(1e-12)
    }

    /// Largest KKT violation at `beta` given the smooth gradient.
    fn kkt_residual(&self, beta: &[f64], grad: &[f64]) -> f64 {
        let mut r = grad[0].abs();
        for j in 0..self.d {
            if j == self.target {
                continue;
            }
            let (w, g) = (beta[1 + j], grad[1 + j]);
            let v = if w != 0.0 { (g + self.lambda * w.signum()).abs() } else { (g.abs() - self.lambda).max(0.0) };
            r = r.max(v);
        }
        r
    }

    // FISTA with adaptive restart; `beta` holds the warm start on entry.
    fn solve(&self, beta: &mut [f64]) -> Result<()> {
        let k = self.d + 1;
        beta[1 + self.target] = 0.0;
        let mut step = 1.0 / self.lipschitz();
        let mut y = beta.to_vec();
        let mut t: f64 = 1.0;
        let mut grad = vec![0.0; k];
        let mut next = vec![0.0; k];
        for _ in 0..MAX_ITERS {
            let fy = self.loss_and_grad(&y, &mut grad);
            // backtracking guard on the quadratic upper bound
            loop {
                for ((n, yv), g) in next.iter_mut().zip(&y).zip(&grad) {
                    *n = yv - step * g;
                }
                self.prox(&mut next, step);
                let diff: Vec<f64> = next.iter().zip(&y).map(|(a, b)| a - b).collect();
                let bound = fy + diff.iter().zip(&grad).map(|(d, g)| d * g).sum::<f64>() + diff.iter().map(|d| d * d).sum::<f64>() / (2.0 * step);
                if self.loss(&next) <= bound + 1e-15 * bound.abs().max(1.0) {
                    break;
                }
                step *= 0.5;
                if step < MIN_STEP {
                    return Err(Error::Numeric(format!("nodewise fit for node {} diverged (step below {MIN_STEP})", self.target)));
                }
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            // restart momentum when it points uphill
            let uphill = y.iter().zip(&next).zip(beta.iter()).map(|((yv, n), b)| (yv - n) * (n - b)).sum::<f64>() > 0.0;
            let mom = if uphill { 0.0 } else { (t - 1.0) / t_next };
            t = if uphill { 1.0 } else { t_next };
            for j in 0..k {
                y[j] = next[j] + mom * (next[j] - beta[j]);
            }
            beta.copy_from_slice(&next);
            self.loss_and_grad(beta, &mut grad);
            if self.kkt_residual(beta, &grad) <= KKT_TOLERANCE {
                return if beta.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Numeric(format!("non-finite weights for node {}", self.target)))
                };
            }
        }
        Err(Error::Numeric(format!("nodewise fit for node {} did not converge in {MAX_ITERS} iterations", self.target)))
    }
}

fn design(data: &Dataset) -> Vec<f64> {
    data.as_flat().iter().map(|&v| v as f64).collect()
}

/// Smallest `lambda` at which every directed weight is zero.
pub fn lambda_max(data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("nodewise fit needs at least one observation".into()));
    }
    let x = design(data);
    let (d, n) = (data.num_nodes(), data.len());
    let mut best: f64 = 0.0;
    for i in 0..d {
        let mean = data.node_count(i) / n as f64;
        if mean == 0.0 || mean == 1.0 {
            continue;
        }
        for j in (0..d).filter(|&j| j != i) {
            let g: f64 = (0..n).map(|m| (mean - x[m * d + i]) * x[m * d + j]).sum::<f64>() / n as f64;
            best = best.max(g.abs());
        }
    }
    Ok(best)
}

/// Fits every node's L1-logistic regression at strength `lambda`.
pub fn fit_nodewise(data: &Dataset, lambda: f64) -> Result<NodewiseFit> {
    fit_nodewise_from(data, lambda, None)
}

/// As [`fit_nodewise`], starting the solver from `warm`.
pub fn fit_nodewise_from(data: &Dataset, lambda: f64, warm: Option<&NodewiseFit>) -> Result<NodewiseFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    if data.is_empty() {
        return Err(Error::Config("nodewise fit needs at least one observation".into()));
    }
    let (d, n) = (data.num_nodes(), data.len());
    if let Some(w) = warm {
        if w.d != d {
            return Err(Error::DimensionMismatch { expected: d, found: w.d });
        }
    }
    let x = design(data);
    let nodes: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let ones = data.node_count(i);
            let mut beta = vec![0.0; d + 1];
            if ones == 0.0 || ones == n as f64 {
                // constant response: no finite optimum for the intercept
                beta[0] = ((ones + 0.5) / (n as f64 - ones + 0.5)).ln();
                return Ok(beta);
            }
            match warm {
                Some(w) => beta.copy_from_slice(&w.node_coeffs(i)),
                None => beta[0] = (ones / (n as f64 - ones)).ln(),
            }
            NodeProblem { x: &x, d, n, target: i, lambda }.solve(&mut beta)?;
            Ok(beta)
        })
        .collect::<Result<_>>()?;
    let mut intercepts = Vec::with_capacity(d);
    let mut weights = Vec::with_capacity(d * d);
    for beta in nodes {
        intercepts.push(beta[0]);
        weights.extend_from_slice(&beta[1..]);
    }
    Ok(NodewiseFit { d, lambda, intercepts, weights })
}

/// Fits along `lambdas` in the given order, warm-starting each fit from the
/// previous one. Decreasing order is fastest.
pub fn fit_nodewise_path(data: &Dataset, lambdas: &[f64]) -> Result<Vec<NodewiseFit>> {
    let mut out: Vec<NodewiseFit> = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let fit = fit_nodewise_from(data, lambda, out.last())?;
        out.push(fit);
    }
    Ok(out)
}

/// Symmetrized value of candidate edge `(i, j)`, or `None` when inactive.
pub fn combined_weight(fit: &NodewiseFit, i: usize, j: usize, rule: CombineRule) -> Option<f64> {
    let (a, b) = (fit.weight(i, j), fit.weight(j, i));
    match rule {
        CombineRule::Max => {
            let v = if b.abs() > a.abs() { b } else { a };
            (v != 0.0).then_some(v)
        }
        CombineRule::Min => {
            let v = if b.abs() < a.abs() { b } else { a };
            (a != 0.0 && b != 0.0).then_some(v)
        }
    }
}

/// The pairwise model implied by `fit` on the candidate edges of `m`.
pub fn combine(fit: &NodewiseFit, m: &ModelSpec, rule: CombineRule) -> Result<ParamState> {
    if fit.d != m.num_nodes() {
        return Err(Error::DimensionMismatch { expected: m.num_nodes(), found: fit.d });
    }
    let mut p = ParamState::zeros(m);
    p.biases.copy_from_slice(&fit.intercepts);
    for (k, &(i, j)) in m.edges().iter().enumerate() {
        if let Some(v) = combined_weight(fit, i, j, rule) {
            p.edge_active[k] = true;
            p.edge_values[k] = v;
        }
    }
    Ok(p)
}

/// Edge scores for precision-recall curves: `|combined weight|`, zero when inactive.
pub fn edge_scores(fit: &NodewiseFit, m: &ModelSpec, rule: CombineRule) -> Vec<f64> {
    m.edges().iter().map(|&(i, j)| combined_weight(fit, i, j, rule).map_or(0.0, f64::abs)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_block, sample_exact_enum, sample_params_enum};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(d: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = (0..n).map(|_| (0..d).map(|_| rng.random_bool(0.4) as u8).collect()).collect();
        Dataset::from_rows(d, &rows).unwrap()
    }

    fn gradient(data: &Dataset, fit: &NodewiseFit, i: usize) -> Vec<f64> {
        let x = design(data);
        let p = NodeProblem { x: &x, d: fit.d, n: data.len(), target: i, lambda: fit.lambda };
        let mut g = vec![0.0; fit.d + 1];
        p.loss_and_grad(&fit.node_coeffs(i), &mut g);
        g
    }

    #[test]
    fn kkt_conditions_hold() {
        let data = random_data(6, 200, 1);
        for &lambda in &[0.005, 0.02, 0.08] {
            let fit = fit_nodewise(&data, lambda).unwrap();
            for i in 0..6 {
                let g = gradient(&data, &fit, i);
                assert!(g[0].abs() <= 1e-6);
                for j in (0..6).filter(|&j| j != i) {
                    let w = fit.weight(i, j);
                    if w == 0.0 {
                        assert!(g[1 + j].abs() <= lambda + 1e-6);
                    } else {
                        assert!((g[1 + j] + lambda * w.signum()).abs() <= 1e-6);
                    }
                }
                assert_eq!(fit.weight(i, i), 0.0);
            }
        }
    }

    #[test]
    fn large_lambda_zeroes_every_weight() {
        let data = random_data(5, 150, 2);
        let lmax = lambda_max(&data).unwrap();
        assert!(lmax > 0.0);
        let fit = fit_nodewise(&data, lmax).unwrap();
        assert!(fit.weights.iter().all(|&w| w == 0.0));
        // intercepts are then the log-odds of the marginals
        for i in 0..5 {
            let q = data.node_count(i) / 150.0;
            assert!((fit.intercepts[i] - (q / (1.0 - q)).ln()).abs() < 1e-5);
        }
        let fit = fit_nodewise(&data, 0.9 * lmax).unwrap();
        assert!(fit.weights.iter().any(|&w| w != 0.0));
    }

    // Newton's method on the unpenalized log-likelihood with a dense solve.
    fn newton_mle(data: &Dataset, i: usize) -> Vec<f64> {
        let d = data.num_nodes();
        let rows: Vec<Vec<f64>> = data
            .rows()
            .map(|r| std::iter::once(1.0).chain((0..d).filter(|&j| j != i).map(|j| r[j] as f64)).collect())
            .collect();
        let y: Vec<f64> = data.rows().map(|r| r[i] as f64).collect();
        let k = d;
        let mut beta = vec![0.0; k];
        for _ in 0..100 {
            let mut g = vec![0.0; k];
            let mut h = vec![vec![0.0; k]; k];
            for (x, &t) in rows.iter().zip(&y) {
                let z: f64 = x.iter().zip(&beta).map(|(a, b)| a * b).sum();
                let p = 1.0 / (1.0 + (-z).exp());
                for a in 0..k {
                    g[a] += (p - t) * x[a];
                    for b in 0..k {
                        h[a][b] += p * (1.0 - p) * x[a] * x[b];
                    }
                }
            }
            // solve h * delta = g by Gaussian elimination with partial pivoting
            for c in 0..k {
                let piv = (c..k).max_by(|&a, &b| h[a][c].abs().total_cmp(&h[b][c].abs())).unwrap();
                h.swap(c, piv);
                g.swap(c, piv);
                for r in c + 1..k {
                    let f = h[r][c] / h[c][c];
                    for cc in c..k {
                        h[r][cc] -= f * h[c][cc];
                    }
                    g[r] -= f * g[c];
                }
            }
            let mut delta = vec![0.0; k];
            for r in (0..k).rev() {
                delta[r] = (g[r] - (r + 1..k).map(|c| h[r][c] * delta[c]).sum::<f64>()) / h[r][r];
            }
            beta.iter_mut().zip(&delta).for_each(|(b, d)| *b -= d);
            if delta.iter().all(|d| d.abs() < 1e-13) {
                break;
            }
        }
        beta
    }

    #[test]
    fn unpenalized_fit_matches_newton() {
        let data = random_data(4, 300, 3);
        let fit = fit_nodewise(&data, 0.0).unwrap();
        for i in 0..4 {
            let beta = newton_mle(&data, i);
            assert!((fit.intercepts[i] - beta[0]).abs() < 1e-4);
            for (b, j) in beta[1..].iter().zip((0..4).filter(|&j| j != i)) {
                assert!((fit.weight(i, j) - b).abs() < 1e-4, "node {i} weight {j}");
            }
        }
    }

    #[test]
    fn recovers_sign_pattern_of_strong_weights() {
        let m = ModelSpec::complete(5);
        let mut p = ParamState::zeros(&m);
        p.biases = vec![-0.5, 0.3, -0.2, 0.1, -0.4];
        for (k, v) in [(0, 1.5), (3, -1.5), (5, 1.2), (9, -1.2)] {
            p.edge_active[k] = true;
            p.edge_values[k] = v;
        }
        let data = sample_params_enum(&p, &m, 10_000, 4).unwrap();
        let fit = fit_nodewise(&data, 1e-3).unwrap();
        let est = combine(&fit, &m, CombineRule::Max).unwrap();
        for k in 0..m.num_edges() {
            if p.edge_values[k].abs() >= 1.0 {
                assert!(est.edge_active[k]);
                assert_eq!(est.edge_values[k].signum(), p.edge_values[k].signum(), "edge {k}");
            }
        }
    }

    #[test]
    fn combine_rules() {
        let m = ModelSpec::complete(3);
        let mut fit = NodewiseFit { d: 3, lambda: 0.1, intercepts: vec![0.1, 0.2, 0.3], weights: vec![0.0; 9] };
        fit.weights[1] = 0.3; // w_{0<-1}
        let max = combine(&fit, &m, CombineRule::Max).unwrap();
        let min = combine(&fit, &m, CombineRule::Min).unwrap();
        assert!(max.edge_active[0] && max.edge_values[0] == 0.3);
        assert!(!min.edge_active[0] && min.edge_values[0] == 0.0);
        assert_eq!(max.biases, vec![0.1, 0.2, 0.3]);
        fit.weights[3] = -0.5; // w_{1<-0}
        assert_eq!(combined_weight(&fit, 0, 1, CombineRule::Max), Some(-0.5));
        assert_eq!(combined_weight(&fit, 0, 1, CombineRule::Min), Some(0.3));
        // symmetric weights: both rules agree
        let mut sym = fit.clone();
        sym.weights[3] = 0.3;
        assert_eq!(combine(&sym, &m, CombineRule::Max).unwrap(), combine(&sym, &m, CombineRule::Min).unwrap());
        assert_eq!(edge_scores(&fit, &m, CombineRule::Max), vec![0.5, 0.0, 0.0]);
    }

    #[test]
    fn density_shrinks_along_the_path() {
        let gt = gen_block(0);
        let data = sample_exact_enum(&gt, 100, 5).unwrap();
        let lmax = lambda_max(&data).unwrap();
        // increasing lambda
        let grid: Vec<f64> = (0..12).rev().map(|k| lmax * 0.6f64.powi(k)).collect();
        let fits = fit_nodewise_path(&data, &grid).unwrap();
        let mut last = f64::INFINITY;
        for fit in &fits {
            let max = combine(fit, &gt.spec, CombineRule::Max).unwrap();
            let min = combine(fit, &gt.spec, CombineRule::Min).unwrap();
            let (dmax, dmin) = (max.num_active() as f64 / 66.0, min.num_active() as f64 / 66.0);
            assert!(dmax >= dmin);
            assert!(dmax <= last, "density rose with lambda");
            last = dmax;
        }
    }

    #[test]
    fn path_is_continuous_in_lambda() {
        let data = random_data(5, 200, 6);
        let base = 0.03;
        let fit = fit_nodewise(&data, base).unwrap();
        let mut ratios = vec![];
        for &dl in &[1e-3, 1e-4] {
            let near = fit_nodewise_from(&data, base + dl, Some(&fit)).unwrap();
            let diff = fit.weights.iter().zip(&near.weights).chain(fit.intercepts.iter().zip(&near.intercepts)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ratios.push(diff / dl);
        }
        assert!(ratios.iter().all(|&r| r < 100.0), "{ratios:?}");
    }

    #[test]
    fn warm_start_reaches_the_same_solution() {
        let data = random_data(5, 120, 7);
        let cold = fit_nodewise(&data, 0.02).unwrap();
        let warm = fit_nodewise_from(&data, 0.02, Some(&fit_nodewise(&data, 0.05).unwrap())).unwrap();
        for (a, b) in cold.weights.iter().zip(&warm.weights) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn constant_columns_and_bad_input() {
        let rows = vec![vec![0u8, 1, 0], vec![0, 0, 1], vec![0, 1, 1], vec![0, 0, 0]];
        let data = Dataset::from_rows(3, &rows).unwrap();
        let fit = fit_nodewise(&data, 0.05).unwrap();
        assert!(fit.intercepts.iter().all(|c| c.is_finite()));
        assert!((0..3).all(|j| fit.weight(0, j) == 0.0));
        assert!(fit_nodewise(&data, -1.0).is_err());
        assert!(fit_nodewise(&Dataset::empty(3), 0.1).is_err());
    }
}
