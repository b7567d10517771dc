//! Pairwise binary MRF representation: candidate edge sets, parameter
//! states, datasets with cached sufficient statistics, and exact inference
//! for small models and column-local lattices.

pub(crate) mod exact;
mod transfer;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use exact::{
    conditional_log_likelihood, exact_inference, exact_log_partition, exact_moments,
    log_partition_shift, state_log_probabilities, ExactInference, MAX_ENUM_NODES,
};
pub use transfer::{transfer_matrix_log_partition, LatticeTransfer, MAX_LATTICE_ROWS};

/// Largest group accepted by [`conditional_log_likelihood`].
pub const MAX_GROUP_SIZE: usize = 16;

/// The universe of candidate edges over `d` binary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    d: usize,
    edges: Vec<(usize, usize)>,
    lattice_dims: Option<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl ModelSpec {
    pub fn new(d: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(edges.len());
        for (k, &(i, j)) in edges.iter().enumerate() {
            if i >= j {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) must satisfy i < j")));
            }
            if j >= d {
                return Err(Error::InvalidModel(format!("edge ({i}, {j}) out of range for d = {d}")));
            }
            if index.insert((i, j), k).is_some() {
                return Err(Error::InvalidModel(format!("duplicate edge ({i}, {j})")));
            }
        }
        Ok(Self { d, edges, lattice_dims: None, index })
    }

    /// All `d(d-1)/2` pairs in lexicographic order.
    pub fn complete(d: usize) -> Self {
        let edges = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
        Self::new(d, edges).expect("complete edge set is valid")
    }

    /// A `rows x cols` grid whose candidate set is every pair of nodes.
    /// Node `(r, c)` has index `r * cols + c`.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let mut spec = Self::complete(rows * cols);
        spec.lattice_dims = Some((rows, cols));
        spec
    }

    /// Rebuilds a spec from its parts, checking the lattice invariant.
    pub fn from_parts(
        d: usize,
        edges: Vec<(usize, usize)>,
        lattice_dims: Option<(usize, usize)>,
    ) -> Result<Self> {
        let mut spec = Self::new(d, edges)?;
        if let Some((r, c)) = lattice_dims {
            if r * c != d {
                return Err(Error::InvalidModel(format!("lattice {r}x{c} does not have {d} nodes")));
            }
            if spec.edges.len() != d * d.saturating_sub(1) / 2 {
                return Err(Error::InvalidModel(
                    "lattice candidate set must contain every pair".into(),
                ));
            }
            spec.lattice_dims = Some((r, c));
        }
        Ok(spec)
    }

    pub fn num_nodes(&self) -> usize {
        self.d
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> (usize, usize) {
        self.edges[k]
    }

    /// Index of the candidate edge joining `i` and `j`, in either order.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        let key = if i < j { (i, j) } else { (j, i) };
        self.index.get(&key).copied()
    }

    pub fn lattice_dims(&self) -> Option<(usize, usize)> {
        self.lattice_dims
    }

    /// Nearest-neighbour pairs of the grid, or `None` for non-lattice specs.
    pub fn grid_edges(&self) -> Option<Vec<(usize, usize)>> {
        let (rows, cols) = self.lattice_dims?;
        let mut out = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = r * cols + c;
                if c + 1 < cols {
                    out.push((v, v + 1));
                }
                if r + 1 < rows {
                    out.push((v, v + cols));
                }
            }
        }
        out.sort_unstable();
        Some(out)
    }
}

/// Biases, edge values `A` and edge indicators `Y`; the effective edge
/// parameter is `Y * A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub biases: Vec<f64>,
    pub edge_values: Vec<f64>,
    pub edge_active: Vec<bool>,
}

impl ParamState {
    pub fn zeros(m: &ModelSpec) -> Self {
        Self {
            biases: vec![0.0; m.num_nodes()],
            edge_values: vec![0.0; m.num_edges()],
            edge_active: vec![false; m.num_edges()],
        }
    }

    pub fn new(
        m: &ModelSpec,
        biases: Vec<f64>,
        edge_values: Vec<f64>,
        edge_active: Vec<bool>,
    ) -> Result<Self> {
        let p = Self { biases, edge_values, edge_active };
        p.check(m)?;
        Ok(p)
    }

    pub fn check(&self, m: &ModelSpec) -> Result<()> {
        if self.biases.len() != m.num_nodes() {
            return Err(Error::DimensionMismatch { expected: m.num_nodes(), found: self.biases.len() });
        }
        for len in [self.edge_values.len(), self.edge_active.len()] {
            if len != m.num_edges() {
                return Err(Error::DimensionMismatch { expected: m.num_edges(), found: len });
            }
        }
        Ok(())
    }

    /// Effective parameter `Y_k * A_k`.
    #[inline]
    pub fn theta(&self, k: usize) -> f64 {
        if self.edge_active[k] {
            self.edge_values[k]
        } else {
            0.0
        }
    }

    pub fn num_active(&self) -> usize {
        self.edge_active.iter().filter(|&&y| y).count()
    }

    pub fn density(&self) -> f64 {
        if self.edge_active.is_empty() {
            0.0
        } else {
            self.num_active() as f64 / self.edge_active.len() as f64
        }
    }

    pub fn active_edges(&self) -> impl Iterator<Item = usize> + '_ {
        self.edge_active.iter().enumerate().filter(|(_, &y)| y).map(|(k, _)| k)
    }

    /// Per-node lists of `(neighbour, weight)` over active edges.
    pub fn adjacency(&self, m: &ModelSpec) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); m.num_nodes()];
        for k in self.active_edges() {
            let (i, j) = m.edge(k);
            let w = self.edge_values[k];
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}

/// `sum_i b_i x_i + sum_{active (i,j)} A_ij x_i x_j`.
pub fn log_unnormalized(x: &[u8], p: &ParamState, m: &ModelSpec) -> Result<f64> {
    if x.len() != m.num_nodes() {
        return Err(Error::DimensionMismatch { expected: m.num_nodes(), found: x.len() });
    }
    Ok(energy_unchecked(x, p, m))
}

pub(crate) fn energy_unchecked(x: &[u8], p: &ParamState, m: &ModelSpec) -> f64 {
    let mut e: f64 = x.iter().zip(&p.biases).filter(|(&xi, _)| xi != 0).map(|(_, b)| b).sum();
    for k in p.active_edges() {
        let (i, j) = m.edge(k);
        if x[i] != 0 && x[j] != 0 {
            e += p.edge_values[k];
        }
    }
    e
}

/// Converts a `±1` Ising model `sum J_ij s_i s_j + sum h_i s_i` into the
/// equivalent `{0,1}` parameterization via `s = 2x - 1`. Edges with a
/// nonzero coupling become active.
pub fn ising_to_boltzmann(couplings: &[f64], fields: &[f64], m: &ModelSpec) -> Result<ParamState> {
    if couplings.len() != m.num_edges() {
        return Err(Error::DimensionMismatch { expected: m.num_edges(), found: couplings.len() });
    }
    if fields.len() != m.num_nodes() {
        return Err(Error::DimensionMismatch { expected: m.num_nodes(), found: fields.len() });
    }
    let mut biases: Vec<f64> = fields.iter().map(|h| 2.0 * h).collect();
    let mut values = vec![0.0; m.num_edges()];
    let mut active = vec![false; m.num_edges()];
    for (k, &j_ij) in couplings.iter().enumerate() {
        if j_ij != 0.0 {
            let (i, j) = m.edge(k);
            values[k] = 4.0 * j_ij;
            active[k] = true;
            biases[i] -= 2.0 * j_ij;
            biases[j] -= 2.0 * j_ij;
        }
    }
    Ok(ParamState { biases, edge_values: values, edge_active: active })
}

/// Per-feature means and variances: node indicators `x_i` and pair products
/// `x_i x_j` for every candidate edge.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMoments {
    pub node_mean: Vec<f64>,
    pub node_var: Vec<f64>,
    pub edge_mean: Vec<f64>,
    pub edge_var: Vec<f64>,
}

/// N binary observations with cached sufficient statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    n: usize,
    observations: Vec<u8>,
    node_counts: Vec<u64>,
    // full symmetric d x d co-occurrence counts
    pair_counts: Vec<u64>,
}

impl Dataset {
    pub fn empty(d: usize) -> Self {
        Self::from_flat(d, Vec::new()).expect("empty dataset is valid")
    }

    pub fn from_rows(d: usize, rows: &[Vec<u8>]) -> Result<Self> {
        let mut flat = Vec::with_capacity(rows.len() * d);
        for row in rows {
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, found: row.len() });
            }
            flat.extend_from_slice(row);
        }
        Self::from_flat(d, flat)
    }

    /// Row-major `n x d` buffer of 0/1 bytes.
    pub fn from_flat(d: usize, observations: Vec<u8>) -> Result<Self> {
        if d == 0 {
            if observations.is_empty() {
                return Ok(Self { d, n: 0, observations, node_counts: vec![], pair_counts: vec![] });
            }
            return Err(Error::InvalidModel("zero-width observations".into()));
        }
        if !observations.len().is_multiple_of(d) {
            return Err(Error::DimensionMismatch { expected: d, found: observations.len() % d });
        }
        if let Some(bad) = observations.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidModel(format!("non-binary value {bad}")));
        }
        let n = observations.len() / d;
        let mut node_counts = vec![0u64; d];
        let mut pair_counts = vec![0u64; d * d];
        let mut ones = Vec::with_capacity(d);
        for row in observations.chunks_exact(d) {
            ones.clear();
            ones.extend(row.iter().enumerate().filter(|(_, &v)| v == 1).map(|(i, _)| i));
            for (a, &i) in ones.iter().enumerate() {
                node_counts[i] += 1;
                for &j in &ones[a + 1..] {
                    pair_counts[i * d + j] += 1;
                    pair_counts[j * d + i] += 1;
                }
            }
        }
        Ok(Self { d, n, observations, node_counts, pair_counts })
    }

    pub fn num_nodes(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn row(&self, m: usize) -> &[u8] {
        &self.observations[m * self.d..(m + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.observations.chunks_exact(self.d.max(1))
    }

    pub fn as_flat(&self) -> &[u8] {
        &self.observations
    }

    /// `sum_m x_i^(m)`.
    pub fn node_count(&self, i: usize) -> f64 {
        self.node_counts[i] as f64
    }

    /// `sum_m x_i^(m) x_j^(m)`.
    pub fn pair_count(&self, i: usize, j: usize) -> f64 {
        self.pair_counts[i * self.d + j] as f64
    }

    /// Pair statistics ordered like `m`'s candidate edges.
    pub fn edge_counts(&self, m: &ModelSpec) -> Vec<f64> {
        m.edges().iter().map(|&(i, j)| self.pair_count(i, j)).collect()
    }

    pub fn node_counts(&self) -> Vec<f64> {
        (0..self.d).map(|i| self.node_count(i)).collect()
    }

    pub fn check_model(&self, m: &ModelSpec) -> Result<()> {
        if self.d != m.num_nodes() {
            return Err(Error::DimensionMismatch { expected: m.num_nodes(), found: self.d });
        }
        Ok(())
    }
}

/// A group of nodes to predict, conditioned on the rest of `context`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupQuery {
    pub group: Vec<usize>,
    pub context: Vec<u8>,
}

impl GroupQuery {
    pub fn new(group: Vec<usize>, context: Vec<u8>) -> Result<Self> {
        let mut seen = vec![false; context.len()];
        for &g in &group {
            if g >= context.len() {
                return Err(Error::InvalidGroup(format!("node {g} out of range")));
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(Error::InvalidGroup(format!("node {g} repeated")));
            }
        }
        Ok(Self { group, context })
    }
}
