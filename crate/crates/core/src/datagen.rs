//! Synthetic ground-truth models, exact data sampling and dataset/model I/O.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrf::{ising_to_boltzmann, state_log_probabilities, Dataset, LatticeTransfer, ModelSpec, ParamState, MAX_ENUM_NODES};

pub const BLOCK_NODES: usize = 12;
pub const BLOCK_GROUP_SIZE: usize = 4;
pub const LATTICE_SIDE: usize = 10;

const WITHIN_GROUP_PROB: f64 = 0.8;
const ACROSS_GROUP_PROB: f64 = 0.1;
const COUPLING_STD: f64 = 0.5;
const FIELD_STD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Block,
    Lattice,
    File,
}

/// A generating model in `{0,1}` form together with its true structure.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spec: ModelSpec,
    pub params: ParamState,
    pub true_edges: Vec<bool>,
    pub provenance: Provenance,
}

impl GroundTruth {
    pub fn new(spec: ModelSpec, params: ParamState, provenance: Provenance) -> Result<Self> {
        params.check(&spec)?;
        let true_edges = params.edge_active.clone();
        Ok(Self { spec, params, true_edges, provenance })
    }

    pub fn num_true_edges(&self) -> usize {
        self.true_edges.iter().filter(|&&y| y).count()
    }
}

/// 12 nodes in three groups of four; pairs are coupled with probability 0.8
/// inside a group and 0.1 across. Ising couplings are `N(0, 0.5^2)`, taken in
/// absolute value inside groups, and fields `N(0, 0.1^2)`.
pub fn gen_block(seed: u64) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::complete(BLOCK_NODES);
    let coupling = Normal::new(0.0, COUPLING_STD).expect("valid normal");
    let field = Normal::new(0.0, FIELD_STD).expect("valid normal");
    let couplings: Vec<f64> = spec
        .edges()
        .iter()
        .map(|&(i, j)| {
            let same = i / BLOCK_GROUP_SIZE == j / BLOCK_GROUP_SIZE;
            let on = rng.random::<f64>() < if same { WITHIN_GROUP_PROB } else { ACROSS_GROUP_PROB };
            let c: f64 = coupling.sample(&mut rng);
            match (on, same) {
                (false, _) => 0.0,
                (true, true) => c.abs(),
                (true, false) => c,
            }
        })
        .collect();
    let fields: Vec<f64> = (0..BLOCK_NODES).map(|_| field.sample(&mut rng)).collect();
    let params = ising_to_boltzmann(&couplings, &fields, &spec).expect("dimensions match");
    GroundTruth::new(spec, params, Provenance::Block).expect("generated model is valid")
}

/// 10x10 grid whose 180 nearest-neighbour pairs are all coupled; the
/// candidate set is every pair of the 100 nodes.
pub fn gen_lattice(seed: u64) -> GroundTruth {
    gen_lattice_sized(LATTICE_SIDE, LATTICE_SIDE, seed)
}

pub fn gen_lattice_sized(rows: usize, cols: usize, seed: u64) -> GroundTruth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = ModelSpec::lattice(rows, cols);
    let coupling = Normal::new(0.0, COUPLING_STD).expect("valid normal");
    let field = Normal::new(0.0, FIELD_STD).expect("valid normal");
    let mut couplings = vec![0.0; spec.num_edges()];
    for (i, j) in spec.grid_edges().expect("lattice spec") {
        let k = spec.edge_index(i, j).expect("grid pair is a candidate");
        // a draw of exactly zero would silently drop a true edge
        couplings[k] = loop {
            let c: f64 = coupling.sample(&mut rng);
            if c != 0.0 {
                break c;
            }
        };
    }
    let fields: Vec<f64> = (0..rows * cols).map(|_| field.sample(&mut rng)).collect();
    let params = ising_to_boltzmann(&couplings, &fields, &spec).expect("dimensions match");
    GroundTruth::new(spec, params, Provenance::Lattice).expect("generated model is valid")
}

/// `n` exact draws by enumeration when the model is small enough, otherwise
/// by the lattice transfer matrix.
pub fn sample_exact(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    if gt.spec.num_nodes() <= MAX_ENUM_NODES {
        sample_exact_enum(gt, n, seed)
    } else if gt.spec.lattice_dims().is_some() {
        sample_params_lattice(&gt.params, &gt.spec, n, seed)
    } else {
        Err(Error::TooManyNodes { nodes: gt.spec.num_nodes(), max: MAX_ENUM_NODES })
    }
}

/// `n` independent draws from the exact distribution over all `2^d` states.
pub fn sample_exact_enum(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    sample_params_enum(&gt.params, &gt.spec, n, seed)
}

pub fn sample_params_enum(p: &ParamState, m: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    let lp = state_log_probabilities(p, m)?;
    let mut cdf = Vec::with_capacity(lp.len());
    let mut acc = 0.0;
    for l in &lp {
        acc += l.exp();
        cdf.push(acc);
    }
    let d = m.num_nodes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut obs = Vec::with_capacity(n * d);
    for _ in 0..n {
        let u = rng.random::<f64>() * acc;
        let s = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
        obs.extend((0..d).map(|i| ((s >> i) & 1) as u8));
    }
    Dataset::from_flat(d, obs)
}

/// `n` exact draws from a lattice model by forward filtering and backward
/// sampling over columns.
pub fn sample_exact_lattice(gt: &GroundTruth, n: usize, seed: u64) -> Result<Dataset> {
    if gt.provenance != Provenance::Lattice {
        return Err(Error::InvalidModel("exact lattice sampling needs a lattice ground truth".into()));
    }
    sample_params_lattice(&gt.params, &gt.spec, n, seed)
}

pub fn sample_params_lattice(p: &ParamState, m: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    let tm = LatticeTransfer::new(p, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = m.num_nodes();
    let mut obs = Vec::with_capacity(n * d);
    for _ in 0..n {
        obs.extend(tm.sample(&mut rng));
    }
    Dataset::from_flat(d, obs)
}

/// Reads comma-separated `0`/`1` rows, one observation per line, no header.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let data = parse_dataset(&text, path, None)?;
    if data.is_empty() {
        return Err(Error::Empty(format!("{} has no observations", path.display())));
    }
    Ok(data)
}

/// As [`read_dataset`] for a known width; an empty file is a valid empty dataset.
pub fn read_dataset_with_width(path: &Path, d: usize) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text, path, Some(d))
}

fn parse_dataset(text: &str, path: &Path, width: Option<usize>) -> Result<Dataset> {
    let parse_err = |line: usize, column: usize, message: String| Error::Parse { path: path.to_path_buf(), line, column, message };
    let mut d = width;
    let mut obs = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            return Err(parse_err(ln + 1, 1, "empty line".into()));
        }
        let mut count = 0;
        for (col, tok) in line.split(',').enumerate() {
            let v = match tok {
                "0" => 0,
                "1" => 1,
                other => return Err(parse_err(ln + 1, col + 1, format!("expected 0 or 1, found {other:?}"))),
            };
            obs.push(v);
            count += 1;
        }
        match d {
            None => d = Some(count),
            Some(w) if w != count => {
                return Err(parse_err(ln + 1, count.min(w) + 1, format!("expected {w} fields, found {count}")));
            }
            _ => {}
        }
    }
    Dataset::from_flat(d.unwrap_or(0), obs)
}

pub fn write_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for row in data.rows() {
        let mut line = String::with_capacity(2 * row.len());
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push(if *v != 0 { '1' } else { '0' });
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GroundTruthJson {
    d: usize,
    candidate_edges: Vec<[usize; 2]>,
    biases: Vec<f64>,
    edge_values: Vec<f64>,
    edge_active: Vec<u8>,
    lattice_dims: Option<[usize; 2]>,
}

impl From<&GroundTruth> for GroundTruthJson {
    fn from(gt: &GroundTruth) -> Self {
        Self {
            d: gt.spec.num_nodes(),
            candidate_edges: gt.spec.edges().iter().map(|&(i, j)| [i, j]).collect(),
            biases: gt.params.biases.clone(),
            edge_values: gt.params.edge_values.clone(),
            edge_active: gt.params.edge_active.iter().map(|&y| y as u8).collect(),
            lattice_dims: gt.spec.lattice_dims().map(|(r, c)| [r, c]),
        }
    }
}

pub fn ground_truth_to_json(gt: &GroundTruth) -> Result<String> {
    Ok(serde_json::to_string_pretty(&GroundTruthJson::from(gt))?)
}

/// Parses a ground-truth document. Models carrying grid dimensions are
/// treated as lattices, all others as block-style models.
pub fn ground_truth_from_json(text: &str) -> Result<GroundTruth> {
    let g: GroundTruthJson = serde_json::from_str(text)?;
    let edges = g.candidate_edges.iter().map(|&[i, j]| (i, j)).collect();
    let spec = ModelSpec::from_parts(g.d, edges, g.lattice_dims.map(|[r, c]| (r, c)))?;
    if let Some(&bad) = g.edge_active.iter().find(|&&v| v > 1) {
        return Err(Error::InvalidModel(format!("edge_active entries must be 0 or 1, found {bad}")));
    }
    let params = ParamState::new(&spec, g.biases, g.edge_values, g.edge_active.iter().map(|&v| v == 1).collect())?;
    let provenance = if spec.lattice_dims().is_some() { Provenance::Lattice } else { Provenance::Block };
    GroundTruth::new(spec, params, provenance)
}

pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut text = ground_truth_to_json(gt)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    ground_truth_from_json(&fs::read_to_string(path)?)
}
