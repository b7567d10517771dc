//! Column-by-column transfer matrices for grid models whose active edges
//! stay within a column or join adjacent columns. Exact log-partition and
//! exact sampling (forward filter, backward sample) in `O(C 4^R)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, LogSumExp};

use super::{ModelSpec, ParamState};

pub const MAX_LATTICE_ROWS: usize = 14;

#[derive(Debug, Clone)]
pub struct LatticeTransfer {
    rows: usize,
    cols: usize,
    // (r, r', w): node (r, c) coupled to node (r', c + 1); indexed by c
    between: Vec<Vec<(usize, usize, f64)>>,
    // forward log-messages, one 2^R table per column
    forward: Vec<Vec<f64>>,
    log_partition: f64,
}

impl LatticeTransfer {
    pub fn new(p: &ParamState, m: &ModelSpec) -> Result<Self> {
        p.check(m)?;
        let (rows, cols) = m
            .lattice_dims()
            .ok_or_else(|| Error::InvalidModel("transfer matrix needs lattice dimensions".into()))?;
        if rows > MAX_LATTICE_ROWS {
            return Err(Error::InvalidModel(format!(
                "lattice has {rows} rows; transfer matrix is capped at {MAX_LATTICE_ROWS}"
            )));
        }
        let n_states = 1usize << rows;
        let mut within: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); rows]; cols];
        let mut between = vec![Vec::new(); cols.saturating_sub(1)];
        for k in p.active_edges() {
            let (i, j) = m.edge(k);
            let w = p.edge_values[k];
            let (ri, ci, rj, cj) = (i / cols, i % cols, j / cols, j % cols);
            if ci == cj {
                within[ci][ri].push((rj, w));
                within[ci][rj].push((ri, w));
            } else if ci + 1 == cj {
                between[ci].push((ri, rj, w));
            } else if cj + 1 == ci {
                between[cj].push((rj, ri, w));
            } else {
                return Err(Error::NonLocalEdge(i, j));
            }
        }

        let unary: Vec<Vec<f64>> = (0..cols)
            .map(|c| {
                let bias: Vec<f64> = (0..rows).map(|r| p.biases[r * cols + c]).collect();
                column_energies(&bias, &within[c])
            })
            .collect();

        let mut forward = Vec::with_capacity(cols);
        forward.push(unary[0].clone());
        for c in 1..cols {
            let prev = &forward[c - 1];
            let mut acc = vec![LogSumExp::default(); n_states];
            let mut field = vec![0.0; rows];
            for (s, &ls) in prev.iter().enumerate() {
                field.iter_mut().for_each(|f| *f = 0.0);
                for &(r, r2, w) in &between[c - 1] {
                    if (s >> r) & 1 == 1 {
                        field[r2] += w;
                    }
                }
                gray_walk(&field, |t, v| acc[t].add(ls + v));
            }
            let msg: Vec<f64> = acc.iter().zip(&unary[c]).map(|(a, u)| a.value() + u).collect();
            forward.push(msg);
        }
        let log_partition = log_sum_exp(&forward[cols - 1]);
        Ok(Self { rows, cols, between, forward, log_partition })
    }

    pub fn log_partition(&self) -> f64 {
        self.log_partition
    }

    /// One exact draw, returned as a length-`R*C` row-major state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<u8> {
        let (rows, cols) = (self.rows, self.cols);
        let mut x = vec![0u8; rows * cols];
        let mut weights = vec![0.0; 1 << rows];
        let mut t = sample_log_categorical(&self.forward[cols - 1], rng);
        write_column(&mut x, t, cols - 1, rows, cols);
        let mut field = vec![0.0; rows];
        for c in (0..cols - 1).rev() {
            field.iter_mut().for_each(|f| *f = 0.0);
            for &(r, r2, w) in &self.between[c] {
                if (t >> r2) & 1 == 1 {
                    field[r] += w;
                }
            }
            let fwd = &self.forward[c];
            gray_walk(&field, |s, v| weights[s] = fwd[s] + v);
            t = sample_log_categorical(&weights, rng);
            write_column(&mut x, t, c, rows, cols);
        }
        x
    }
}

pub fn transfer_matrix_log_partition(p: &ParamState, m: &ModelSpec) -> Result<f64> {
    Ok(LatticeTransfer::new(p, m)?.log_partition())
}

fn write_column(x: &mut [u8], state: usize, c: usize, rows: usize, cols: usize) {
    for r in 0..rows {
        x[r * cols + c] = ((state >> r) & 1) as u8;
    }
}

/// Visits every state `s` of `field.len()` bits with `sum_{r in s} field[r]`.
fn gray_walk(field: &[f64], mut visit: impl FnMut(usize, f64)) {
    let mut v = 0.0;
    let mut state = 0usize;
    visit(0, 0.0);
    for i in 1..(1usize << field.len()) {
        let k = i.trailing_zeros() as usize;
        state ^= 1 << k;
        if (state >> k) & 1 == 1 {
            v += field[k];
        } else {
            v -= field[k];
        }
        visit(state, v);
    }
}

fn column_energies(bias: &[f64], within: &[Vec<(usize, f64)>]) -> Vec<f64> {
    let rows = bias.len();
    let mut out = vec![0.0; 1 << rows];
    let mut state = 0usize;
    let mut e = 0.0;
    for i in 1..(1usize << rows) {
        let k = i.trailing_zeros() as usize;
        let field = bias[k] + within[k].iter().filter(|(r, _)| (state >> r) & 1 == 1).map(|(_, w)| w).sum::<f64>();
        state ^= 1 << k;
        if (state >> k) & 1 == 1 {
            e += field;
        } else {
            e -= field;
        }
        out[state] = e;
    }
    out
}

pub(crate) fn sample_log_categorical<R: Rng + ?Sized>(log_w: &[f64], rng: &mut R) -> usize {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_w.iter().map(|l| (l - max).exp()).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, l) in log_w.iter().enumerate() {
        u -= (l - max).exp();
        if u < 0.0 {
            return i;
        }
    }
    log_w.len() - 1
}

#[cfg(test)]
mod tests {
    use super::super::exact_log_partition;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid_params(m: &ModelSpec, rng: &mut impl Rng) -> ParamState {
        let mut p = ParamState::zeros(m);
        for b in p.biases.iter_mut() {
            *b = rng.random::<f64>() * 2.0 - 1.0;
        }
        for (i, j) in m.grid_edges().unwrap() {
            let k = m.edge_index(i, j).unwrap();
            p.edge_active[k] = true;
            p.edge_values[k] = rng.random::<f64>() * 3.0 - 1.5;
        }
        p
    }

    #[test]
    fn zero_lattice_partition() {
        let m = ModelSpec::lattice(2, 2);
        let lz = transfer_matrix_log_partition(&ParamState::zeros(&m), &m).unwrap();
        assert!((lz - 4.0 * 2f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn matches_enumeration_on_small_grids() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (r, c) in [(3, 3), (2, 4), (4, 2), (1, 6), (4, 4), (2, 8)] {
            let m = ModelSpec::lattice(r, c);
            for _ in 0..3 {
                let p = grid_params(&m, &mut rng);
                let tm = transfer_matrix_log_partition(&p, &m).unwrap();
                let ex = exact_log_partition(&p, &m).unwrap();
                assert!((tm - ex).abs() <= 1e-10 * ex.abs(), "{r}x{c}: {tm} vs {ex}");
            }
        }
    }

    #[test]
    fn accepts_diagonal_and_long_column_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m = ModelSpec::lattice(3, 3);
        let mut p = grid_params(&m, &mut rng);
        // (0,0)-(2,0) same column, (0,0)-(2,1) adjacent columns
        for (i, j) in [(0, 6), (0, 7), (5, 7)] {
            let k = m.edge_index(i, j).unwrap();
            p.edge_active[k] = true;
            p.edge_values[k] = 0.9;
        }
        let tm = transfer_matrix_log_partition(&p, &m).unwrap();
        let ex = exact_log_partition(&p, &m).unwrap();
        assert!((tm - ex).abs() <= 1e-10 * ex.abs());
    }

    #[test]
    fn rejects_non_local_edges_and_tall_grids() {
        let m = ModelSpec::lattice(2, 3);
        let mut p = ParamState::zeros(&m);
        let k = m.edge_index(0, 2).unwrap();
        p.edge_active[k] = true;
        assert!(matches!(transfer_matrix_log_partition(&p, &m), Err(Error::NonLocalEdge(0, 2))));
        let tall = ModelSpec::lattice(15, 1);
        assert!(transfer_matrix_log_partition(&ParamState::zeros(&tall), &tall).is_err());
        let flat = ModelSpec::complete(4);
        assert!(transfer_matrix_log_partition(&ParamState::zeros(&flat), &flat).is_err());
    }

    #[test]
    fn gray_walk_visits_every_state_once() {
        let field = [1.0, 10.0, 100.0];
        let mut seen = vec![None; 8];
        gray_walk(&field, |s, v| {
            assert!(seen[s].is_none());
            seen[s] = Some(v);
        });
        for s in 0..8 {
            let expected: f64 = (0..3).filter(|r| (s >> r) & 1 == 1).map(|r| field[r]).sum();
            assert_eq!(seen[s], Some(expected));
        }
    }
}
