use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::grid::Grid3;
use crate::error::NoiseError;
use crate::model::ModelParams;
use crate::noise::{NoiseKernel, NoiseStream};

/// Row-stochastic sparse matrix in CSR layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparseStochastic {
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub probs: Vec<f64>,
}

impl SparseStochastic {
    /// Builds from per-row `(col, prob)` lists; each list is sorted by column.
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let nnz = rows.iter().map(Vec::len).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut probs = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for mut r in rows {
            r.sort_by_key(|e| e.0);
            for (c, p) in r {
                cols.push(c);
                probs.push(p);
            }
            row_ptr.push(cols.len());
        }
        SparseStochastic { row_ptr, cols, probs }
    }

    /// Dense row-major input, zeros dropped.
    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        SparseStochastic::from_rows(
            rows.iter()
                .map(|r| r.iter().enumerate().filter(|e| *e.1 != 0.0).map(|(j, p)| (j as u32, *p)).collect())
                .collect(),
        )
    }

    pub fn n(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().zip(&self.probs[r]).map(|(c, p)| (*c as usize, *p))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn max_row_sum_error(&self) -> f64 {
        (0..self.n()).map(|i| (self.row(i).map(|e| e.1).sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// `y = π P` (row vector times matrix).
    pub fn left_mul(&self, pi: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &m) in pi.iter().enumerate() {
            if m != 0.0 {
                for (j, p) in self.row(i) {
                    y[j] += m * p;
                }
            }
        }
    }

    /// Coordinate list `row col prob`, one entry per line.
    pub fn write_coo<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# row col prob")?;
        for i in 0..self.n() {
            for (j, p) in self.row(i) {
                writeln!(w, "{i} {j} {p:e}")?;
            }
        }
        Ok(())
    }
}

/// Ulam discretization of the annealed transfer operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UlamOperator {
    pub grid: Grid3,
    pub transitions: SparseStochastic,
    pub samples_per_cell: usize,
}

impl UlamOperator {
    pub fn outside(&self) -> usize {
        self.grid.outside()
    }
}

/// Row `i` samples `x` uniformly in cell `i` and `t ~ θ_ε` from stream `i`
/// of `seed`; sample `s` uses the counter block `s` of that stream.
pub fn build_ulam(
    model: &ModelParams,
    kernel: &NoiseKernel,
    grid: &Grid3,
    samples_per_cell: usize,
    seed: u64,
) -> Result<UlamOperator, NoiseError> {
    assert!(samples_per_cell >= 1, "samples_per_cell must be positive");
    let n = grid.n_cells();
    let outside = grid.outside() as u32;
    let inv = 1.0 / samples_per_cell as f64;
    let mut rows = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut stream = NoiseStream::new(seed, i as u64);
            let mut dest: Vec<u32> = Vec::with_capacity(samples_per_cell);
            for s in 0..samples_per_cell {
                let rng = stream.at(s as u64);
                let u: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                let t = kernel.sample(rng)?;
                let x = grid.point_in(i, u);
                let d = match model.step(&x, t) {
                    Some(y) => grid.cell_of(&y).map_or(outside, |c| c as u32),
                    None => outside,
                };
                dest.push(d);
            }
            dest.sort_unstable();
            let mut row: Vec<(u32, f64)> = Vec::new();
            let mut k = 0;
            while k < dest.len() {
                let mut e = k;
                while e < dest.len() && dest[e] == dest[k] {
                    e += 1;
                }
                row.push((dest[k], (e - k) as f64 * inv));
                k = e;
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, NoiseError>>()?;
    rows.push(vec![(outside, 1.0)]);
    Ok(UlamOperator {
        grid: grid.clone(),
        transitions: SparseStochastic::from_rows(rows),
        samples_per_cell,
    })
}
