use std::ops::ControlFlow;

use rayon::prelude::*;

use super::grid::{Grid3, Histogram};
use crate::error::NoiseError;
use crate::model::{ModelParams, Point};
use crate::noise::NoiseKernel;
use crate::orbits::drive;

/// Monte Carlo estimate of `μ_n(x) = (1/n) Σ_{j<n} (f^j_x)_* θ_ε^ℕ`.
///
/// Sequence `i` is stream `i` of `seed`. Points off the grid, and the
/// remaining time after an escape, count toward `escaped_mass`. Counts are
/// integers so the parallel reduction is exact.
pub fn cesaro_measure(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x: Point,
    n: usize,
    n_sequences: usize,
    grid: &Grid3,
    seed: u64,
) -> Result<Histogram, NoiseError> {
    assert!(n >= 1 && n_sequences >= 1, "n and n_sequences must be positive");
    let states = grid.n_states();
    let outside = grid.outside();
    let counts = (0..n_sequences as u64)
        .into_par_iter()
        .try_fold(
            || vec![0u64; states],
            |mut acc, i| -> Result<Vec<u64>, NoiseError> {
                let mut seen = 0usize;
                drive(model, kernel, x, n - 1, seed, i, |_, p, _| {
                    acc[grid.state_of(p)] += 1;
                    seen += 1;
                    ControlFlow::Continue(())
                })?;
                acc[outside] += (n - seen) as u64;
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0u64; states],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    Ok(Histogram::from_counts(grid.clone(), &counts))
}
