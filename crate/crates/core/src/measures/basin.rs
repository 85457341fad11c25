use std::ops::ControlFlow;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use super::components::Component;
use super::grid::{Grid3, Histogram};
use crate::error::{MeasureError, NoiseError};
use crate::model::{ModelParams, Point};
use crate::noise::NoiseKernel;
use crate::observables::Observable;
use crate::orbits::drive;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasinPartition {
    /// Assignment frequency of each component.
    pub alpha: Vec<f64>,
    pub unassigned: f64,
    pub counts: Vec<usize>,
    pub unassigned_count: usize,
    pub n_sequences: usize,
    /// Adjusted binomial standard error of each `alpha`.
    pub standard_errors: Vec<f64>,
}

impl BasinPartition {
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum::<f64>() + self.unassigned
    }
}

/// Agresti–Coull standard error; stays positive at `k = 0` and `k = n`.
pub fn binomial_standard_error(k: usize, n: usize) -> f64 {
    let nt = n as f64 + 4.0;
    let p = (k as f64 + 2.0) / nt;
    (p * (1.0 - p) / nt).sqrt()
}

/// `∫ φ dπ` for each observable, evaluated at cell centres.
pub fn component_means(component: &Component, grid: &Grid3, observables: &[Observable]) -> Vec<f64> {
    observables
        .iter()
        .map(|phi| component.cells.iter().zip(&component.density).map(|(c, m)| m * phi.eval(&grid.center(*c))).sum())
        .collect()
}

/// Birkhoff vector of one sequence, or `None` if the orbit escaped.
pub fn birkhoff_vector(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x: Point,
    observables: &[Observable],
    horizon: usize,
    seed: u64,
    stream: u64,
) -> Result<Option<Vec<f64>>, NoiseError> {
    let mut acc = vec![0.0; observables.len()];
    let escaped = drive(model, kernel, x, horizon, seed, stream, |k, p, _| {
        if k < horizon {
            for (a, phi) in acc.iter_mut().zip(observables) {
                *a += phi.eval(p);
            }
        }
        ControlFlow::Continue(())
    })?;
    if escaped.is_some() {
        return Ok(None);
    }
    acc.iter_mut().for_each(|a| *a /= horizon as f64);
    Ok(Some(acc))
}

/// Assigns each sampled sequence to the component whose mean vector is
/// nearest to the orbit's Birkhoff vector; orbits that escape, or land
/// farther than `threshold` from every mean, stay unassigned.
#[allow(clippy::too_many_arguments)]
pub fn basin_partition(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x: Point,
    means: &[Vec<f64>],
    observables: &[Observable],
    threshold: f64,
    n_sequences: usize,
    horizon: usize,
    seed: u64,
) -> Result<BasinPartition, NoiseError> {
    assert!(horizon >= 1, "horizon must be positive");
    let picks = (0..n_sequences as u64)
        .into_par_iter()
        .map(|i| {
            let v = birkhoff_vector(model, kernel, x, observables, horizon, seed, i)?;
            Ok(v.and_then(|v| {
                means
                    .iter()
                    .enumerate()
                    .map(|(j, m)| (j, m.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()))
                    .filter(|(_, d)| *d <= threshold)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(j, _)| j)
            }))
        })
        .collect::<Result<Vec<Option<usize>>, NoiseError>>()?;
    let mut counts = vec![0usize; means.len()];
    let mut unassigned_count = 0;
    for p in &picks {
        match p {
            Some(j) => counts[*j] += 1,
            None => unassigned_count += 1,
        }
    }
    let n = n_sequences.max(1) as f64;
    Ok(BasinPartition {
        alpha: counts.iter().map(|c| *c as f64 / n).collect(),
        unassigned: unassigned_count as f64 / n,
        standard_errors: counts.iter().map(|c| binomial_standard_error(*c, n_sequences)).collect(),
        counts,
        unassigned_count,
        n_sequences,
    })
}

/// Least-squares weights `w` with `Σ_j w_j π_j ≈ μ` after aggregating both
/// sides onto the component supports.
pub fn mixture_fit(mu: &Histogram, components: &[&Component]) -> Result<Vec<f64>, MeasureError> {
    let k = components.len();
    if k == 0 {
        return Ok(Vec::new());
    }
    let a = DMatrix::from_fn(k, k, |i, j| components[j].mass_on(&components[i].cells));
    let y = DVector::from_fn(k, |i, _| mu.mass_on(&components[i].cells));
    let w = a.svd(true, true).solve(&y, 1e-12).map_err(|e| MeasureError::Invalid(e.to_string()))?;
    Ok(w.iter().copied().collect())
}
