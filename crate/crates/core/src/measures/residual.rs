use rayon::prelude::*;
use serde::Serialize;

use super::grid::{Grid3, Histogram};
use crate::model::{ModelParams, Point};
use crate::noise::NoiseKernel;
use crate::observables::Observable;

/// The seven-function family: `z, x1, x2`, their squares, and the
/// indicator of `Q` averaged over the grid cell containing the point.
pub fn standard_observables(model: &ModelParams, grid: &Grid3) -> Vec<Observable> {
    let mut v: Vec<Observable> = (0..3).map(Observable::coordinate).collect();
    v.extend((0..3).map(Observable::coordinate_squared));
    let g = grid.clone();
    let q = model.regions.q_box;
    let vol = grid.cell_volume();
    v.push(Observable::new("cell-avg 1[Q]", move |p| {
        g.cell_of(p).map_or(0.0, |c| g.cell_box(c).overlap_volume(&q) / vol)
    }));
    v
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObservableResidual {
    pub name: String,
    /// `∫ φ dμ`
    pub direct: f64,
    /// `∫∫ φ(f_t x) dμ(x) dθ(t)`
    pub pushed: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub per_observable: Vec<ObservableResidual>,
    pub max: f64,
}

/// Stationarity defect of a histogram, with cell-centre quadrature in
/// space and `n_quadrature` midpoint nodes of the kernel. Escaped points
/// and points off the grid contribute `φ = 0`.
pub fn stationarity_residual(
    mu: &Histogram,
    model: &ModelParams,
    kernel: &NoiseKernel,
    observables: &[Observable],
    n_quadrature: usize,
) -> ResidualReport {
    stationarity_residual_subcell(mu, model, kernel, observables, n_quadrature, 1)
}

/// As [`stationarity_residual`], with `sub³` midpoint nodes per cell.
pub fn stationarity_residual_subcell(
    mu: &Histogram,
    model: &ModelParams,
    kernel: &NoiseKernel,
    observables: &[Observable],
    n_quadrature: usize,
    sub: usize,
) -> ResidualReport {
    let g = &mu.grid;
    let nodes = kernel.quadrature(n_quadrature);
    let sub = sub.max(1);
    let w_sub = 1.0 / (sub * sub * sub) as f64;
    let k = observables.len();
    let on_grid = |p: &Point, phi: &Observable| if g.cell_of(p).is_some() { phi.eval(p) } else { 0.0 };
    let support = mu.support();
    let (direct, pushed) = support
        .par_iter()
        .map(|&c| {
            let m = mu.masses[c];
            let mut d = vec![0.0; k];
            let mut p = vec![0.0; k];
            for a in 0..sub {
                for b in 0..sub {
                    for e in 0..sub {
                        let u = [a, b, e].map(|i| (i as f64 + 0.5) / sub as f64);
                        let x = g.point_in(c, u);
                        for (o, phi) in observables.iter().enumerate() {
                            d[o] += m * w_sub * on_grid(&x, phi);
                        }
                        for &(t, w) in &nodes {
                            if let Some(y) = model.step(&x, t) {
                                for (o, phi) in observables.iter().enumerate() {
                                    p[o] += m * w_sub * w * on_grid(&y, phi);
                                }
                            }
                        }
                    }
                }
            }
            (d, p)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((vec![0.0; k], vec![0.0; k]), |(mut d, mut p), (dc, pc)| {
            d.iter_mut().zip(&dc).for_each(|(a, b)| *a += b);
            p.iter_mut().zip(&pc).for_each(|(a, b)| *a += b);
            (d, p)
        });
    let per_observable: Vec<ObservableResidual> = observables
        .iter()
        .enumerate()
        .map(|(o, phi)| ObservableResidual {
            name: phi.name.clone(),
            direct: direct[o],
            pushed: pushed[o],
            residual: (direct[o] - pushed[o]).abs(),
        })
        .collect();
    let max = per_observable.iter().map(|r| r.residual).fold(0.0, f64::max);
    ResidualReport { per_observable, max }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn saddle_dirac_is_stationary() {
        let m = ModelParams::default();
        let k = NoiseKernel::uniform(0.055, 0.01).unwrap();
        // A one-cell grid centred on p, so the quadrature node is p itself.
        let g1 = Grid3::new(crate::model::Box3::centered(Point::SADDLE, [0.1; 3]), [1, 1, 1]).unwrap();
        let h1 = Histogram::dirac(g1.clone(), &Point::SADDLE);
        let obs: Vec<Observable> = (0..3).map(Observable::coordinate).collect();
        assert_eq!(stationarity_residual(&h1, &m, &k, &obs, 16).max, 0.0);
    }

    #[test]
    fn dirac_at_q_matches_direct_evaluation() {
        let m = ModelParams::default();
        let k = NoiseKernel::uniform(0.055, 0.01).unwrap();
        let g = Grid3::for_model(&m, 20).unwrap();
        let h = Histogram::dirac(g.clone(), &Point::TANGENCY);
        let c = g.center(g.cell_of(&Point::TANGENCY).unwrap());
        let obs = standard_observables(&m, &g);
        let r = stationarity_residual(&h, &m, &k, &obs, 64);
        let nodes = k.quadrature(64);
        for (o, phi) in r.per_observable.iter().zip(&obs) {
            let pushed: f64 = nodes
                .iter()
                .map(|(t, w)| m.step(&c, *t).filter(|y| g.cell_of(y).is_some()).map_or(0.0, |y| w * phi.eval(&y)))
                .sum();
            let want = (phi.eval(&c) - pushed).abs();
            assert!((o.residual - want).abs() < 1e-12, "{}: {} vs {want}", o.name, o.residual);
        }
        assert!(r.max > 0.1);
    }

    #[test]
    fn indicator_observable_is_cell_average() {
        let m = ModelParams::default();
        let g = Grid3::for_model(&m, 16).unwrap();
        let obs = standard_observables(&m, &g);
        assert_eq!(obs.len(), 7);
        let inner = obs[6].eval(&Point::TANGENCY);
        assert!(inner > 0.0 && inner <= 1.0);
        assert_eq!(obs[6].eval(&Point::SADDLE), 0.0);
    }
}
