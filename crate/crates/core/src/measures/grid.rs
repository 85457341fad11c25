use serde::Serialize;

use crate::error::MeasureError;
use crate::model::{Box3, ModelParams, Point};

/// Uniform box partition plus one absorbing `Outside` state.
///
/// Cell `(iz, i1, i2)` has flat index `(iz * n1 + i1) * n2 + i2`; the
/// `Outside` state has index [`Grid3::outside`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid3 {
    pub bounds: Box3,
    pub resolution: [usize; 3],
}

impl Grid3 {
    pub fn new(bounds: Box3, resolution: [usize; 3]) -> Result<Self, MeasureError> {
        if !bounds.is_well_formed() {
            return Err(MeasureError::InvalidGrid(format!("degenerate bounds {bounds:?}")));
        }
        if resolution.iter().any(|n| *n == 0) {
            return Err(MeasureError::InvalidGrid(format!("resolution {resolution:?} has a zero axis")));
        }
        if resolution.iter().map(|n| *n as u128).product::<u128>() >= u32::MAX as u128 {
            return Err(MeasureError::InvalidGrid("too many cells".into()));
        }
        Ok(Grid3 { bounds, resolution })
    }

    /// `n³` cells over `U ∪ Q′`.
    pub fn for_model(model: &ModelParams, n: usize) -> Result<Self, MeasureError> {
        Grid3::new(model.regions.state_hull(), [n, n, n])
    }

    pub fn refined(&self) -> Self {
        Grid3 { bounds: self.bounds, resolution: self.resolution.map(|n| 2 * n) }
    }

    pub fn n_cells(&self) -> usize {
        self.resolution.iter().product()
    }

    /// Index of the absorbing state.
    pub fn outside(&self) -> usize {
        self.n_cells()
    }

    pub fn n_states(&self) -> usize {
        self.n_cells() + 1
    }

    pub fn spacing(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.bounds.hi[a] - self.bounds.lo[a]) / self.resolution[a] as f64)
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().iter().product()
    }

    pub fn index(&self, ijk: [usize; 3]) -> usize {
        (ijk[0] * self.resolution[1] + ijk[1]) * self.resolution[2] + ijk[2]
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n2 = self.resolution[2];
        let n1 = self.resolution[1];
        [idx / (n1 * n2), (idx / n2) % n1, idx % n2]
    }

    /// Cell containing `p`, or `None` outside the bounds. The upper faces
    /// belong to the last cell of each axis.
    #[inline]
    pub fn cell_of(&self, p: &Point) -> Option<usize> {
        let a = p.to_array();
        let mut ijk = [0usize; 3];
        for ax in 0..3 {
            let (lo, hi) = (self.bounds.lo[ax], self.bounds.hi[ax]);
            if !(a[ax] >= lo && a[ax] <= hi) {
                return None;
            }
            let n = self.resolution[ax];
            let i = ((a[ax] - lo) / (hi - lo) * n as f64) as usize;
            ijk[ax] = i.min(n - 1);
        }
        Some(self.index(ijk))
    }

    /// Like [`cell_of`](Self::cell_of) but maps to the `Outside` index.
    #[inline]
    pub fn state_of(&self, p: &Point) -> usize {
        self.cell_of(p).unwrap_or(self.outside())
    }

    pub fn cell_box(&self, idx: usize) -> Box3 {
        let ijk = self.coords(idx);
        let h = self.spacing();
        let lo = [0, 1, 2].map(|a| self.bounds.lo[a] + ijk[a] as f64 * h[a]);
        let hi = [0, 1, 2].map(|a| self.bounds.lo[a] + (ijk[a] + 1) as f64 * h[a]);
        Box3::new(lo, hi)
    }

    pub fn center(&self, idx: usize) -> Point {
        let ijk = self.coords(idx);
        let h = self.spacing();
        Point::from_array([0, 1, 2].map(|a| self.bounds.lo[a] + (ijk[a] as f64 + 0.5) * h[a]))
    }

    /// Point at relative position `u ∈ [0,1)³` inside cell `idx`.
    pub fn point_in(&self, idx: usize, u: [f64; 3]) -> Point {
        let ijk = self.coords(idx);
        let h = self.spacing();
        Point::from_array([0, 1, 2].map(|a| self.bounds.lo[a] + (ijk[a] as f64 + u[a]) * h[a]))
    }
}

/// Cell masses on a grid plus the mass that left it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub grid: Grid3,
    pub masses: Vec<f64>,
    pub escaped_mass: f64,
}

impl Histogram {
    pub fn zeros(grid: Grid3) -> Self {
        let n = grid.n_cells();
        Histogram { grid, masses: vec![0.0; n], escaped_mass: 0.0 }
    }

    /// Normalizes integer occupancy counts; `counts` has one extra trailing
    /// entry for the `Outside` state.
    pub fn from_counts(grid: Grid3, counts: &[u64]) -> Self {
        assert_eq!(counts.len(), grid.n_states());
        let total: u64 = counts.iter().sum();
        let total = total.max(1) as f64;
        let n = grid.n_cells();
        let masses = counts[..n].iter().map(|c| *c as f64 / total).collect();
        Histogram { grid, masses, escaped_mass: counts[n] as f64 / total }
    }

    /// Unit mass in the cell of `p` (or escaped if `p` is off the grid).
    pub fn dirac(grid: Grid3, p: &Point) -> Self {
        let mut h = Histogram::zeros(grid);
        match h.grid.cell_of(p) {
            Some(i) => h.masses[i] = 1.0,
            None => h.escaped_mass = 1.0,
        }
        h
    }

    /// Masses given on a subset of cells.
    pub fn from_sparse(grid: Grid3, cells: &[usize], mass: &[f64]) -> Self {
        let mut h = Histogram::zeros(grid);
        for (c, m) in cells.iter().zip(mass) {
            h.masses[*c] += m;
        }
        h
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum::<f64>() + self.escaped_mass
    }

    pub fn mass_on(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|c| self.masses[*c]).sum()
    }

    pub fn total_variation(&self, other: &Histogram) -> f64 {
        assert_eq!(self.grid, other.grid, "histograms live on different grids");
        let d: f64 = self.masses.iter().zip(&other.masses).map(|(a, b)| (a - b).abs()).sum();
        0.5 * (d + (self.escaped_mass - other.escaped_mass).abs())
    }

    /// `max_cell mass / cell volume`, the density proxy.
    pub fn max_density(&self) -> f64 {
        self.masses.iter().fold(0.0f64, |m, x| m.max(*x)) / self.grid.cell_volume()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.masses.len()).filter(|i| self.masses[*i] > 0.0).collect()
    }
}
