use serde::Serialize;

use super::grid::Histogram;

/// Largest tolerated growth of the density proxy per 2× refinement.
pub const BOUNDED_FACTOR: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityLevel {
    pub resolution: [usize; 3],
    pub max_density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbsContinuityReport {
    pub levels: Vec<DensityLevel>,
    /// `max_density[k+1] / max_density[k]` for consecutive levels.
    pub ratios: Vec<f64>,
    pub max_ratio: f64,
    /// Every ratio stays within [`BOUNDED_FACTOR`]. A point mass grows by
    /// 8× per 2× refinement in three dimensions.
    pub bounded: bool,
}

/// Tracks `max(cell mass / cell volume)` over successively refined
/// versions of the same measure.
pub fn abs_continuity_diagnostic(refinements: &[Histogram]) -> AbsContinuityReport {
    let levels: Vec<DensityLevel> = refinements
        .iter()
        .map(|h| DensityLevel { resolution: h.grid.resolution, max_density: h.max_density() })
        .collect();
    let ratios: Vec<f64> = levels.windows(2).map(|w| w[1].max_density / w[0].max_density).collect();
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    AbsContinuityReport { bounded: ratios.iter().all(|r| *r <= BOUNDED_FACTOR), levels, ratios, max_ratio }
}
