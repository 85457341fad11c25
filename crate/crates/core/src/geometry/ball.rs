use std::collections::HashSet;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cones::MAX_RETURN_STEPS;
use super::disks::FD_STEP;
use crate::error::{GeometryError, ModelError};
use crate::model::{ModelParams, Point, RegionLabel};
use crate::noise::{derive_seed, NoiseKernel, NoiseStream};
use crate::orbits::classify_recurrence;

const BALL_TAG: u64 = 0x6261_6c6c;

/// Regularity screen run before the ball is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreenOptions {
    pub n_sequences: usize,
    pub horizon: usize,
    pub burn_in: usize,
}

impl Default for ScreenOptions {
    fn default() -> Self {
        ScreenOptions { n_sequences: 64, horizon: 200, burn_in: 20 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BallOptions {
    pub screen: ScreenOptions,
    /// Halvings of the coverage spacing tried before giving up on a
    /// stable radius.
    pub max_halvings: usize,
}

impl Default for BallOptions {
    fn default() -> Self {
        BallOptions { screen: ScreenOptions::default(), max_halvings: 6 }
    }
}

/// Derivative of `(t_i, t_j, t_k) ↦ f^k x` at the constant sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubmersionReport {
    /// Row `r`, column `c`: `∂ φ_r / ∂ t_c`.
    pub derivative: [[f64; 3]; 3],
    /// Descending.
    pub singular_values: [f64; 3],
    /// Largest entry change between steps `h` and `10h`.
    pub fd_error: f64,
    /// `log10(σ_min / fd_error)`: decimal digits by which `σ_min` clears
    /// its own uncertainty.
    pub margin_digits: f64,
    /// Inradius of the image of the unit cube `[-1, 1]³` under the
    /// derivative: `min_c |det D| / ‖d_a × d_b‖` over the three faces.
    pub inscribed_factor: f64,
}

impl SubmersionReport {
    pub fn smallest(&self) -> f64 {
        self.singular_values[2]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverageLevel {
    pub spacing: f64,
    pub radius: f64,
    pub visited_cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallReport {
    pub start: Point,
    pub epsilon: f64,
    /// `f_{t0}^n x` with `n` the third return iterate.
    pub center: Point,
    pub return_iterates: [usize; 3],
    pub radius: f64,
    pub k_empirical: f64,
    pub n_sequences: usize,
    pub n_escaped: usize,
    /// Endpoints within `16 · initial spacing` of the centre.
    pub n_near: usize,
    /// Spacing at which the reported radius was measured.
    pub grid_spacing: f64,
    /// A level met the stopping rule; otherwise `radius` is 0.
    pub stable: bool,
    pub levels: Vec<CoverageLevel>,
    pub submersion: SubmersionReport,
}

/// First three return iterates of `x` to `Q` under the constant sequence.
pub fn constant_returns(model: &ModelParams, x: Point, t0: f64) -> Option<[usize; 3]> {
    let mut found = Vec::with_capacity(3);
    let mut y = x;
    for k in 1..=3 * MAX_RETURN_STEPS {
        y = model.step(&y, t0)?;
        if model.classify(&y) == RegionLabel::InQ {
            found.push(k);
            if found.len() == 3 {
                return Some([found[0], found[1], found[2]]);
            }
        }
    }
    None
}

/// `f^n x` with `t_m = t0` except at the three return steps.
fn phi(model: &ModelParams, x: Point, t0: f64, at: [usize; 3], t: [f64; 3]) -> Option<Point> {
    let mut y = x;
    for m in 1..=at[2] {
        let tm = at.iter().position(|a| *a == m).map_or(t0, |p| t[p]);
        y = model.step(&y, tm)?;
    }
    Some(y)
}

fn derivative_at(model: &ModelParams, x: Point, t0: f64, at: [usize; 3], h: f64) -> Option<Matrix3<f64>> {
    let mut d = Matrix3::zeros();
    for c in 0..3 {
        let mut plus = [t0; 3];
        let mut minus = [t0; 3];
        plus[c] += h;
        minus[c] -= h;
        let col = (phi(model, x, t0, at, plus)?.to_vector() - phi(model, x, t0, at, minus)?.to_vector()) / (2.0 * h);
        d.set_column(c, &col);
    }
    Some(d)
}

/// Inradius of `D([-1, 1]³)`: the smallest distance from the centre to a
/// face pair, `|det D| / ‖d_a × d_b‖`.
pub fn inscribed_factor(d: &Matrix3<f64>) -> f64 {
    let det = d.determinant().abs();
    (0..3)
        .map(|c| det / d.column((c + 1) % 3).cross(&d.column((c + 2) % 3)).norm())
        .fold(f64::INFINITY, f64::min)
}

/// Finite-difference derivative of the three-return map and its singular
/// values.
pub fn submersion(model: &ModelParams, x: Point, t0: f64, at: [usize; 3]) -> Result<SubmersionReport, ModelError> {
    let h = FD_STEP * t0.abs().max(1.0);
    let esc = ModelError::Escaped { step: at[2] };
    let d = derivative_at(model, x, t0, at, h).ok_or(esc.clone())?;
    let d10 = derivative_at(model, x, t0, at, 10.0 * h).ok_or(esc)?;
    let mut sv: Vec<f64> = d.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let fd_error = (d - d10).amax().max(f64::EPSILON * sv[0]);
    Ok(SubmersionReport {
        derivative: [0, 1, 2].map(|r| [0, 1, 2].map(|c| d[(r, c)])),
        singular_values: [sv[0], sv[1], sv[2]],
        fd_error,
        margin_digits: (sv[2] / fd_error).log10(),
        inscribed_factor: inscribed_factor(&d),
    })
}

fn cell_of(center: &Point, p: &Point, h: f64) -> [i64; 3] {
    let (a, c) = (p.to_array(), center.to_array());
    [0, 1, 2].map(|i| ((a[i] - c[i]) / h).floor() as i64)
}

/// Largest `r` such that every cell of the spacing-`h` lattice meeting the
/// open ball `B(center, r)` holds a point. `center` sits on a lattice
/// vertex, so a single point never covers a ball of positive radius.
pub fn coverage_radius(center: &Point, points: &[Point], h: f64) -> (f64, usize) {
    let visited: HashSet<[i64; 3]> = points.iter().map(|p| cell_of(center, p, h)).collect();
    let gap = |i: i64| if i >= 0 { i } else { -i - 1 } as f64;
    let dist = |c: [i64; 3]| h * (gap(c[0]).powi(2) + gap(c[1]).powi(2) + gap(c[2]).powi(2)).sqrt();
    let mut best = f64::INFINITY;
    // Cells with max-gap ρ lie at distance ≥ ρh; stop once that exceeds the best found.
    for rho in 0i64.. {
        if rho as f64 * h >= best {
            break;
        }
        let range = -rho - 1..=rho;
        for i in range.clone() {
            for j in range.clone() {
                for k in range.clone() {
                    let c = [i, j, k];
                    if c.iter().map(|x| gap(*x) as i64).max() != Some(rho) {
                        continue;
                    }
                    if !visited.contains(&c) {
                        best = best.min(dist(c));
                    }
                }
            }
        }
    }
    (best, visited.len())
}

/// Simulates `n_sequences` orbits of `x` to its third return iterate and
/// measures the ball around `f_{t0}^n x` they cover.
///
/// The spacing starts at `grid_spacing` and is halved until a level's
/// radius is within 25% of the previous one while spanning at least three
/// cells. A level whose radius drops below half the previous one has run
/// out of samples and ends the search with no certified radius. With
/// `max_halvings = 0` the radius at `grid_spacing` is reported as is.
pub fn verify_ball(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x: Point,
    n_sequences: usize,
    grid_spacing: f64,
    seed: u64,
) -> Result<BallReport, GeometryError> {
    verify_ball_with(model, kernel, x, n_sequences, grid_spacing, seed, &BallOptions::default())
}

pub fn verify_ball_with(
    model: &ModelParams,
    kernel: &NoiseKernel,
    x: Point,
    n_sequences: usize,
    grid_spacing: f64,
    seed: u64,
    options: &BallOptions,
) -> Result<BallReport, GeometryError> {
    if !(grid_spacing > 0.0 && grid_spacing.is_finite()) {
        return Err(GeometryError::Invalid(format!("grid spacing must be positive, got {grid_spacing}")));
    }
    let sc = &options.screen;
    let screen = classify_recurrence(model, kernel, x, sc.n_sequences, sc.horizon, sc.burn_in, seed)?;
    if screen.fraction_recurrent < 1.0 || !screen.return_times_sequence_independent {
        return Err(GeometryError::ScreenFailed(format!(
            "recurrent fraction {}, sequence-independent returns {}",
            screen.fraction_recurrent, screen.return_times_sequence_independent
        )));
    }
    let t0 = kernel.t0;
    let at = constant_returns(model, x, t0)
        .ok_or_else(|| GeometryError::ScreenFailed("fewer than three returns under t0".into()))?;
    let n = at[2];
    let center = phi(model, x, t0, at, [t0; 3]).ok_or(ModelError::Escaped { step: n })?;
    let sub = submersion(model, x, t0, at)?;

    let base = derive_seed(seed, BALL_TAG);
    // Cells farther out than this never bound the radius at any level.
    let keep = 16.0 * grid_spacing;
    let mut points = Vec::new();
    let mut n_escaped = 0;
    const CHUNK: u64 = 1 << 16;
    for lo in (0..n_sequences as u64).step_by(CHUNK as usize) {
        let hi = (lo + CHUNK).min(n_sequences as u64);
        let ends = (lo..hi)
            .into_par_iter()
            .map(|s| {
                let mut st = NoiseStream::new(base, s);
                let mut y = x;
                for m in 0..n {
                    match model.step(&y, st.value(kernel, m as u64)?) {
                        Some(z) => y = z,
                        None => return Ok(None),
                    }
                }
                Ok(Some(y))
            })
            .collect::<Result<Vec<_>, GeometryError>>()?;
        for e in ends {
            match e {
                None => n_escaped += 1,
                Some(y) if y.distance(&center) <= keep => points.push(y),
                Some(_) => {}
            }
        }
    }

    let level = |h: f64| {
        let (radius, visited_cells) = coverage_radius(&center, &points, h);
        CoverageLevel { spacing: h, radius: radius.min(keep), visited_cells }
    };
    let mut levels = vec![level(grid_spacing)];
    let mut chosen = (options.max_halvings == 0).then_some(0);
    for m in 1..=options.max_halvings {
        let prev = levels[m - 1];
        let cur = level(prev.spacing / 2.0);
        levels.push(cur);
        if cur.radius > 0.0 && (cur.radius - prev.radius).abs() <= 0.25 * prev.radius && cur.spacing <= cur.radius / 3.0 {
            chosen = Some(m);
            break;
        }
        if cur.radius < 0.5 * prev.radius {
            break;
        }
    }
    let (radius, spacing, stable) = match chosen {
        Some(m) => (levels[m].radius, levels[m].spacing, true),
        None => (0.0, levels.last().map_or(grid_spacing, |l| l.spacing), false),
    };
    Ok(BallReport {
        start: x,
        epsilon: kernel.epsilon,
        center,
        return_iterates: at,
        radius,
        k_empirical: radius / kernel.epsilon,
        n_sequences,
        n_escaped,
        n_near: points.len(),
        grid_spacing: spacing,
        stable,
        levels,
        submersion: sub,
    })
}

/// Starting spacing `K_lin · ε`, with `K_lin` the inscribed factor of the
/// linearized three-return map.
pub fn initial_ball_spacing(model: &ModelParams, kernel: &NoiseKernel, x: Point) -> Result<f64, GeometryError> {
    let at = constant_returns(model, x, kernel.t0)
        .ok_or_else(|| GeometryError::ScreenFailed("fewer than three returns under t0".into()))?;
    Ok(submersion(model, x, kernel.t0, at)?.inscribed_factor * kernel.epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    const REGULAR: Point = Point::new(0.028571, 1.0, 1.0);

    fn setup() -> (ModelParams, NoiseKernel) {
        (ModelParams::default(), NoiseKernel::uniform(0.055, 0.01).unwrap())
    }

    #[test]
    fn inscribed_factor_of_simple_maps() {
        let d = Matrix3::from_diagonal(&nalgebra::Vector3::new(3.0, -0.5, 2.0));
        assert!((inscribed_factor(&d) - 0.5).abs() < 1e-15);
        // A shear keeps the volume; the slanted faces come closer.
        let s = Matrix3::new(1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((inscribed_factor(&s) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn shipped_point_returns_and_submersion() {
        let (m, k) = setup();
        let at = constant_returns(&m, REGULAR, k.t0).unwrap();
        assert_eq!(at, [6, 11, 16]);
        let s = submersion(&m, REGULAR, k.t0, at).unwrap();
        assert!(s.smallest() > 0.05, "{s:?}");
        assert!(s.margin_digits >= 3.0, "{s:?}");
        let sv = s.singular_values;
        assert!(sv[0] >= sv[1] && sv[1] >= sv[2]);
        assert!(s.inscribed_factor >= sv[2] * (1.0 - 1e-9) && s.inscribed_factor <= 3f64.sqrt() * sv[2]);
    }

    #[test]
    fn single_point_covers_nothing() {
        let c = Point::new(0.0, 0.0, 0.0);
        assert_eq!(coverage_radius(&c, &[Point::new(0.01, 0.01, 0.01)], 0.1).0, 0.0);
        assert_eq!(coverage_radius(&c, &[], 0.1), (0.0, 0));
        let (m, k) = setup();
        let r = verify_ball(&m, &k, REGULAR, 1, 1e-3, 0).unwrap();
        assert_eq!(r.radius, 0.0);
    }

    #[test]
    fn filled_block_has_known_radius() {
        let h = 0.5;
        let c = Point::new(1.0, 2.0, 3.0);
        let mut pts = Vec::new();
        for i in -3..3 {
            for j in -3..3 {
                for k in -3..3 {
                    pts.push(Point::new(1.0 + (i as f64 + 0.5) * h, 2.0 + (j as f64 + 0.5) * h, 3.0 + (k as f64 + 0.5) * h));
                }
            }
        }
        let (r, cells) = coverage_radius(&c, &pts, h);
        assert_eq!(cells, 216);
        assert!((r - 3.0 * h).abs() < 1e-12);
    }

    #[test]
    fn non_regular_start_is_rejected() {
        let (m, k) = setup();
        let e = verify_ball(&m, &k, Point::new(-0.05, 1.0, 1.0), 10, 1e-3, 0);
        assert!(matches!(e, Err(GeometryError::ScreenFailed(_))), "{e:?}");
        assert!(verify_ball(&m, &k, REGULAR, 10, 0.0, 0).is_err());
    }

    #[test]
    fn fixed_spacing_ball_is_positive() {
        let (m, k) = setup();
        let h = 2.0 * initial_ball_spacing(&m, &k, REGULAR).unwrap();
        let opts = BallOptions { max_halvings: 0, ..BallOptions::default() };
        let r = verify_ball_with(&m, &k, REGULAR, 100_000, h, 2, &opts).unwrap();
        assert!(r.stable && r.radius >= h, "{:?}", r.levels);
        assert_eq!(r.n_escaped, 0);
        assert_eq!(r.grid_spacing, h);
    }

    #[test]
    fn ball_is_thread_independent() {
        let (m, k) = setup();
        let h = initial_ball_spacing(&m, &k, REGULAR).unwrap();
        let a = verify_ball(&m, &k, REGULAR, 20_000, h, 4).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| verify_ball(&m, &k, REGULAR, 20_000, h, 4).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn coverage_grows_with_samples(seed in 0u64..1000, n in 1usize..400, extra in 0usize..400) {
            let mut s = NoiseStream::new(seed, 0);
            let pts: Vec<Point> = (0..(n + extra) as u64)
                .map(|i| {
                    let r = s.at(i);
                    Point::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
                })
                .collect();
            let c = Point::new(0.0, 0.0, 0.0);
            prop_assert!(coverage_radius(&c, &pts[..n], 0.5).0 <= coverage_radius(&c, &pts, 0.5).0);
        }
    }
}
