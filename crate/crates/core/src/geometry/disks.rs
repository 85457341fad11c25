use rayon::prelude::*;
use serde::Serialize;

use super::cones::{propagate_tangent, ConeParams, MAX_RETURN_STEPS};
use crate::error::{GeometryError, ModelError};
use crate::model::{ModelParams, Point, RegionLabel, TangentVector};
use crate::noise::{derive_seed, sample_sequence_stream, NoiseKernel};

/// Relative step of the central differences.
pub const FD_STEP: f64 = 1e-6;
const DISK_TAG: u64 = 0x6469_736b;

fn fd_step(t: f64) -> f64 {
    FD_STEP * t.abs().max(1.0)
}

fn support_grid(kernel: &NoiseKernel, resolution: usize) -> Vec<f64> {
    let (lo, hi) = kernel.support();
    let n = resolution.max(2);
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn central<F: Fn(f64) -> Option<Point>>(f: F, t: f64) -> Option<TangentVector> {
    let h = fd_step(t);
    let (a, b) = (f(t + h)?, f(t - h)?);
    Some(TangentVector::from_vector(&((a.to_vector() - b.to_vector()) / (2.0 * h))))
}

fn rel_err(fd: &TangentVector, exact: &TangentVector) -> f64 {
    (fd.to_vector() - exact.to_vector()).amax() / exact.norm_max().max(1.0)
}

/// The curve of perturbed images `s ↦ f_s y` over `supp θ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveReport {
    pub base: Point,
    pub s: Vec<f64>,
    pub points: Vec<Point>,
    /// Central-difference derivative at each node.
    pub derivative: Vec<TangentVector>,
    pub min_slope: f64,
    /// Smallest max-norm of the derivative.
    pub min_speed: f64,
    /// Largest relative deviation from the analytic `∂_t f_t(y)`.
    pub max_fd_error: f64,
}

pub fn perturbation_curve(
    model: &ModelParams,
    y: Point,
    kernel: &NoiseKernel,
    resolution: usize,
) -> Result<CurveReport, GeometryError> {
    if !model.regions.r_box.contains(&y) {
        return Err(GeometryError::Invalid(format!("base point {y:?} is not in R")));
    }
    let s = support_grid(kernel, resolution);
    let f = |t: f64| model.step(&y, t);
    let mut points = Vec::with_capacity(s.len());
    let mut derivative = Vec::with_capacity(s.len());
    let (mut min_slope, mut min_speed, mut max_err) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for (i, &t) in s.iter().enumerate() {
        let p = f(t).ok_or(ModelError::Escaped { step: i })?;
        let d = central(f, t).ok_or(ModelError::Escaped { step: i })?;
        let exact = TangentVector::from_vector(&model.param_derivative(&y, t).ok_or(ModelError::Escaped { step: i })?);
        min_slope = min_slope.min(d.slope()?);
        min_speed = min_speed.min(d.norm_max());
        max_err = max_err.max(rel_err(&d, &exact));
        points.push(p);
        derivative.push(d);
    }
    Ok(CurveReport { base: y, s, points, derivative, min_slope, min_speed, max_fd_error: max_err })
}

/// First `k ≥ 1` at which the sequence `(v_1, …, v_{k-1}, u)` brings `x`
/// into `Q`, provided the `v`-orbit does not reach `Q` earlier.
pub fn disk_return_time(model: &ModelParams, x: Point, v: &[f64], u: f64) -> Option<usize> {
    let mut x = x;
    for (k, &vk) in v.iter().enumerate() {
        if model.classify(&model.step(&x, u)?) == RegionLabel::InQ {
            return Some(k + 1);
        }
        x = model.step(&x, vk)?;
        if model.classify(&x) == RegionLabel::InQ {
            return None;
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiskNode {
    pub u: f64,
    pub s: f64,
    pub point: Point,
    pub du: TangentVector,
    pub ds: TangentVector,
}

/// Extremes of the four partial-derivative bounds and the `B` alignment
/// over the accepted nodes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiskChecks {
    pub min_slope_du: f64,
    pub max_slope_ds: f64,
    pub min_norm_ds: f64,
    pub min_norm_du: f64,
    pub max_angle_ds_to_b: f64,
    /// `‖B‖ / 10`
    pub norm_threshold: f64,
    pub slope_du_ok: bool,
    pub slope_ds_ok: bool,
    pub norm_ds_ok: bool,
    pub norm_du_ok: bool,
    pub angle_ok: bool,
}

impl DiskChecks {
    pub fn all_pass(&self) -> bool {
        self.slope_du_ok && self.slope_ds_ok && self.norm_ds_ok && self.norm_du_ok && self.angle_ok
    }
}

/// The return 2-disk `γ(u, s) = f_u(f_v^{R-1}(f_s y))` on the largest
/// square patch of constant return time around the centre of `supp θ²`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiskSample {
    pub base: Point,
    pub return_time: usize,
    /// Interior sequence `v`, first `return_time - 1` entries.
    pub interior: Vec<f64>,
    pub u: Vec<f64>,
    pub s: Vec<f64>,
    /// `return_times[i][j]` at `(s[i], u[j])`; `None` where undefined.
    pub return_times: Vec<Vec<Option<usize>>>,
    /// Inclusive index range `[lo, hi]` of the patch, same on both axes.
    pub patch: (usize, usize),
    pub nodes: Vec<DiskNode>,
    pub checks: DiskChecks,
    /// Largest distance between two sampled disk points.
    pub diameter: f64,
    /// Largest relative gap between `∂_u γ` and the analytic unfolding
    /// direction at the last step.
    pub max_du_error: f64,
    /// Largest relative gap between `∂_s γ` and the propagated tangent.
    pub max_ds_error: f64,
}

pub fn return_disk(
    model: &ModelParams,
    y: Point,
    kernel: &NoiseKernel,
    cone: &ConeParams,
    resolution: usize,
    seed: u64,
) -> Result<DiskSample, GeometryError> {
    cone.validate()?;
    if !model.regions.r_box.contains(&y) {
        return Err(GeometryError::Invalid(format!("base point {y:?} is not in R")));
    }
    let n = resolution.max(3) | 1;
    let grid = support_grid(kernel, n);
    let v = sample_sequence_stream(kernel, MAX_RETURN_STEPS, derive_seed(seed, DISK_TAG), 0)?.values;
    let curve = |s: f64| model.step(&y, s);

    let field: Vec<Vec<Option<usize>>> = grid
        .par_iter()
        .map(|&s| grid.iter().map(|&u| curve(s).and_then(|x| disk_return_time(model, x, &v, u))).collect())
        .collect();
    let c = n / 2;
    let r = match field[c][c] {
        Some(r) if r > 1 => r,
        other => {
            return Err(GeometryError::ReturnTimeNotConstant(format!("centre return time {other:?}, need R > 1")))
        }
    };
    let uniform = |k: usize| (c - k..=c + k).all(|i| (c - k..=c + k).all(|j| field[i][j] == Some(r)));
    let half = (0..=c).take_while(|k| uniform(*k)).last().unwrap_or(0);
    if half == 0 {
        return Err(GeometryError::ReturnTimeNotConstant(format!(
            "no constant patch around the centre (R = {r})"
        )));
    }
    let interior = v[..r - 1].to_vec();
    let pre = |s: f64| -> Option<Point> {
        let mut x = curve(s)?;
        for t in &interior {
            x = model.step(&x, *t)?;
        }
        Some(x)
    };
    let gamma = |u: f64, s: f64| pre(s).and_then(|x| model.step(&x, u));

    let idx: Vec<(usize, usize)> =
        (c - half..=c + half).flat_map(|i| (c - half..=c + half).map(move |j| (i, j))).collect();
    let nodes = idx
        .par_iter()
        .map(|&(i, j)| {
            let (s, u) = (grid[i], grid[j]);
            let esc = GeometryError::Model(ModelError::Escaped { step: r });
            let point = gamma(u, s).ok_or(esc.clone())?;
            let du = central(|t| gamma(t, s), u).ok_or(esc.clone())?;
            let ds = central(|t| gamma(u, t), s).ok_or(esc.clone())?;
            let x_pre = pre(s).ok_or(esc.clone())?;
            let du_exact = TangentVector::from_vector(&model.param_derivative(&x_pre, u).ok_or(esc)?);
            let mut ts = interior.clone();
            ts.push(u);
            let tilde = TangentVector::from_vector(
                &model.param_derivative(&y, s).ok_or(ModelError::Escaped { step: 0 })?,
            );
            let from = curve(s).ok_or(ModelError::Escaped { step: 0 })?;
            let ds_exact = propagate_tangent(model, from, &ts, tilde)?;
            Ok((DiskNode { u, s, point, du, ds }, rel_err(&du, &du_exact), rel_err(&ds, &ds_exact)))
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;

    let b = model.tangent_vector();
    let threshold = model.tangent_norm() / 10.0;
    let mut ck = DiskChecks {
        min_slope_du: f64::INFINITY,
        max_slope_ds: 0.0,
        min_norm_ds: f64::INFINITY,
        min_norm_du: f64::INFINITY,
        max_angle_ds_to_b: 0.0,
        norm_threshold: threshold,
        slope_du_ok: true,
        slope_ds_ok: true,
        norm_ds_ok: true,
        norm_du_ok: true,
        angle_ok: true,
    };
    let (mut max_du_error, mut max_ds_error) = (0.0f64, 0.0f64);
    for (nd, edu, eds) in &nodes {
        ck.min_slope_du = ck.min_slope_du.min(nd.du.slope()?);
        ck.max_slope_ds = ck.max_slope_ds.max(nd.ds.slope()?);
        ck.min_norm_ds = ck.min_norm_ds.min(nd.ds.norm_max());
        ck.min_norm_du = ck.min_norm_du.min(nd.du.norm_max());
        ck.max_angle_ds_to_b = ck.max_angle_ds_to_b.max(nd.ds.line_angle_to(&b)?);
        max_du_error = max_du_error.max(*edu);
        max_ds_error = max_ds_error.max(*eds);
    }
    ck.slope_du_ok = ck.min_slope_du >= cone.c0;
    ck.slope_ds_ok = ck.max_slope_ds <= cone.b0;
    ck.norm_ds_ok = ck.min_norm_ds >= threshold;
    ck.norm_du_ok = ck.min_norm_du >= 0.5;
    ck.angle_ok = ck.max_angle_ds_to_b <= cone.b0;

    let pts: Vec<Point> = nodes.iter().map(|n| n.0.point).collect();
    let diameter = pts
        .iter()
        .enumerate()
        .flat_map(|(i, p)| pts[i + 1..].iter().map(move |q| p.distance(q)))
        .fold(0.0, f64::max);
    Ok(DiskSample {
        base: y,
        return_time: r,
        interior,
        u: grid.clone(),
        s: grid,
        return_times: field,
        patch: (c - half, c + half),
        nodes: nodes.into_iter().map(|n| n.0).collect(),
        checks: ck,
        diameter,
        max_du_error,
        max_ds_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A point on the noise-free period-five orbit, just inside `R`.
    const BASE: Point = Point::new(1.015, 0.042, 0.0016);

    fn setup() -> (ModelParams, NoiseKernel) {
        (ModelParams::default(), NoiseKernel::uniform(0.055, 0.01).unwrap())
    }

    #[test]
    fn curve_derivative_is_unfolding_direction() {
        let (m, k) = setup();
        let c = perturbation_curve(&m, BASE, &k, 1000).unwrap();
        assert_eq!(c.s.len(), 1000);
        assert!(c.max_fd_error <= 1e-8, "{}", c.max_fd_error);
        let a = m.unfolding;
        assert!((c.min_slope - 1.0 / a[0].abs().max(a[1].abs())).abs() < 1e-6);
        assert!((c.min_speed - 1.0).abs() < 1e-9 && c.min_speed >= 0.5);
        for d in &c.derivative {
            assert!((d.u0 - 1.0).abs() < 1e-8 && (d.u1 - a[0]).abs() < 1e-8 && (d.u2 - a[1]).abs() < 1e-8);
        }
    }

    #[test]
    fn vertical_unfolding_has_infinite_slope() {
        let (mut m, k) = setup();
        m.unfolding = [0.0, 0.0];
        assert_eq!(perturbation_curve(&m, BASE, &k, 11).unwrap().min_slope, f64::INFINITY);
    }

    #[test]
    fn curve_needs_base_in_r() {
        let (m, k) = setup();
        assert!(matches!(perturbation_curve(&m, Point::TANGENCY, &k, 11), Err(GeometryError::Invalid(_))));
    }

    #[test]
    fn disk_at_base_passes_all_bounds() {
        let (m, k) = setup();
        let d = return_disk(&m, BASE, &k, &ConeParams::default(), 21, 1).unwrap();
        assert_eq!(d.return_time, 5);
        assert_eq!(d.patch, (0, 20));
        assert_eq!(d.nodes.len(), 441);
        assert!(d.checks.all_pass(), "{:?}", d.checks);
        assert!(d.checks.max_angle_ds_to_b <= 0.2);
        assert!(d.max_du_error <= 1e-6 && d.max_ds_error <= 1e-6, "{} {}", d.max_du_error, d.max_ds_error);
        assert!(d.return_times.iter().flatten().all(|r| *r == Some(5)));
    }

    #[test]
    fn disk_diameter_is_linear_in_epsilon() {
        let m = ModelParams::default();
        let eps = [0.01, 0.005, 0.0025];
        let diam: Vec<f64> = eps
            .iter()
            .map(|e| {
                let k = NoiseKernel::uniform(0.055, *e).unwrap();
                return_disk(&m, BASE, &k, &ConeParams::default(), 11, 1).unwrap().diameter
            })
            .collect();
        let slope = (diam[0] / diam[2]).ln() / (eps[0] / eps[2]).ln();
        assert!((slope - 1.0).abs() < 0.02, "slope {slope}, {diam:?}");
    }

    #[test]
    fn straddling_return_time_shrinks_patch() {
        let (m, k) = setup();
        // f_{t0} y has z ≈ 0.0875, so four doublings land on R's upper face.
        let y = Point::new(1.0, 0.1625, 0.0);
        let d = return_disk(&m, y, &k, &ConeParams::default(), 21, 1).unwrap();
        let mut seen: Vec<_> = d.return_times.iter().flatten().copied().collect();
        seen.sort();
        seen.dedup();
        assert!(seen.len() > 1, "{seen:?}");
        assert!(d.patch.1 - d.patch.0 < 20);
        let (lo, hi) = (d.u[d.patch.0], d.u[d.patch.1]);
        assert!(d.nodes.iter().all(|n| (lo..=hi).contains(&n.u) && (lo..=hi).contains(&n.s)));
    }

    #[test]
    fn boundary_at_centre_is_rejected() {
        let (m, k) = setup();
        let y = Point::new(0.7, -0.0168, 0.0);
        let e = return_disk(&m, y, &k, &ConeParams::default(), 11, 1);
        assert!(matches!(e, Err(GeometryError::ReturnTimeNotConstant(_))), "{e:?}");
    }

    #[test]
    fn return_time_field_uses_last_step_parameter() {
        let (m, _) = setup();
        let x = m.step(&BASE, 0.055).unwrap();
        assert_eq!(disk_return_time(&m, x, &[0.055; 8], 0.06), Some(5));
        assert_eq!(disk_return_time(&m, x, &[0.055; 3], 0.06), None);
    }
}
