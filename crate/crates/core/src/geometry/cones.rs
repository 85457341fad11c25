use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, ModelError};
use crate::model::{ModelParams, Point, RegionLabel, TangentVector};
use crate::noise::{derive_seed, NoiseKernel, NoiseStream};

/// Longest first-return excursion followed before a sample is excluded.
pub const MAX_RETURN_STEPS: usize = 256;
const MAX_WITNESSES: usize = 32;
const CONE_TAG: u64 = 0x636f_6e65;

/// Cone thresholds: vectors with slope `≥ c0` are "vertical", vectors
/// with slope `≤ b0` are "horizontal".
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConeParams {
    pub c0: f64,
    pub b0: f64,
}

impl Default for ConeParams {
    fn default() -> Self {
        ConeParams { c0: 10.0, b0: 0.2 }
    }
}

impl ConeParams {
    pub fn new(c0: f64, b0: f64) -> Result<Self, GeometryError> {
        let c = ConeParams { c0, b0 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.b0 > 0.0 && self.b0 < 1.0 && self.c0 > 1.0 && self.c0.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::Invalid(format!("cone parameters need 0 < b0 < 1 < c0, got {self:?}")))
        }
    }
}

/// `d(f_{t_k} ∘ … ∘ f_{t_1})_x v`.
pub fn propagate_tangent(
    model: &ModelParams,
    x: Point,
    ts: &[f64],
    v: TangentVector,
) -> Result<TangentVector, ModelError> {
    let mut x = x;
    let mut w = v.to_vector();
    for (k, &t) in ts.iter().enumerate() {
        let j = model.jacobian(&x, t).ok_or(ModelError::Escaped { step: k })?;
        w = j * w;
        x = model.step(&x, t).ok_or(ModelError::Escaped { step: k })?;
    }
    Ok(TangentVector::from_vector(&w))
}

/// One tangent vector followed from `Q` to its first return to `Q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ConeTrace {
    /// First return time.
    pub steps: usize,
    /// Iterates spent in the linear region before the first fold.
    pub linear_steps: usize,
    pub image: TangentVector,
    pub slope: f64,
    /// `‖image‖ / ‖v‖`, max norm.
    pub norm_ratio: f64,
    /// Angle in radians between the image line and `B`.
    pub angle_to_b: f64,
}

impl ConeTrace {
    pub fn passes(&self, model: &ModelParams, cone: &ConeParams) -> [bool; 3] {
        [
            self.slope <= cone.b0,
            self.norm_ratio >= model.tangent_norm() / 10.0,
            self.angle_to_b <= cone.b0,
        ]
    }
}

/// Follows `(x, v)` under `ts` until the orbit first re-enters `Q`.
/// `None` when the orbit escapes or `ts` runs out first.
pub fn trace_to_return(model: &ModelParams, x: Point, v: TangentVector, ts: &[f64]) -> Option<ConeTrace> {
    let mut x = x;
    let mut w = v.to_vector();
    let mut linear_steps = 0;
    let mut folded = false;
    for (k, &t) in ts.iter().enumerate() {
        if model.regions.r_box.contains(&x) {
            folded = true;
        } else if !folded {
            linear_steps += 1;
        }
        w = model.jacobian(&x, t)? * w;
        x = model.step(&x, t)?;
        if model.classify(&x) == RegionLabel::InQ {
            let image = TangentVector::from_vector(&w);
            return Some(ConeTrace {
                steps: k + 1,
                linear_steps,
                image,
                slope: image.slope().ok()?,
                norm_ratio: image.norm_max() / v.norm_max(),
                angle_to_b: image.line_angle_to(&model.tangent_vector()).ok()?,
            });
        }
    }
    None
}

/// A sample that returned but missed at least one conclusion; replay with
/// `trace_to_return(model, start, v, &sequence)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConeWitness {
    pub stream: u64,
    pub start: Point,
    pub v: TangentVector,
    pub sequence: Vec<f64>,
    pub trace: ConeTrace,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlopeReport {
    pub cone: ConeParams,
    pub seed: u64,
    pub n_samples: usize,
    pub n_returned: usize,
    /// Samples that escaped or did not return within [`MAX_RETURN_STEPS`].
    pub n_excluded: usize,
    pub pass_fraction_slope: f64,
    pub pass_fraction_norm: f64,
    pub pass_fraction_angle: f64,
    pub pass_fraction_all: f64,
    pub max_return_slope: f64,
    pub min_norm_ratio: f64,
    pub max_angle_to_b: f64,
    /// `‖B‖ / 10`
    pub norm_threshold: f64,
    /// Per-step slope gain in `L`, `1 / max|σλᵢ|`.
    pub eta: f64,
    /// Fewest linear iterates between `Q` and `R` over returning samples.
    pub min_linear_steps: Option<usize>,
    pub max_return_time: Option<usize>,
    pub failures: Vec<ConeWitness>,
}

impl SlopeReport {
    pub fn all_pass(&self) -> bool {
        self.n_returned > 0 && self.pass_fraction_all == 1.0
    }
}

/// Draws a start in `Q` and a unit (max norm) vector with slope `≥ c0`.
/// `1/slope` is uniform on `[0, 1/c0]`.
fn draw_sample<R: Rng + ?Sized>(model: &ModelParams, cone: &ConeParams, rng: &mut R) -> (Point, TangentVector) {
    let q = &model.regions.q_box;
    let x = Point::from_array([0, 1, 2].map(|a| q.lo[a] + (q.hi[a] - q.lo[a]) * rng.random::<f64>()));
    let u1: f64 = rng.random_range(-1.0..1.0);
    let u2: f64 = rng.random_range(-1.0..1.0);
    let inv: f64 = rng.random::<f64>() / cone.c0;
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let m = u1.abs().max(u2.abs());
    let v = if inv == 0.0 || m == 0.0 {
        TangentVector::new(sign, 0.0, 0.0)
    } else {
        let u0 = sign * m / inv;
        let n = u0.abs().max(m);
        TangentVector::new(u0 / n, u1 / n, u2 / n)
    };
    (x, v)
}

/// Samples `(x, v, t)` with `x ∈ Q`, `slope(v) ≥ c0`, follows each to its
/// first return to `Q` and checks that the returned vector is flat
/// (`slope ≤ b0`), long (`‖·‖ ≥ ‖B‖/10`) and aligned with `B`
/// (angle `≤ b0`). Sample 0 uses the vertical vector `(1, 0, 0)`.
pub fn verify_return_cones(
    model: &ModelParams,
    kernel: &NoiseKernel,
    cone: &ConeParams,
    n_samples: usize,
    seed: u64,
) -> Result<SlopeReport, GeometryError> {
    cone.validate()?;
    let base = derive_seed(seed, CONE_TAG);
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let mut s = NoiseStream::new(base, i);
            let (x, mut v) = draw_sample(model, cone, s.at(0));
            if i == 0 {
                v = TangentVector::new(1.0, 0.0, 0.0);
            }
            let ts = (0..MAX_RETURN_STEPS as u64).map(|k| s.value(kernel, k + 1)).collect::<Result<Vec<_>, _>>()?;
            let trace = trace_to_return(model, x, v, &ts);
            Ok((i, x, v, ts, trace))
        })
        .collect::<Result<Vec<_>, GeometryError>>()?;

    let mut counts = [0usize; 4];
    let mut n_returned = 0;
    let mut max_slope = 0.0f64;
    let mut min_norm = f64::INFINITY;
    let mut max_angle = 0.0f64;
    let mut min_linear: Option<usize> = None;
    let mut max_rt: Option<usize> = None;
    let mut failures = Vec::new();
    for (i, x, v, ts, trace) in samples {
        let Some(tr) = trace else { continue };
        n_returned += 1;
        let p = tr.passes(model, cone);
        for (c, ok) in counts.iter_mut().zip(p.iter().chain([&p.iter().all(|b| *b)])) {
            *c += *ok as usize;
        }
        max_slope = max_slope.max(tr.slope);
        min_norm = min_norm.min(tr.norm_ratio);
        max_angle = max_angle.max(tr.angle_to_b);
        min_linear = Some(min_linear.map_or(tr.linear_steps, |m| m.min(tr.linear_steps)));
        max_rt = Some(max_rt.map_or(tr.steps, |m| m.max(tr.steps)));
        if !p.iter().all(|b| *b) && failures.len() < MAX_WITNESSES {
            failures.push(ConeWitness { stream: i, start: x, v, sequence: ts[..tr.steps].to_vec(), trace: tr });
        }
    }
    let frac = |c: usize| if n_returned == 0 { 0.0 } else { c as f64 / n_returned as f64 };
    Ok(SlopeReport {
        cone: *cone,
        seed,
        n_samples,
        n_returned,
        n_excluded: n_samples - n_returned,
        pass_fraction_slope: frac(counts[0]),
        pass_fraction_norm: frac(counts[1]),
        pass_fraction_angle: frac(counts[2]),
        pass_fraction_all: frac(counts[3]),
        max_return_slope: max_slope,
        min_norm_ratio: if n_returned == 0 { 0.0 } else { min_norm },
        max_angle_to_b: max_angle,
        norm_threshold: model.tangent_norm() / 10.0,
        eta: model.cone_rate(),
        min_linear_steps: min_linear,
        max_return_time: max_rt,
        failures,
    })
}
