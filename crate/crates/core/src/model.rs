//! The perturbed map family in linearized coordinates.
//!
//! A point is written `(z, x1, x2)`: `z` is the expanding coordinate of the
//! saddle `p = (0, 0, 0)`, `x1` the weak-stable and `x2` the strong-stable
//! one. Inside the linearization box `L` the map is diagonal,
//!
//! > `(z, x1, x2) ↦ (σ z, λ₁ x1, λ₂ x2)`,
//!
//! and on the return box `R` around `r = (1, 0, 0)` it is the quadratic fold
//! that carries `R` back to a neighborhood `Q′` of the tangency point
//! `q = (0, 1, 1)`:
//!
//! > `(1 + z, X) ↦ (t + a z² + b·X + h, q0 + A t + B z + C X + H)`.
//!
//! Here `t` is the unfolding parameter. The random system draws a fresh `t`
//! at every step.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// A state in linearized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub z: f64,
    pub x1: f64,
    pub x2: f64,
}

impl Point {
    pub const fn new(z: f64, x1: f64, x2: f64) -> Self {
        Point { z, x1, x2 }
    }

    /// The saddle fixed point `p`.
    pub const SADDLE: Point = Point::new(0.0, 0.0, 0.0);
    /// The tangency point `q`.
    pub const TANGENCY: Point = Point::new(0.0, 1.0, 1.0);
    /// The pre-image `r` of the tangency point.
    pub const RETURN: Point = Point::new(1.0, 0.0, 0.0);

    pub fn from_array(a: [f64; 3]) -> Self {
        Point::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.z, self.x1, self.x2]
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.z, self.x1, self.x2)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Point::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.z.is_finite() && self.x1.is_finite() && self.x2.is_finite()
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.to_vector() - other.to_vector()).norm()
    }
}

/// Closed axis-aligned box `[lo, hi]` in linearized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Box3 {
    pub const fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Box3 { lo, hi }
    }

    pub fn centered(center: Point, half: [f64; 3]) -> Self {
        let c = center.to_array();
        Box3::new(
            [c[0] - half[0], c[1] - half[1], c[2] - half[2]],
            [c[0] + half[0], c[1] + half[1], c[2] + half[2]],
        )
    }

    pub fn is_well_formed(&self) -> bool {
        (0..3).all(|i| self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] < self.hi[i])
    }

    pub fn contains(&self, p: &Point) -> bool {
        let a = p.to_array();
        (0..3).all(|i| a[i] >= self.lo[i] && a[i] <= self.hi[i])
    }

    pub fn contains_box(&self, other: &Box3) -> bool {
        (0..3).all(|i| other.lo[i] >= self.lo[i] && other.hi[i] <= self.hi[i])
    }

    /// True when the interiors overlap.
    pub fn overlaps(&self, other: &Box3) -> bool {
        (0..3).all(|i| self.lo[i] < other.hi[i] && other.lo[i] < self.hi[i])
    }

    /// True when the closed boxes share at least one point.
    pub fn intersects(&self, other: &Box3) -> bool {
        (0..3).all(|i| self.lo[i] <= other.hi[i] && other.lo[i] <= self.hi[i])
    }

    pub fn expanded(&self, by: f64) -> Box3 {
        Box3::new(
            [self.lo[0] - by, self.lo[1] - by, self.lo[2] - by],
            [self.hi[0] + by, self.hi[1] + by, self.hi[2] + by],
        )
    }

    /// Euclidean distance from `p` to the box (zero inside).
    pub fn distance_to(&self, p: &Point) -> f64 {
        let a = p.to_array();
        let mut s = 0.0;
        for i in 0..3 {
            let d = (self.lo[i] - a[i]).max(0.0).max(a[i] - self.hi[i]);
            s += d * d;
        }
        s.sqrt()
    }

    pub fn union_hull(&self, other: &Box3) -> Box3 {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for i in 0..3 {
            lo[i] = lo[i].min(other.lo[i]);
            hi[i] = hi[i].max(other.hi[i]);
        }
        Box3::new(lo, hi)
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|i| (self.hi[i] - self.lo[i]).max(0.0)).product()
    }

    pub fn overlap_volume(&self, other: &Box3) -> f64 {
        (0..3)
            .map(|i| (self.hi[i].min(other.hi[i]) - self.lo[i].max(other.lo[i])).max(0.0))
            .product()
    }
}

/// The neighborhoods the dynamics is organised around.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionGeometry {
    /// Linearization domain.
    #[serde(rename = "L_box")]
    pub l_box: Box3,
    /// Fold target `Q′`.
    #[serde(rename = "Qprime_box")]
    pub qprime_box: Box3,
    /// Recurrence neighborhood `Q ⊂ Q′` of the tangency point.
    #[serde(rename = "Q_box")]
    pub q_box: Box3,
    /// Fold domain around `r`.
    #[serde(rename = "R_box")]
    pub r_box: Box3,
    /// Neighborhood of the basic set of the saddle.
    #[serde(rename = "U_box")]
    pub u_box: Box3,
    /// Width of the annulus around `R`.
    pub zeta: f64,
}

impl Default for RegionGeometry {
    fn default() -> Self {
        RegionGeometry {
            l_box: Box3::new([-2.2; 3], [2.2; 3]),
            qprime_box: Box3::centered(Point::TANGENCY, [0.17, 0.45, 0.45]),
            q_box: Box3::centered(Point::TANGENCY, [0.1, 0.2, 0.2]),
            r_box: Box3::new([0.6, -0.15, -0.15], [1.4, 0.25, 0.15]),
            u_box: Box3::new([-1.6, -0.6, -0.6], [1.6, 0.6, 0.6]),
            zeta: 0.05,
        }
    }
}

impl RegionGeometry {
    /// Whether `p` lies in the annulus `(ζ-neighborhood of R) \ R`.
    pub fn in_annulus(&self, p: &Point) -> bool {
        !self.r_box.contains(p) && self.r_box.distance_to(p) <= self.zeta
    }

    /// Box that bounds the discretized state space: `U ∪ Q′`.
    pub fn state_hull(&self) -> Box3 {
        self.u_box.union_hull(&self.qprime_box)
    }
}

/// Higher-order terms `h` and `H` of the fold.
///
/// Only monomials that keep the first derivatives and `∂t∂z h` zero at the
/// origin are representable, so every value of this struct is admissible:
///
/// ```text
/// h = h_z3 z³ + h_t2 t² + h_x2 (x1² + x2²) + h_tz2 t z²
/// H = H_z2 z² + H_tz t z + H_x2 (x1² + x2²)      (per component)
/// ```
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HigherOrder {
    pub h_z3: f64,
    pub h_t2: f64,
    pub h_x2: f64,
    pub h_tz2: f64,
    #[serde(rename = "H_z2")]
    pub hv_z2: [f64; 2],
    #[serde(rename = "H_tz")]
    pub hv_tz: [f64; 2],
    #[serde(rename = "H_x2")]
    pub hv_x2: [f64; 2],
}

impl HigherOrder {
    pub fn is_zero(&self) -> bool {
        *self == HigherOrder::default()
    }

    fn h(&self, t: f64, z: f64, x: [f64; 2]) -> f64 {
        self.h_z3 * z * z * z
            + self.h_t2 * t * t
            + self.h_x2 * (x[0] * x[0] + x[1] * x[1])
            + self.h_tz2 * t * z * z
    }

    fn hv(&self, t: f64, z: f64, x: [f64; 2]) -> [f64; 2] {
        let xx = x[0] * x[0] + x[1] * x[1];
        [0, 1].map(|i| self.hv_z2[i] * z * z + self.hv_tz[i] * t * z + self.hv_x2[i] * xx)
    }

    /// `(∂t h, ∂z h, ∂x1 h, ∂x2 h)`.
    fn dh(&self, t: f64, z: f64, x: [f64; 2]) -> [f64; 4] {
        [
            2.0 * self.h_t2 * t + self.h_tz2 * z * z,
            3.0 * self.h_z3 * z * z + 2.0 * self.h_tz2 * t * z,
            2.0 * self.h_x2 * x[0],
            2.0 * self.h_x2 * x[1],
        ]
    }

    /// Per component `(∂t H_i, ∂z H_i, ∂x1 H_i, ∂x2 H_i)`.
    fn dhv(&self, t: f64, z: f64, x: [f64; 2]) -> [[f64; 4]; 2] {
        [0, 1].map(|i| {
            [
                self.hv_tz[i] * z,
                2.0 * self.hv_z2[i] * z + self.hv_tz[i] * t,
                2.0 * self.hv_x2[i] * x[0],
                2.0 * self.hv_x2[i] * x[1],
            ]
        })
    }
}

/// Coefficients of the map family plus region geometry.
///
/// Config keys follow the conventional symbols (`sigma`, `lambda1`,
/// `lambda2`, `a`, `A`, `B`, `b`, `C`, `q0`, `higher_order`, `t_star`,
/// `regions`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Expanding eigenvalue.
    pub sigma: f64,
    /// Weak contracting eigenvalue.
    pub lambda1: f64,
    /// Strong contracting eigenvalue.
    pub lambda2: f64,
    /// Fold curvature.
    #[serde(rename = "a")]
    pub curvature: f64,
    /// Unfolding direction in the stable plane.
    #[serde(rename = "A")]
    pub unfolding: [f64; 2],
    /// Tangent of the unstable manifold at `q`.
    #[serde(rename = "B")]
    pub tangent: [f64; 2],
    /// Linear functional of the stable coordinates entering the new `z`.
    #[serde(rename = "b")]
    pub stable_gain: [f64; 2],
    /// Linear action of the fold on the stable coordinates.
    #[serde(rename = "C")]
    pub stable_map: [[f64; 2]; 2],
    /// Image base point of the fold.
    pub q0: [f64; 2],
    #[serde(default)]
    pub higher_order: HigherOrder,
    /// Upper end of the unfolding window.
    pub t_star: f64,
    #[serde(default)]
    pub regions: RegionGeometry,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            sigma: 2.0,
            lambda1: 0.45,
            lambda2: 0.2,
            curvature: -0.05,
            unfolding: [0.05, -0.08],
            tangent: [0.8, 0.6],
            stable_gain: [0.2, 0.1],
            stable_map: [[0.3, 0.1], [-0.1, 0.3]],
            q0: [1.0, 1.0],
            higher_order: HigherOrder::default(),
            t_star: 0.1,
            regions: RegionGeometry::default(),
        }
    }
}

/// Mutually exclusive region labels, listed in classification precedence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegionLabel {
    InR,
    InQ,
    InQprimeOnly,
    InAnnulus,
    InUOnly,
    InLOnly,
    Outside,
}

impl RegionLabel {
    pub const ALL: [RegionLabel; 7] = [
        RegionLabel::InR,
        RegionLabel::InQ,
        RegionLabel::InQprimeOnly,
        RegionLabel::InAnnulus,
        RegionLabel::InUOnly,
        RegionLabel::InLOnly,
        RegionLabel::Outside,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RegionLabel::InR => "InR",
            RegionLabel::InQ => "InQ",
            RegionLabel::InQprimeOnly => "InQprimeOnly",
            RegionLabel::InAnnulus => "InAnnulus",
            RegionLabel::InUOnly => "InUOnly",
            RegionLabel::InLOnly => "InLOnly",
            RegionLabel::Outside => "Outside",
        }
    }

    /// Labels inside `U ∪ Q` (`R` and the annulus lie in `U`).
    pub fn in_u_or_q(self) -> bool {
        matches!(
            self,
            RegionLabel::InR | RegionLabel::InQ | RegionLabel::InAnnulus | RegionLabel::InUOnly
        )
    }
}

impl std::fmt::Display for RegionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One named check of [`ModelParams::validate`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub condition: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    fn push(&mut self, name: &'static str, condition: &'static str, passed: bool, detail: String) {
        self.checks.push(Check { name, condition, passed, detail });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "ok  " } else { "FAIL" };
            writeln!(f, "{tag} {:<22} {}  ({})", c.name, c.condition, c.detail)?;
        }
        Ok(())
    }
}

/// Direction of a tangent vector, components along `z`, `x1`, `x2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub u0: f64,
    pub u1: f64,
    pub u2: f64,
}

impl TangentVector {
    pub const fn new(u0: f64, u1: f64, u2: f64) -> Self {
        TangentVector { u0, u1, u2 }
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        TangentVector::new(v[0], v[1], v[2])
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.u0, self.u1, self.u2)
    }

    pub fn is_zero(&self) -> bool {
        self.u0 == 0.0 && self.u1 == 0.0 && self.u2 == 0.0
    }

    /// `|u0| / max(|u1|, |u2|)`; `+∞` for a purely vertical vector.
    pub fn slope(&self) -> Result<f64, ModelError> {
        if self.is_zero() {
            return Err(ModelError::ZeroVector);
        }
        let den = self.u1.abs().max(self.u2.abs());
        Ok(if den == 0.0 { f64::INFINITY } else { self.u0.abs() / den })
    }

    pub fn norm_max(&self) -> f64 {
        self.u0.abs().max(self.u1.abs()).max(self.u2.abs())
    }

    /// Euclidean angle in radians, in `[0, π]`.
    pub fn angle_to(&self, other: &TangentVector) -> Result<f64, ModelError> {
        if self.is_zero() || other.is_zero() {
            return Err(ModelError::ZeroVector);
        }
        let (a, b) = (self.to_vector(), other.to_vector());
        let c = (a.dot(&b) / (a.norm() * b.norm())).clamp(-1.0, 1.0);
        Ok(c.acos())
    }

    /// Angle between the lines spanned by the two vectors, in `[0, π/2]`.
    pub fn line_angle_to(&self, other: &TangentVector) -> Result<f64, ModelError> {
        let a = self.angle_to(other)?;
        Ok(a.min(std::f64::consts::PI - a))
    }
}

impl ModelParams {
    /// `1 / max(|σλ₁|, |σλ₂|)`: per-step slope gain of vectors in the
    /// unstable cone inside `L`.
    pub fn cone_rate(&self) -> f64 {
        1.0 / (self.sigma * self.lambda1).abs().max((self.sigma * self.lambda2).abs())
    }

    pub fn tangent_vector(&self) -> TangentVector {
        TangentVector::new(0.0, self.tangent[0], self.tangent[1])
    }

    /// `‖B‖` in the max norm.
    pub fn tangent_norm(&self) -> f64 {
        self.tangent[0].abs().max(self.tangent[1].abs())
    }

    pub fn classify(&self, x: &Point) -> RegionLabel {
        let g = &self.regions;
        if !x.is_finite() {
            RegionLabel::Outside
        } else if g.r_box.contains(x) {
            RegionLabel::InR
        } else if g.q_box.contains(x) {
            RegionLabel::InQ
        } else if g.qprime_box.contains(x) {
            RegionLabel::InQprimeOnly
        } else if g.in_annulus(x) {
            RegionLabel::InAnnulus
        } else if g.u_box.contains(x) {
            RegionLabel::InUOnly
        } else if g.l_box.contains(x) {
            RegionLabel::InLOnly
        } else {
            RegionLabel::Outside
        }
    }

    /// The fold `R → Q′` at parameter `t`, without any region test.
    pub fn fold(&self, x: &Point, t: f64) -> Point {
        let z = x.z - 1.0;
        let xs = [x.x1, x.x2];
        let ho = &self.higher_order;
        let hv = ho.hv(t, z, xs);
        let c = &self.stable_map;
        Point::new(
            t + self.curvature * z * z
                + self.stable_gain[0] * xs[0]
                + self.stable_gain[1] * xs[1]
                + ho.h(t, z, xs),
            self.q0[0] + self.unfolding[0] * t + self.tangent[0] * z + c[0][0] * xs[0] + c[0][1] * xs[1] + hv[0],
            self.q0[1] + self.unfolding[1] * t + self.tangent[1] * z + c[1][0] * xs[0] + c[1][1] * xs[1] + hv[1],
        )
    }

    pub fn linear(&self, x: &Point) -> Point {
        Point::new(self.sigma * x.z, self.lambda1 * x.x1, self.lambda2 * x.x2)
    }

    /// One application of `f_t`. `None` means the orbit escaped the
    /// modeled region `L`.
    #[inline]
    pub fn step(&self, x: &Point, t: f64) -> Option<Point> {
        debug_assert!(t.is_finite());
        let g = &self.regions;
        if g.r_box.contains(x) {
            Some(self.fold(x, t))
        } else if g.l_box.contains(x) {
            Some(self.linear(x))
        } else {
            None
        }
    }

    /// Derivative of [`step`](Self::step) with respect to the point.
    pub fn jacobian(&self, x: &Point, t: f64) -> Option<Matrix3<f64>> {
        let g = &self.regions;
        if g.r_box.contains(x) {
            let z = x.z - 1.0;
            let xs = [x.x1, x.x2];
            let dh = self.higher_order.dh(t, z, xs);
            let dhv = self.higher_order.dhv(t, z, xs);
            let b = &self.stable_gain;
            let c = &self.stable_map;
            let bb = &self.tangent;
            Some(Matrix3::new(
                2.0 * self.curvature * z + dh[1],
                b[0] + dh[2],
                b[1] + dh[3],
                bb[0] + dhv[0][1],
                c[0][0] + dhv[0][2],
                c[0][1] + dhv[0][3],
                bb[1] + dhv[1][1],
                c[1][0] + dhv[1][2],
                c[1][1] + dhv[1][3],
            ))
        } else if g.l_box.contains(x) {
            Some(Matrix3::from_diagonal(&Vector3::new(self.sigma, self.lambda1, self.lambda2)))
        } else {
            None
        }
    }

    /// Derivative of [`step`](Self::step) with respect to `t`: the unfolding
    /// direction `(1, A)` plus higher-order corrections inside `R`, zero in
    /// the linear region.
    pub fn param_derivative(&self, x: &Point, t: f64) -> Option<Vector3<f64>> {
        let g = &self.regions;
        if g.r_box.contains(x) {
            let z = x.z - 1.0;
            let xs = [x.x1, x.x2];
            let dh = self.higher_order.dh(t, z, xs);
            let dhv = self.higher_order.dhv(t, z, xs);
            Some(Vector3::new(
                1.0 + dh[0],
                self.unfolding[0] + dhv[0][0],
                self.unfolding[1] + dhv[1][0],
            ))
        } else if g.l_box.contains(x) {
            Some(Vector3::zeros())
        } else {
            None
        }
    }

    /// Range of `z` over the fold pre-images of `Q′` with stable coordinates
    /// in `R`'s cross-section and `t ∈ [0, t⋆]`, found by scanning. Returns
    /// `None` when no pre-image is found on the scan.
    pub fn preimage_span(&self, resolution: usize) -> Option<(f64, f64)> {
        let g = &self.regions;
        let n = resolution.max(2);
        let lin = |lo: f64, hi: f64, k: usize, n: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let mut span: Option<(f64, f64)> = None;
        let (zlo, zhi) = (g.l_box.lo[0], g.l_box.hi[0]);
        let nx = 5;
        for iz in 0..4 * n {
            let z = lin(zlo, zhi, iz, 4 * n);
            for ix in 0..nx {
                for jx in 0..nx {
                    for it in 0..nx {
                        let p = Point::new(
                            z,
                            lin(g.r_box.lo[1], g.r_box.hi[1], ix, nx),
                            lin(g.r_box.lo[2], g.r_box.hi[2], jx, nx),
                        );
                        let t = lin(0.0, self.t_star, it, nx);
                        if g.qprime_box.contains(&self.fold(&p, t)) {
                            span = Some(match span {
                                None => (z, z),
                                Some((a, b)) => (a.min(z), b.max(z)),
                            });
                        }
                    }
                }
            }
        }
        span
    }

    /// Largest image excursion of `R × [0, t⋆]` under the fold, sampled on
    /// a lattice; used to check `fold(R) ⊂ Q′`.
    fn fold_image_hull(&self, per_axis: usize) -> Box3 {
        let r = &self.regions.r_box;
        let n = per_axis.max(2);
        let lin = |lo: f64, hi: f64, k: usize| lo + (hi - lo) * k as f64 / (n - 1) as f64;
        let mut hull: Option<Box3> = None;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for it in 0..n {
                        let p = Point::new(lin(r.lo[0], r.hi[0], i), lin(r.lo[1], r.hi[1], j), lin(r.lo[2], r.hi[2], k));
                        let img = self.fold(&p, lin(0.0, self.t_star, it)).to_array();
                        let b = Box3::new(img, img);
                        hull = Some(match hull {
                            None => b,
                            Some(h) => h.union_hull(&b),
                        });
                    }
                }
            }
        }
        hull.expect("lattice is non-empty")
    }

    /// Checks every structural condition on the coefficients and regions.
    pub fn validate(&self) -> ValidationReport {
        let mut r = ValidationReport::default();
        let finite = [
            self.sigma,
            self.lambda1,
            self.lambda2,
            self.curvature,
            self.t_star,
            self.regions.zeta,
        ]
        .iter()
        .chain(self.unfolding.iter())
        .chain(self.tangent.iter())
        .chain(self.stable_gain.iter())
        .chain(self.stable_map.iter().flatten())
        .chain(self.q0.iter())
        .all(|v| v.is_finite());
        r.push("finite", "all coefficients finite", finite, String::new());

        r.push(
            "expanding",
            "single expanding eigenvalue: sigma > 1",
            self.sigma > 1.0,
            format!("sigma = {}", self.sigma),
        );
        r.push(
            "contracting",
            "0 < |lambda2| and |lambda1| < 1",
            self.lambda2 != 0.0 && self.lambda1.abs() < 1.0,
            format!("lambda1 = {}, lambda2 = {}", self.lambda1, self.lambda2),
        );
        let s1 = (self.sigma * self.lambda1).abs();
        let s2 = (self.sigma * self.lambda2).abs();
        r.push(
            "sectional_dissipative",
            "sectional dissipativity: |sigma*lambda_i| < 1",
            s1 < 1.0 && s2 < 1.0,
            format!("|sigma*lambda1| = {s1}, |sigma*lambda2| = {s2}"),
        );
        r.push(
            "least_contracting",
            "least contracting eigenvalue: |lambda1| > |lambda2|",
            self.lambda1.abs() > self.lambda2.abs(),
            format!("|lambda1| = {}, |lambda2| = {}", self.lambda1.abs(), self.lambda2.abs()),
        );
        r.push(
            "quadratic_tangency",
            "quadratic tangency: a != 0",
            self.curvature != 0.0,
            format!("a = {}", self.curvature),
        );
        r.push(
            "tangent_transverse",
            "B transverse to both stable directions: B1 != 0 and B2 != 0",
            self.tangent[0] != 0.0 && self.tangent[1] != 0.0,
            format!("B = {:?}", self.tangent),
        );
        // det((1, A1, A2), (0, B1, B2), (0, 1, 0)) = -B2.
        let det = -self.tangent[1];
        r.push(
            "generic_unfolding",
            "generic unfolding: det(A, B, D) != 0",
            det != 0.0,
            format!("det(A, B, D) = {det}"),
        );
        r.push(
            "stable_gain",
            "b != 0",
            self.stable_gain != [0.0, 0.0],
            format!("b = {:?}", self.stable_gain),
        );
        r.push(
            "higher_order",
            "h, H have vanishing first derivatives and d2h/dtdz at the origin",
            higher_order_vanishes(&self.higher_order),
            String::new(),
        );
        r.push("t_star", "t_star > 0", self.t_star > 0.0, format!("t_star = {}", self.t_star));
        self.validate_regions(&mut r);
        r
    }

    fn validate_regions(&self, r: &mut ValidationReport) {
        let g = &self.regions;
        let boxes = [g.l_box, g.qprime_box, g.q_box, g.r_box, g.u_box];
        r.push(
            "boxes_well_formed",
            "every region box has lo < hi",
            boxes.iter().all(Box3::is_well_formed),
            String::new(),
        );
        r.push("zeta", "annulus width zeta > 0", g.zeta > 0.0, format!("zeta = {}", g.zeta));
        r.push(
            "l_covers_cube",
            "L contains [-2, 2]^3",
            g.l_box.contains_box(&Box3::new([-2.0; 3], [2.0; 3])),
            String::new(),
        );
        r.push("q_in_qprime", "Q inside Q'", g.qprime_box.contains_box(&g.q_box), String::new());
        r.push("r_in_u", "R inside U", g.u_box.contains_box(&g.r_box), String::new());
        r.push("u_in_l", "U inside L", g.l_box.contains_box(&g.u_box), String::new());
        r.push("qprime_in_l", "Q' inside L", g.l_box.contains_box(&g.qprime_box), String::new());
        r.push(
            "u_q_disjoint",
            "U and Q are disjoint",
            !g.u_box.intersects(&g.q_box),
            String::new(),
        );
        r.push(
            "annulus_in_u",
            "annulus around R lies inside U",
            g.u_box.contains_box(&g.r_box.expanded(g.zeta)),
            String::new(),
        );
        r.push("p_in_l", "saddle p = (0,0,0) in L", g.l_box.contains(&Point::SADDLE), String::new());
        r.push("q_in_q", "tangency q = (0,1,1) in Q", g.q_box.contains(&Point::TANGENCY), String::new());
        r.push("r_in_r", "r = (1,0,0) in R", g.r_box.contains(&Point::RETURN), String::new());
        let hull = self.fold_image_hull(9);
        r.push(
            "fold_r_into_qprime",
            "fold maps R x [0, t_star] into Q'",
            g.qprime_box.contains_box(&hull),
            format!("image hull lo = {:?}, hi = {:?}", hull.lo, hull.hi),
        );
    }
}

fn higher_order_vanishes(ho: &HigherOrder) -> bool {
    let x0 = [0.0, 0.0];
    let dh = ho.dh(0.0, 0.0, x0);
    let dhv = ho.dhv(0.0, 0.0, x0);
    // ∂t∂z h = 2 h_tz2 z, zero at the origin.
    let mixed = 2.0 * ho.h_tz2 * 0.0;
    ho.h(0.0, 0.0, x0) == 0.0
        && ho.hv(0.0, 0.0, x0) == [0.0, 0.0]
        && dh.iter().all(|d| *d == 0.0)
        && dhv.iter().flatten().all(|d| *d == 0.0)
        && mixed == 0.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_fold() -> ModelParams {
        ModelParams {
            curvature: -1.0,
            stable_gain: [0.0, 0.0],
            tangent: [1.0, 1.0],
            stable_map: [[0.0, 0.0], [0.0, 0.0]],
            unfolding: [0.0, 0.0],
            q0: [1.0, 1.0],
            ..ModelParams::default()
        }
    }

    #[test]
    fn default_params_validate() {
        let r = ModelParams::default().validate();
        assert!(r.is_ok(), "{r}");
    }

    #[test]
    fn sectional_dissipativity_examples() {
        let ok = ModelParams { sigma: 2.0, lambda1: 0.4, lambda2: 0.1, ..Default::default() };
        assert!(ok.validate().check("sectional_dissipative").unwrap().passed);
        let bad = ModelParams { sigma: 2.0, lambda1: 0.6, lambda2: 0.1, ..Default::default() };
        let c = bad.validate();
        assert!(!c.check("sectional_dissipative").unwrap().passed);
        assert!(c.check("sectional_dissipative").unwrap().detail.contains("1.2"));
    }

    #[test]
    fn zero_curvature_fails() {
        let p = ModelParams { curvature: 0.0, ..Default::default() };
        let r = p.validate();
        assert!(!r.is_ok());
        assert!(!r.check("quadratic_tangency").unwrap().passed);
    }

    #[test]
    fn equal_contractions_fail_least_contracting() {
        let p = ModelParams { lambda1: 0.2, lambda2: 0.2, ..Default::default() };
        let names: Vec<_> = p.validate().failures().map(|c| c.name).collect();
        assert_eq!(names, vec!["least_contracting"]);
    }

    #[test]
    fn zero_tangent_component_fails_transversality_and_unfolding() {
        let p = ModelParams { tangent: [0.8, 0.0], ..Default::default() };
        let r = p.validate();
        assert!(!r.check("tangent_transverse").unwrap().passed);
        assert!(!r.check("generic_unfolding").unwrap().passed);
    }

    #[test]
    fn overlapping_u_and_q_fail() {
        let mut p = ModelParams::default();
        p.regions.u_box.hi[1] = 0.9;
        p.regions.u_box.hi[2] = 0.9;
        assert!(!p.validate().check("u_q_disjoint").unwrap().passed);
    }

    #[test]
    fn classify_named_points() {
        let p = ModelParams::default();
        assert_eq!(p.classify(&Point::RETURN), RegionLabel::InR);
        assert_eq!(p.classify(&Point::TANGENCY), RegionLabel::InQ);
        assert_eq!(p.classify(&Point::new(50.0, -3.0, 7.0)), RegionLabel::Outside);
        assert_eq!(p.classify(&Point::new(0.0, 1.0, 1.3)), RegionLabel::InQprimeOnly);
        assert_eq!(p.classify(&Point::new(1.43, 0.0, 0.0)), RegionLabel::InAnnulus);
        assert_eq!(p.classify(&Point::SADDLE), RegionLabel::InUOnly);
        assert_eq!(p.classify(&Point::new(2.0, 2.0, 2.0)), RegionLabel::InLOnly);
        assert_eq!(p.classify(&Point::new(f64::NAN, 0.0, 0.0)), RegionLabel::Outside);
    }

    #[test]
    fn fold_at_tangency_hits_q() {
        let p = ModelParams::default();
        assert_eq!(p.step(&Point::RETURN, 0.0), Some(Point::TANGENCY));
    }

    #[test]
    fn linear_step_arithmetic() {
        let p = ModelParams { sigma: 2.0, lambda1: 0.4, lambda2: 0.1, ..Default::default() };
        assert_eq!(p.step(&Point::new(0.5, 1.0, 1.0), 0.03), Some(Point::new(1.0, 0.4, 0.1)));
    }

    #[test]
    fn fold_off_tangency_arithmetic() {
        let p = flat_fold();
        let y = p.step(&Point::new(1.1, 0.0, 0.0), 0.02).unwrap();
        assert!((y.z - 0.01).abs() < 1e-15);
        assert!((y.x1 - 1.1).abs() < 1e-15);
        assert!((y.x2 - 1.1).abs() < 1e-15);
    }

    #[test]
    fn escape_outside_l() {
        let p = ModelParams::default();
        assert_eq!(p.step(&Point::new(3.0, 0.0, 0.0), 0.05), None);
        assert_eq!(p.jacobian(&Point::new(3.0, 0.0, 0.0), 0.05), None);
    }

    #[test]
    fn jacobian_examples() {
        let p = ModelParams::default();
        let j = p.jacobian(&Point::new(0.3, 0.5, -0.2), 0.05).unwrap();
        assert_eq!(j, Matrix3::from_diagonal(&Vector3::new(p.sigma, p.lambda1, p.lambda2)));
        let j = p.jacobian(&Point::RETURN, 0.05).unwrap();
        let (b, c, bb) = (p.stable_gain, p.stable_map, p.tangent);
        let want = Matrix3::new(0.0, b[0], b[1], bb[0], c[0][0], c[0][1], bb[1], c[1][0], c[1][1]);
        assert_eq!(j, want);
    }

    #[test]
    fn tangent_vector_measures() {
        let v = TangentVector::new(1.0, 1.0, 1.0);
        assert_eq!(v.slope().unwrap(), 1.0);
        assert_eq!(v.norm_max(), 1.0);
        assert_eq!(TangentVector::new(3.0, 0.0, 0.0).slope().unwrap(), f64::INFINITY);
        let a = TangentVector::new(1.0, 0.0, 0.0).angle_to(&TangentVector::new(0.0, 1.0, 0.0)).unwrap();
        assert!((a - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let zero = TangentVector::new(0.0, 0.0, 0.0);
        assert_eq!(zero.slope(), Err(ModelError::ZeroVector));
        assert!(zero.angle_to(&v).is_err());
    }

    #[test]
    fn higher_order_terms_are_admissible() {
        let mut p = ModelParams::default();
        p.higher_order = HigherOrder {
            h_z3: 0.3,
            h_t2: -0.2,
            h_x2: 0.1,
            h_tz2: 0.4,
            hv_z2: [0.1, -0.2],
            hv_tz: [0.05, 0.05],
            hv_x2: [0.1, 0.1],
        };
        assert!(p.validate().check("higher_order").unwrap().passed);
        // The tangency identity only holds with h = H = 0 at t = 0 here
        // because every admissible monomial vanishes at the origin.
        assert_eq!(p.step(&Point::RETURN, 0.0), Some(Point::TANGENCY));
    }

    #[test]
    fn preimage_span_contains_r() {
        let p = ModelParams::default();
        let (lo, hi) = p.preimage_span(200).unwrap();
        assert!(lo <= p.regions.r_box.lo[0] && hi >= p.regions.r_box.hi[0], "{lo} {hi}");
    }
}
