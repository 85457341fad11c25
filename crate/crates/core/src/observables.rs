//! Named scalar functions of a state, used for Birkhoff averages,
//! stationarity residuals and basin matching.

use std::fmt;
use std::sync::Arc;

use crate::model::{Box3, ModelParams, Point, RegionLabel};

type ObsFn = dyn Fn(&Point) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct Observable {
    pub name: String,
    f: Arc<ObsFn>,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).finish()
    }
}

impl Observable {
    pub fn new(name: impl Into<String>, f: impl Fn(&Point) -> f64 + Send + Sync + 'static) -> Self {
        Observable { name: name.into(), f: Arc::new(f) }
    }

    #[inline]
    pub fn eval(&self, p: &Point) -> f64 {
        (self.f)(p)
    }

    pub fn constant(c: f64) -> Self {
        Observable::new(format!("const({c})"), move |_| c)
    }

    /// Coordinate `0 = z`, `1 = x1`, `2 = x2`.
    pub fn coordinate(i: usize) -> Self {
        assert!(i < 3, "coordinate index {i} out of range");
        let name = ["z", "x1", "x2"][i];
        Observable::new(name, move |p| p.to_array()[i])
    }

    pub fn coordinate_squared(i: usize) -> Self {
        assert!(i < 3, "coordinate index {i} out of range");
        let name = ["z^2", "x1^2", "x2^2"][i];
        Observable::new(name, move |p| p.to_array()[i].powi(2))
    }

    pub fn indicator(name: impl Into<String>, b: Box3) -> Self {
        Observable::new(name, move |p| if b.contains(p) { 1.0 } else { 0.0 })
    }

    pub fn region_indicator(model: &ModelParams, label: RegionLabel) -> Self {
        let m = model.clone();
        Observable::new(format!("1[{label}]"), move |p| if m.classify(p) == label { 1.0 } else { 0.0 })
    }

    pub fn distance_to_tangency() -> Self {
        Observable::new("|x - q|", |p| p.distance(&Point::TANGENCY))
    }
}
