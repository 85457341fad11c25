//! Random perturbations of a three-dimensional diffeomorphism near a
//! sectionally dissipative homoclinic tangency.
//!
//! The crate builds the map family in linearized coordinates
//! ([`model`]), perturbs it with i.i.d. parameter noise ([`noise`]), and
//! provides tools to study the resulting random system:
//!
//! * [`orbits`]: random orbits, return times to `Q`, Birkhoff averages and
//!   recurrence screening.
//! * [`measures`]: Cesàro averages, an Ulam discretization of the annealed
//!   transfer operator, its ergodic components and basin weights.
//! * [`geometry`]: numerical verifiers for cone propagation, return disks
//!   and the inner-ball property.
//!
//! ```
//! use tangency::model::{ModelParams, Point};
//!
//! let model = ModelParams::default();
//! assert!(model.validate().is_ok());
//! assert_eq!(model.step(&Point::RETURN, 0.0), Some(Point::TANGENCY));
//! ```

pub mod config;
pub mod error;
pub mod model;
pub mod noise;
pub mod observables;
pub mod geometry;
pub mod measures;
pub mod orbits;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/orbits.md")]
    mod orbits {}
    #[doc = include_str!("../../../book/src/measures.md")]
    mod measures {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

pub use config::ExperimentConfig;
pub use error::{ConfigError, GeometryError, MeasureError, ModelError, NoiseError};
pub use model::{Box3, ModelParams, Point, RegionGeometry, RegionLabel, TangentVector};
pub use noise::{NoiseKernel, NoiseSequence};
pub use observables::Observable;
