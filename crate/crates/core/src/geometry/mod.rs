//! Numerical checks of the local geometry: unstable cones through a
//! return, perturbation curves and return disks, and the inner ball
//! reached after three returns.

pub mod ball;
pub mod cones;
pub mod disks;

pub use ball::*;
pub use cones::*;
pub use disks::*;
