//! Continuous-time system identification from noisy samples.
//!
//! Derivatives are estimated with local-polynomial FIR filters and plugged
//! into a linear-in-parameters regression. The noise-induced bias is removed
//! either by an explicit second-order correction or by instrumenting with a
//! staggered filter pair.

pub mod bench;
pub mod dynmodel;
pub mod error;
pub mod lpdiff;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod regress;
pub mod simkit;

pub use dynmodel::{Coord, FeatureModel, MonomialTerm, ParamMatrix};
pub use error::{Error, Result};
pub use lpdiff::{
    design_filter, design_staggered_pair, FilterBank, FilterSpec, JetSeries, Support,
};
pub use regress::{EstimatorOutput, Identifier, Method};
pub use simkit::{NoiseDist, NoiseModel, TrajectoryConfig};
