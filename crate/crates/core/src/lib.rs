//! Radio map estimation toolkit.
//!
//! Synthesises radio propagation environments and estimates signal-strength
//! maps (power, PSD) and propagation maps (channel gain, shadowing, spatial
//! loss fields) from scattered sensor measurements.
//!
//! Every fitting routine returns an immutable estimate that implements
//! [`MapEstimator`], so estimates can be evaluated anywhere in the region and
//! rasterised onto a [`Grid`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod consensus;
pub mod dictionary;
mod error;
pub mod estimator;
pub mod figures;
pub mod formats;
pub mod geometry;
pub mod kernels;
pub mod kriging;
pub mod linalg;
pub mod measurement;
pub mod parametric;
pub mod propmap;
pub mod psd;
pub mod ratelimited;
pub mod scenario;
pub mod simulator;
pub mod surveying;
pub mod svg;

pub use error::{Error, Result};
pub use estimator::MapEstimator;
pub use geometry::{db_to_linear, linear_to_db, Grid, GridMap, Location, Region, Unit};
pub use measurement::{Measurement, MeasurementSet};
