//! Propagation maps: kriged Kalman filtering of time-varying shadowing and
//! tomographic spatial-loss-field inversion.

pub mod kkf;
pub mod tomography;

pub use kkf::{kkf_predict, kkf_update, Dynamics, KkfModel, KkfState, KrigedKalmanFilter, SpatialBasis};
pub use tomography::{
    assemble_tomography, crossing_lengths, estimate_slf, line_integral, link_weights, EllipseWeightRule, Slf, SlfEstimate, SlfRegularizer, WeightModel,
};
