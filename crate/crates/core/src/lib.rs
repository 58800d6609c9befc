//! Coupled analysis dictionary learning for inverting random linear
//! compression of 1-D signals.
//!
//! A pair of square analysis transforms, one on the compressed measurements
//! and one on the full-length signals, is learned jointly with a linear map
//! between their coefficients. Once trained, reconstruction collapses to a
//! single precomputed `n × m` matrix applied to each measurement vector.
//!
//! Module map:
//!
//! * [`transform`] - single-domain transform learning: objective, coefficient
//!   update and the closed-form transform update.
//! * [`coupled`] - alternating minimization of the coupled objective, the
//!   trained [`CoupledModel`] and its binary file format.
//! * [`sensing`] - seeded Bernoulli sensing matrices.
//! * [`baseline`] - l1/DCT compressed-sensing reconstruction by shrinkage.
//! * [`data`] - windowing, synthetic signals, CSV ingestion, error metrics.
//! * [`manifest`] - key/value experiment manifests.
//! * [`cli`] - the `ctl` command-line front end.

pub mod baseline;
pub mod cli;
pub mod coupled;
pub mod data;
mod error;
pub mod manifest;
pub mod sensing;
pub mod transform;

pub use coupled::{CoupledModel, TrainConfig, TrainTrace};
pub use error::{Error, Result};
pub use transform::Transform;

pub(crate) fn ensure_finite(m: &nalgebra::DMatrix<f64>, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub(crate) fn shape(m: &nalgebra::DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}
