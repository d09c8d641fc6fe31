//! Slow-feature visual tracking toolkit.
//!
//! Learns transformation-invariant local image features offline from
//! temporally ordered patch sequences — a stacked, subspace-pooled linear
//! autoencoder regularized for temporal slowness — and uses them inside an
//! adaptive particle-filter tracker with a class-weighted logistic
//! observational model.

pub mod dataset;
pub mod error;
pub mod lbfgs;
pub mod raster;
pub mod slowae;

pub use error::{Error, Result};
