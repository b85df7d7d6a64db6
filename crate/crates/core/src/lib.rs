//! Training and auditing of group-invariant dense networks.
//!
//! The crate covers exact finite-group actions on image grids, dataset
//! preparation, a dense network with an optionally group-tied first layer,
//! invariance metrics (distribution, logit and saliency), invariance
//! regularized training, and the spectral analysis of invariance-error
//! minimization.

pub mod data;
pub mod error;
pub mod groups;
pub mod metrics;
pub mod network;
pub mod regularizers;
pub mod spectral;

pub use error::{Error, Result};
