//! Doubly robust instrumental-variable estimation of the effect of a
//! continuous treatment with a discrete instrument.
//!
//! The pipeline has three steps: a linear quantile-regression first stage
//! over a grid of quantile levels ([`quantreg`]), a partially linear sieve
//! regression of the outcome ([`sieve`]), and trimmed weighted aggregation
//! into the target estimands ([`estimands`]). [`inference`] supplies
//! influence-function and bootstrap standard errors, and [`simulate`]
//! provides synthetic designs with numerically integrated ground truth.

pub mod dataset;
pub mod error;
pub mod estimands;
pub mod inference;
pub mod linalg;
pub mod par;
pub mod pipeline;
pub mod quantreg;
pub mod sieve;
pub mod simulate;
pub mod stats;

pub use dataset::{load_dataset, Dataset, Schema};
pub use error::{Error, Result};
pub use pipeline::{estimate, point_estimate, EstimandKind, InferenceOptions};
