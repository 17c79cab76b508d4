//! Counterfactual introspection for differentiable image classifiers.
//!
//! Given a query image and a frozen classifier, this crate searches the
//! input space of a frozen generative model for the smallest edit that
//! changes the classifier's decision (a criticism) or strengthens it
//! (a prototype). Optimization runs over either an unnamed latent code or
//! a vector of named, actionable attributes, with per-attribute freezing.
//!
//! The pieces:
//! - [`tensor`] / [`autodiff`]: dense `f64` tensors and a reverse-mode tape.
//! - [`models`]: desk-scale MLP classifier, latent decoder, and attribute
//!   editor, trained here and persisted as checkpoints.
//! - [`data`]: a procedural glyph dataset with an injected class–attribute
//!   bias, plus MNIST IDX ingestion.
//! - [`engine`]: the penalty objective, gradient-descent inner loop, and
//!   the minimal-change bisection over the penalty weight.
//! - [`analysis`]: attribute-change rankings, dataset bias reports, and
//!   trajectory montages.
//! - [`gradcheck`]: finite-difference validation of every gradient path.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod engine;
pub mod fixtures;
pub mod gradcheck;
pub mod models;
pub mod pgm;
pub mod tensor;

pub use autodiff::{grad_check, Gradients, Tape, VarId};
pub use tensor::{Tensor, TensorError};
