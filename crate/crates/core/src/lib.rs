//! Neural growth harness.
//!
//! A seed network made of fixed-width stages grows one block at a time into
//! a target network while it trains. Three when-to-grow policies are
//! provided: FRAGrow, whose growth interval `I_max / (1 + e^(alpha - ORL))`
//! shrinks when the gap between train and validation accuracy (ORL) is small
//! and stretches when it is large; fixed-period growth; and growth on
//! validation plateaus.
//!
//! Module map:
//! - [`netcore`]: staged MLP, manual backprop, SGD, learning-rate schedule
//! - [`morph`]: architecture specs, where-to-grow, block initialization, splice
//! - [`timing`]: when-to-grow policies and the Ē diagnostic
//! - [`data`]: synthetic generators, IDX/CSV loaders, splitting
//! - [`harness`]: the training loop, metrics files, comparisons
//! - [`config`]: experiment config files and presets
//! - [`plot`]: SVG learning curves

pub mod config;
pub mod data;
pub mod error;
pub mod harness;
pub mod morph;
pub mod netcore;
pub mod plot;
pub mod rng;
pub mod timing;

pub use error::{GrowError, Result};
