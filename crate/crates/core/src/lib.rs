//! Classification ratemaking for non-life insurance.
//!
//! Fits two-part GLMs, expectile regression and three quantile-regression
//! variants, prices tariff classes under five premium principles, calibrates
//! loading parameters against a portfolio total, and compares models through
//! a Tweedie simulation study and ordered Lorenz curves.
//!
//! Runnable walkthroughs live in `examples/`; the `ratemaking` binary wraps
//! the same pipeline behind `fit`, `rate`, `simulate`, `gini` and `coherence`.

pub mod allocation;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod expectile;
pub mod glm;
pub mod linalg;
pub mod principles;
pub mod quantile;
pub mod simulator;
pub mod stats;

pub use error::{RatemakingError, Result};
