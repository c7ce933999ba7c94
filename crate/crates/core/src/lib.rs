//! Forecasting workbench for second-order self-similar demand traces.
//!
//! The crate covers the full pipeline:
//!
//! - [`traffic`]: synthetic trace generation from superposed heavy-tailed
//!   ON/OFF sources,
//! - [`stats`]: self-similarity diagnostics (autocorrelation, variance-time
//!   and rescaled-range Hurst estimation, exact fractional Gaussian noise),
//! - [`farima`]: ARIMA/FARIMA fitting and multi-step forecasting,
//! - [`transformer`]: an encoder-decoder forecaster with ProbSparse
//!   self-attention and one-shot multi-horizon decoding, trained with
//!   hand-written reverse-mode gradients,
//! - [`bench`]: the scenario x granularity x sequence-length x horizon
//!   benchmark grid with MSE tables and winner counts,
//! - [`trace`]: the trace CSV format, chronological splits and
//!   standardization shared by every forecaster.

pub mod bench;
pub mod config;
pub mod error;
pub mod farima;
pub mod stats;
pub mod trace;
pub mod traffic;
pub mod transformer;

pub use error::{Error, Result};
pub use trace::{SplitSpec, Standardizer, Trace};
