//! Desk-scale stochastic digital twin for copy detection patterns: a
//! pattern-conditioned print/estimate channel, a conditional DDPM refiner,
//! two-directional training losses, and the metrics and analyses used to
//! compare simulated prints against references.

pub mod analysis;
pub mod channel;
pub mod ddpm;
pub mod error;
pub mod imaging;
pub mod metrics;
pub mod pgm;
pub mod rng;
pub mod turbo;

pub use error::{Error, Result};
pub use imaging::{BinaryTemplate, GrayImage, RealizationStack};
