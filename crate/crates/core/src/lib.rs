//! Simulation and design-space exploration of approximate multipliers in
//! quantized CNN inference.
//!
//! * [`axmult`]: the ROUP multiplier family, product tables, error and energy.
//! * [`engine`]: uint8 inference with per-weight table routing and KLMS skipping.
//! * [`plan`]: placement plans (LLAM, FLAM, KLAM, KLMS) and weight tuning.
//! * [`dse`]: evaluation, sensitivity sweeps, enumeration, NSGA-II and Pareto fronts.
//! * [`model_io`]: model manifests, datasets and synthetic fixtures.

pub mod axmult;
pub mod dse;
pub mod engine;
pub mod error;
pub mod model_io;
pub mod plan;

pub use error::{Error, Result};
