//! Agent-based model of international lockdown-policy diffusion by peer
//! mimicry, with a particle filter that assimilates daily lockdown
//! observations into live ensemble forecasts.
//!
//! * [`country_data`] loads and validates country attributes and observations.
//! * [`model`] is the forward model.
//! * [`filter`] runs sequential importance resampling over model particles.
//! * [`metrics`] holds the macro/micro measures and ensemble statistics.
//! * [`calibration`] grid-searches the global model parameters.
//! * [`experiments`] orchestrates the end-to-end runs and writes results.

pub mod calibration;
pub mod country_data;
pub mod experiments;
pub mod filter;
pub mod metrics;
pub mod model;
pub mod seed;

pub use country_data::{CountryRecord, NormalizationContext, ObservationSeries};
pub use filter::{FilterConfig, FilterRunResult, Particle};
pub use metrics::EnsembleSummary;
pub use model::{Model, ModelParams, WorldState};
