//! Hidden Markov model forecasting of next-day closing prices.
//!
//! Daily bars are reduced to fractional (change, high, low) triples,
//! discretized on a linear grid and flattened into a single symbol alphabet.
//! A discrete HMM, with emissions seeded from a Gaussian mixture fit, is
//! trained by Baum-Welch on rolling windows. Each day's close is predicted
//! by scanning every candidate symbol for the most likely continuation of
//! the recent history.

pub mod discretizer;
pub mod error;
pub mod forecaster;
pub mod gmm;
pub mod hmm;
pub mod market;
pub mod metrics;
pub mod model_file;
pub mod synthetic;

pub use discretizer::{BinCounts, DiscretizationGrid, EmissionSeeding};
pub use error::{Error, Result};
pub use forecaster::{ForecastConfig, PredictionRecord, TrainedModel};
pub use hmm::HmmParameters;
pub use market::{ObservationTriple, OhlcBar};
