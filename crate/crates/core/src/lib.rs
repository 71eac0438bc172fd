//! Rapid updating of pluri-Gaussian domain models and cross-correlated grade
//! models from sequentially arriving observations.
//!
//! Categorical observations are turned into Gaussian values with a Gibbs
//! sampler, assimilated into both GRFs of every realization with a localized
//! ensemble smoother (ES-MDA), and re-truncated under thresholds tuned
//! against all observations so far. Grades are then updated domain by domain
//! in the factor space of an RBIG transform.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod esmda;
pub mod format;
pub mod gibbs;
pub mod grid;
pub mod gsim;
pub mod kriging;
pub mod metrics;
pub mod normal;
pub mod observations;
pub mod pipeline;
pub mod raster;
pub mod rbig;
pub mod rng;
pub mod synthetic;
pub mod threshold;
pub mod truncation;
pub mod variogram;

pub use config::{Config, PipelineConfig};
pub use ensemble::Ensemble;
pub use error::{Error, Result};
pub use esmda::{gaspari_cohn, AssimilationProblem, MdaSchedule};
pub use format::{read_ensemble, write_ensemble};
pub use grid::{extract_neighbourhood, BlockSubset, GridSpec};
pub use observations::{load_observations, Observation, ObservationSet};
pub use pipeline::{run_sequence, PeriodResult};
pub use rbig::RbigTransform;
pub use threshold::{classification_score, optimise_thresholds, ScoreWeights, ThresholdSearchSpace};
pub use truncation::{Topology, TruncationRule};
pub use variogram::VariogramModel;
