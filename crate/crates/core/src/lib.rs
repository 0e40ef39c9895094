//! Bot account classification for Twitter-shaped data.
//!
//! The pipeline: crawl (or synthesize) account records, extract nine
//! per-account features, normalize them per column, train a sigmoid MLP and
//! score it with accuracy, precision, recall and F1. Every stage is
//! deterministic given its seed.

pub mod cli;
pub mod config;
pub mod crawler;
pub mod features;
pub mod ingest;
pub mod metrics;
pub mod mlp;
pub mod normalize;
pub mod synth;

pub use features::{extract_all, extract_features, FeatureVector, COLUMN_NAMES, NUM_FEATURES};
pub use ingest::{AccountRecord, Class, Dataset, TweetRecord};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use mlp::{MlpConfig, MlpModel, TrainingTrace};
pub use normalize::{NormalizationStats, Sample};
