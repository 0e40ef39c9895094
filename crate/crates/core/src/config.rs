//! File-based run configuration (TOML). Every field is optional and falls
//! back to its default; unknown keys are rejected. Command-line flags
//! override whatever the file sets.
//!
//! ```toml
//! seed = 42
//! tff_threshold = 20.0
//! tweet_cap = 200
//!
//! [train]
//! hidden_layout = [25]
//! learning_rate = 0.02
//! passes = 200
//! batch_size = 1           # or "full"
//! threshold = 0.5
//!
//! [rate_limit]
//! max_requests = 150
//! window = 3600        # seconds
//!
//! [crawl]
//! checkpoint_every = 10
//!
//! [normalize]
//! scaling = "log-ratio"     # or "min-max"
//! out_of_range = "clamp"    # or "reject"
//!
//! [synth]
//! bot_fraction = 0.5
//! # [synth.profile.bot] / [synth.profile.human] override the class profiles
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::crawler::{RateLimitPolicy, DEFAULT_CHECKPOINT_EVERY};
use crate::features::NUM_FEATURES;
use crate::ingest::DEFAULT_TWEET_CAP;
use crate::mlp::MlpConfig;
use crate::normalize::{OutOfRangePolicy, Scaling};
use crate::synth::SynthProfile;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TFF_THRESHOLD: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// The one seed every stage derives its randomness from.
    pub seed: u64,
    pub tff_threshold: f64,
    pub tweet_cap: usize,
    pub train: TrainSettings,
    pub rate_limit: RateLimitPolicy,
    pub crawl: CrawlSettings,
    pub normalize: NormalizeSettings,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: DEFAULT_SEED,
            tff_threshold: DEFAULT_TFF_THRESHOLD,
            tweet_cap: DEFAULT_TWEET_CAP,
            train: TrainSettings::default(),
            rate_limit: RateLimitPolicy::default(),
            crawl: CrawlSettings::default(),
            normalize: NormalizeSettings::default(),
            synth: SynthSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub hidden_layout: Vec<usize>,
    pub learning_rate: f64,
    pub passes: usize,
    /// A row count, or `"full"` for full-batch gradient descent.
    #[serde(with = "crate::mlp::batch_size_repr")]
    pub batch_size: Option<usize>,
    pub threshold: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = MlpConfig::default();
        TrainSettings {
            hidden_layout: d.hidden_layout,
            learning_rate: d.learning_rate,
            passes: d.passes,
            batch_size: d.batch_size,
            threshold: d.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrawlSettings {
    pub checkpoint_every: u64,
}

impl Default for CrawlSettings {
    fn default() -> Self {
        CrawlSettings {
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSettings {
    pub scaling: Scaling,
    pub out_of_range: OutOfRangePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub bot_fraction: f64,
    pub profile: SynthProfile,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            bot_fraction: 0.5,
            profile: SynthProfile::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn mlp_config(&self) -> MlpConfig {
        MlpConfig {
            input_dim: NUM_FEATURES,
            hidden_layout: self.train.hidden_layout.clone(),
            learning_rate: self.train.learning_rate,
            passes: self.train.passes,
            seed: self.seed,
            batch_size: self.train.batch_size,
            threshold: self.train.threshold,
            ..MlpConfig::default()
        }
    }
}
