//! The nine per-account features and their canonical column order.

use serde::{Deserialize, Serialize};

use crate::ingest::{AccountRecord, Class, Dataset};

/// Number of feature columns.
pub const NUM_FEATURES: usize = 9;

/// Canonical column order, shared by the CSV header, normalization stats and
/// model input.
pub const COLUMN_NAMES: [&str; NUM_FEATURES] = [
    "default_profile",
    "statuses_count",
    "followers_count",
    "listed_count",
    "friends_count",
    "urls_ratio",
    "verified",
    "protected",
    "hashtags_ratio",
];

/// Raw (pre-normalization) feature values for one account.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub default_profile: f64,
    pub statuses_count: f64,
    pub followers_count: f64,
    pub listed_count: f64,
    pub friends_count: f64,
    /// Fraction of collected tweets carrying at least one external URL.
    pub urls_ratio: f64,
    pub verified: f64,
    pub protected: f64,
    /// Hashtags per collected tweet; can exceed 1.
    pub hashtags_ratio: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        [
            self.default_profile,
            self.statuses_count,
            self.followers_count,
            self.listed_count,
            self.friends_count,
            self.urls_ratio,
            self.verified,
            self.protected,
            self.hashtags_ratio,
        ]
    }

    pub fn from_array(values: [f64; NUM_FEATURES]) -> Self {
        let [default_profile, statuses_count, followers_count, listed_count, friends_count, urls_ratio, verified, protected, hashtags_ratio] =
            values;
        FeatureVector {
            default_profile,
            statuses_count,
            followers_count,
            listed_count,
            friends_count,
            urls_ratio,
            verified,
            protected,
            hashtags_ratio,
        }
    }
}

fn flag(value: bool) -> f64 {
    if value {
        1.0
    } else {
        0.0
    }
}

/// Ratios are computed over the collected tweet sample; an account with no
/// collected tweets gets 0 for both.
pub fn extract_features(account: &AccountRecord) -> FeatureVector {
    let n = account.tweets.len();
    let (urls_ratio, hashtags_ratio) = if n == 0 {
        (0.0, 0.0)
    } else {
        let with_url = account.tweets.iter().filter(|t| t.external_url_count >= 1).count();
        let hashtags: u64 = account.tweets.iter().map(|t| t.hashtag_count).sum();
        (with_url as f64 / n as f64, hashtags as f64 / n as f64)
    };
    FeatureVector {
        default_profile: flag(account.default_profile),
        statuses_count: account.statuses_count as f64,
        followers_count: account.followers_count as f64,
        listed_count: account.listed_count as f64,
        friends_count: account.friends_count as f64,
        urls_ratio,
        verified: flag(account.verified),
        protected: flag(account.protected),
        hashtags_ratio,
    }
}

pub fn extract_all(dataset: &Dataset) -> Vec<(FeatureVector, Option<Class>)> {
    dataset
        .records()
        .iter()
        .map(|r| (extract_features(r), r.label))
        .collect()
}
