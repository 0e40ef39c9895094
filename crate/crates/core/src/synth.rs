//! Seeded generator of labeled, Twitter-shaped accounts.
//!
//! Only the per-tweet URL probabilities (0.97 for bots, 0.29 for humans)
//! come from published measurements. Every other default is made up to give
//! two classes that overlap but are mostly separable.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{AccountRecord, Class, Dataset, TweetRecord};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("need at least one account")]
    EmptyDataset,
    #[error("bot fraction must lie in [0, 1], got {0}")]
    InvalidBotFraction(f64),
    #[error("invalid {class} profile: {reason}")]
    InvalidProfile { class: Class, reason: String },
}

/// Log-space location and scale of a lognormal count distribution. The
/// median of the generated counts is `exp(mu)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

impl LogNormalParams {
    pub fn with_median(median: f64, sigma: f64) -> Self {
        LogNormalParams { mu: median.ln(), sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    /// Inclusive range of collected tweets per account.
    pub tweets_min: usize,
    pub tweets_max: usize,
    /// Probability that a tweet carries an external URL.
    pub url_probability: f64,
    /// Poisson mean of hashtags per tweet.
    pub hashtags_per_tweet: f64,
    pub statuses: LogNormalParams,
    pub followers: LogNormalParams,
    pub friends: LogNormalParams,
    pub listed: LogNormalParams,
    pub default_profile_probability: f64,
    pub verified_probability: f64,
    pub protected_probability: f64,
}

impl ClassProfile {
    pub fn bot() -> Self {
        ClassProfile {
            tweets_min: 1,
            tweets_max: 40,
            url_probability: 0.97,
            hashtags_per_tweet: 2.0,
            statuses: LogNormalParams::with_median(3000.0, 1.0),
            followers: LogNormalParams::with_median(40.0, 1.2),
            friends: LogNormalParams::with_median(1500.0, 0.8),
            listed: LogNormalParams::with_median(1.0, 0.8),
            default_profile_probability: 0.75,
            verified_probability: 0.0,
            protected_probability: 0.02,
        }
    }

    pub fn human() -> Self {
        ClassProfile {
            tweets_min: 1,
            tweets_max: 40,
            url_probability: 0.29,
            hashtags_per_tweet: 0.5,
            statuses: LogNormalParams::with_median(2000.0, 1.2),
            followers: LogNormalParams::with_median(400.0, 1.3),
            friends: LogNormalParams::with_median(300.0, 1.0),
            listed: LogNormalParams::with_median(8.0, 1.0),
            default_profile_probability: 0.25,
            verified_probability: 0.08,
            protected_probability: 0.12,
        }
    }

    fn validate(&self, class: Class) -> Result<(), SynthError> {
        let fail = |reason: String| Err(SynthError::InvalidProfile { class, reason });
        for (name, p) in [
            ("url_probability", self.url_probability),
            ("default_profile_probability", self.default_profile_probability),
            ("verified_probability", self.verified_probability),
            ("protected_probability", self.protected_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} = {p} is not a probability"));
            }
        }
        if self.tweets_min > self.tweets_max {
            return fail(format!("empty tweet range {}..={}", self.tweets_min, self.tweets_max));
        }
        if !self.hashtags_per_tweet.is_finite() || self.hashtags_per_tweet < 0.0 {
            return fail(format!("hashtags_per_tweet = {}", self.hashtags_per_tweet));
        }
        for (name, params) in [
            ("statuses", self.statuses),
            ("followers", self.followers),
            ("friends", self.friends),
            ("listed", self.listed),
        ] {
            if !params.mu.is_finite() || !params.sigma.is_finite() || params.sigma < 0.0 {
                return fail(format!("{name} lognormal parameters {params:?}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthProfile {
    pub bot: ClassProfile,
    pub human: ClassProfile,
}

impl Default for SynthProfile {
    fn default() -> Self {
        SynthProfile {
            bot: ClassProfile::bot(),
            human: ClassProfile::human(),
        }
    }
}

impl SynthProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        self.bot.validate(Class::Bot)?;
        self.human.validate(Class::Human)
    }

    fn for_class(&self, class: Class) -> &ClassProfile {
        match class {
            Class::Bot => &self.bot,
            Class::Human => &self.human,
        }
    }
}

const WORDS: [&str; 16] = [
    "new", "deal", "today", "just", "love", "win", "free", "check", "great", "news", "game", "live", "now", "best",
    "day", "watch",
];

fn count(rng: &mut impl Rng, params: LogNormalParams) -> u64 {
    let dist = LogNormal::new(params.mu, params.sigma).expect("validated lognormal");
    dist.sample(rng).round() as u64
}

fn tweet(rng: &mut impl Rng, profile: &ClassProfile, hashtags: Option<&Poisson<f64>>) -> TweetRecord {
    let mut tokens: Vec<String> = (0..rng.random_range(2..=4))
        .map(|_| WORDS[rng.random_range(0..WORDS.len())].to_string())
        .collect();
    let tags = hashtags.map_or(0, |p| p.sample(rng) as u64);
    for _ in 0..tags {
        tokens.push(format!("#{}", WORDS[rng.random_range(0..WORDS.len())]));
    }
    if rng.random_bool(profile.url_probability) {
        tokens.push(format!("https://t.co/{:06x}", rng.random_range(0..0x100_0000u32)));
    }
    TweetRecord::from_text(tokens.join(" "))
}

fn account(rng: &mut impl Rng, index: usize, class: Class, profile: &ClassProfile) -> AccountRecord {
    let hashtags = (profile.hashtags_per_tweet > 0.0)
        .then(|| Poisson::new(profile.hashtags_per_tweet).expect("validated poisson mean"));
    let n_tweets = rng.random_range(profile.tweets_min..=profile.tweets_max);
    let tweets: Vec<_> = (0..n_tweets).map(|_| tweet(rng, profile, hashtags.as_ref())).collect();
    AccountRecord {
        account_id: format!("synth-{index:06}"),
        screen_name: format!("user{index:06}"),
        default_profile: rng.random_bool(profile.default_profile_probability),
        statuses_count: count(rng, profile.statuses).max(tweets.len() as u64),
        followers_count: count(rng, profile.followers),
        listed_count: count(rng, profile.listed),
        friends_count: count(rng, profile.friends),
        verified: rng.random_bool(profile.verified_probability),
        protected: rng.random_bool(profile.protected_probability),
        tweets,
        label: Some(class),
    }
}

/// Generates `n` labeled accounts, `round(n * bot_fraction)` of them bots,
/// in seeded-shuffled order. Deterministic in all four arguments.
pub fn generate(n: usize, bot_fraction: f64, profile: &SynthProfile, seed: u64) -> Result<Dataset, SynthError> {
    if n == 0 {
        return Err(SynthError::EmptyDataset);
    }
    if !(0.0..=1.0).contains(&bot_fraction) {
        return Err(SynthError::InvalidBotFraction(bot_fraction));
    }
    profile.validate()?;

    let bots = (n as f64 * bot_fraction).round() as usize;
    let mut classes: Vec<Class> = std::iter::repeat_n(Class::Bot, bots)
        .chain(std::iter::repeat_n(Class::Human, n - bots))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classes.shuffle(&mut rng);
    let records = classes
        .into_iter()
        .enumerate()
        .map(|(i, class)| account(&mut rng, i, class, profile.for_class(class)))
        .collect();
    let provenance = format!("synth n={n} bot_fraction={bot_fraction} seed={seed}");
    Ok(Dataset::new(records, provenance).expect("generated ids are unique"))
}
