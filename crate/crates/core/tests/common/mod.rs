#![allow(dead_code)]

use std::path::PathBuf;

use botwatch::{AccountRecord, Class, TweetRecord};
use proptest::prelude::*;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub const BENCHMARK_SEED: u64 = 42;

fn arb_tweet() -> impl Strategy<Value = TweetRecord> {
    ("[a-z #:/.]{0,40}", 0u64..4, 0u64..6).prop_map(|(text, urls, tags)| TweetRecord {
        text,
        external_url_count: urls,
        hashtag_count: tags,
    })
}

fn arb_label() -> impl Strategy<Value = Option<Class>> {
    prop_oneof![Just(None), Just(Some(Class::Bot)), Just(Some(Class::Human))]
}

/// Any structurally valid account; `id` is used verbatim so callers can keep
/// ids unique.
pub fn arb_account(id: String) -> impl Strategy<Value = AccountRecord> {
    (
        "[a-zA-Z0-9_]{1,15}",
        any::<bool>(),
        (0u64..1_000_000, 0u64..1_000_000, 0u64..10_000, 0u64..100_000),
        (any::<bool>(), any::<bool>()),
        prop::collection::vec(arb_tweet(), 0..6),
        arb_label(),
    )
        .prop_map(
            move |(screen_name, default_profile, counts, flags, tweets, label)| AccountRecord {
                account_id: id.clone(),
                screen_name,
                default_profile,
                statuses_count: counts.0,
                followers_count: counts.1,
                listed_count: counts.2,
                friends_count: counts.3,
                verified: flags.0,
                protected: flags.1,
                tweets,
                label,
            },
        )
}

pub fn arb_accounts(max: usize) -> impl Strategy<Value = Vec<AccountRecord>> {
    (0..=max).prop_flat_map(|n| (0..n).map(|i| arb_account(format!("acct{i}"))).collect::<Vec<_>>())
}

use botwatch::mlp::{self, MlpConfig, MlpModel};
use botwatch::Sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Compares the analytic gradient with central differences on every
/// parameter. An entry passes if it is within `rel` relatively or
/// `abs_floor` absolutely.
pub struct GradCheck {
    pub worst_relative: f64,
    pub failures: Vec<String>,
    pub parameters: usize,
}

pub fn finite_difference_check(model: &MlpModel, batch: &[Sample], h: f64, rel: f64, abs_floor: f64) -> GradCheck {
    let grads = model.grad(batch).unwrap();
    let mut check = GradCheck {
        worst_relative: 0.0,
        failures: Vec::new(),
        parameters: 0,
    };
    for (k, layer) in model.layers.iter().enumerate() {
        let n_weights = layer.weights.len();
        for p in 0..n_weights + layer.bias.len() {
            let numeric = {
                let mut plus = model.clone();
                let mut minus = model.clone();
                if p < n_weights {
                    plus.layers[k].weights[p] += h;
                    minus.layers[k].weights[p] -= h;
                } else {
                    plus.layers[k].bias[p - n_weights] += h;
                    minus.layers[k].bias[p - n_weights] -= h;
                }
                (plus.loss(batch).unwrap() - minus.loss(batch).unwrap()) / (2.0 * h)
            };
            let analytic = if p < n_weights {
                grads.layers[k].weights[p]
            } else {
                grads.layers[k].bias[p - n_weights]
            };
            let diff = (analytic - numeric).abs();
            let scale = analytic.abs().max(numeric.abs());
            let relative = if scale > 0.0 { diff / scale } else { 0.0 };
            check.worst_relative = check.worst_relative.max(relative);
            if diff > abs_floor && relative > rel {
                check
                    .failures
                    .push(format!("layer {k} param {p}: analytic {analytic} numeric {numeric}"));
            }
            check.parameters += 1;
        }
    }
    check
}

/// A random model (Xavier init with a random seed, biases jittered) and a
/// random batch of 1 to 8 rows.
pub fn random_model_and_batch(layout: &[usize], seed: u64) -> (MlpModel, Vec<Sample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = MlpConfig {
        hidden_layout: layout.to_vec(),
        seed: rng.random(),
        ..MlpConfig::default()
    };
    let mut model = mlp::init_model(&config).unwrap();
    for layer in &mut model.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let n = rng.random_range(1..=8);
    let batch = (0..n)
        .map(|_| Sample {
            values: (0..config.input_dim).map(|_| rng.random_range(0.0..=1.0)).collect(),
            target: rng.random_range(0..=1),
        })
        .collect();
    (model, batch)
}

/// Two well-separated clusters in the unit cube: label 0 near the origin,
/// label 1 near the far corner.
pub fn two_clusters(n: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let target = (i % 2) as u8;
            let base = if target == 1 { 0.7 } else { 0.0 };
            Sample {
                values: (0..9).map(|_| base + rng.random_range(0.0..0.3)).collect(),
                target,
            }
        })
        .collect()
}

use std::collections::HashMap;

use botwatch::crawler::{AccountSource, Adjacency, Clock, FixtureSource, Millis, SimulatedClock, SourceError};

pub fn star_dir() -> PathBuf {
    fixture("star")
}

fn plain_account(id: String) -> AccountRecord {
    AccountRecord {
        screen_name: format!("u_{id}"),
        account_id: id,
        default_profile: false,
        statuses_count: 1,
        followers_count: 1,
        listed_count: 0,
        friends_count: 1,
        verified: false,
        protected: false,
        tweets: vec![TweetRecord::from_text("hello")],
        label: None,
    }
}

/// `n` accounts `g0..g{n-1}`, each with up to four random friends and
/// followers; `g0` reaches every other account through friends.
pub fn random_graph(n: usize, seed: u64) -> FixtureSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
    let mut adjacency = HashMap::new();
    for (i, id) in ids.iter().enumerate() {
        let mut friends: Vec<String> = (0..rng.random_range(0..4))
            .map(|_| ids[rng.random_range(0..n)].clone())
            .collect();
        if i + 1 < n {
            friends.push(ids[i + 1].clone());
        }
        let followers = (0..rng.random_range(0..4))
            .map(|_| ids[rng.random_range(0..n)].clone())
            .collect();
        adjacency.insert(id.clone(), Adjacency { friends, followers });
    }
    FixtureSource::new(ids.into_iter().map(plain_account).collect(), adjacency)
}

/// Wraps a source, stamping every request with the simulated time at which
/// it was issued and then letting up to `latency` ms pass.
pub struct TimedSource<'a, S> {
    pub inner: S,
    pub clock: &'a SimulatedClock,
    pub rng: ChaCha8Rng,
    pub latency: Millis,
    pub times: Vec<Millis>,
}

impl<S: AccountSource> TimedSource<'_, S> {
    fn stamp(&mut self) {
        self.times.push(self.clock.now());
        if self.latency > 0 {
            let delay = self.rng.random_range(0..=self.latency);
            self.clock.advance(delay);
        }
    }
}

impl<S: AccountSource> AccountSource for TimedSource<'_, S> {
    fn fetch_profile(&mut self, id: &str) -> Result<AccountRecord, SourceError> {
        self.stamp();
        self.inner.fetch_profile(id)
    }
    fn fetch_tweets(&mut self, id: &str) -> Result<Vec<TweetRecord>, SourceError> {
        self.stamp();
        self.inner.fetch_tweets(id)
    }
    fn fetch_friend_ids(&mut self, id: &str) -> Result<Vec<String>, SourceError> {
        self.stamp();
        self.inner.fetch_friend_ids(id)
    }
    fn fetch_follower_ids(&mut self, id: &str) -> Result<Vec<String>, SourceError> {
        self.stamp();
        self.inner.fetch_follower_ids(id)
    }
}

/// Largest number of timestamps falling in any half-open interval
/// `[t, t + window)`. `times` must be sorted.
pub fn busiest_window(times: &[Millis], window: Millis) -> usize {
    let mut best = 0;
    let mut lo = 0;
    for hi in 0..times.len() {
        while times[lo] + window <= times[hi] {
            lo += 1;
        }
        best = best.max(hi - lo + 1);
    }
    best
}

use std::time::Duration;

use botwatch::crawler::{self, CrawlState, RateLimitPolicy, RunOptions, StepOutcome};

pub fn star() -> FixtureSource {
    FixtureSource::open(&star_dir()).unwrap()
}

pub fn ndjson(state: &CrawlState) -> Vec<u8> {
    let mut out = Vec::new();
    botwatch::ingest::write_dataset(&state.collected, &mut out).unwrap();
    out
}

/// Small enough that the star crawl has to wait for budget twice.
pub fn tight() -> RateLimitPolicy {
    RateLimitPolicy {
        max_requests: 8,
        window: Duration::from_secs(60),
    }
}

pub fn uninterrupted(policy: &RateLimitPolicy) -> CrawlState {
    let clock = SimulatedClock::new(0);
    crawler::run_crawl(&["hub".into()], &mut star(), policy, &clock, &RunOptions::default()).unwrap()
}

/// Runs the star crawl, killing the process after `kill_after` steps: the
/// in-memory state is lost and only the last periodic checkpoint survives.
/// Then resumes from that checkpoint with a fresh clock and source.
pub fn kill_and_resume(kill_after: u64, every: u64, policy: &RateLimitPolicy) -> CrawlState {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cp.json");
    let clock = SimulatedClock::new(0);
    let mut source = star();
    let mut state = CrawlState::new(["hub"]);
    crawler::checkpoint(&state, &path).unwrap();
    let mut steps = 0;
    while steps < kill_after && !state.is_done() {
        match crawler::crawl_step(&mut state, &mut source, policy, &clock).unwrap() {
            StepOutcome::Wait { until } => {
                clock.wait_until(until);
                continue;
            }
            _ => steps += 1,
        }
        if state.checkpoint_epoch.is_multiple_of(every) {
            crawler::checkpoint(&state, &path).unwrap();
        }
    }
    drop(state);

    let mut resumed = crawler::resume(&path).unwrap();
    let restart = resumed
        .requests_log
        .back()
        .copied()
        .unwrap_or(0)
        .max(resumed.wait_until.unwrap_or(0));
    let clock = SimulatedClock::new(restart);
    crawler::continue_crawl(&mut resumed, &mut star(), policy, &clock, &RunOptions::default()).unwrap();
    resumed
}
