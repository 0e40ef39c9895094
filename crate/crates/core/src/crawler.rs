//! Breadth-first account crawler with a sliding-window request budget and
//! checkpoint/resume.
//!
//! Each visited account costs four requests against the budget (profile,
//! tweets, friend ids, follower ids). When the next account would not fit in
//! the current window the step issues nothing and reports the time at which
//! the oldest logged request leaves the window. Time comes from an injected
//! [`Clock`] so that tests run in simulated time.

use std::cell::Cell;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{self, AccountRecord, Dataset, TweetRecord};

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
pub const REQUESTS_PER_ACCOUNT: u32 = 4;
pub const DEFAULT_CHECKPOINT_EVERY: u64 = 10;

/// Milliseconds on the clock's own timeline.
pub type Millis = u64;

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error("crawl needs at least one seed account")]
    NoSeeds,
    #[error("frontier is empty")]
    EmptyFrontier,
    #[error("invalid rate limit policy: {0}")]
    InvalidPolicy(String),
    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: PathBuf, message: String },
    #[error("bad fixture {path}: {message}")]
    Fixture { path: PathBuf, message: String },
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CrawlError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SourceError {
    /// Worth retrying later (dropped connection, server hiccup).
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("account `{0}` not found")]
    NotFound(String),
}

pub trait Clock {
    fn now(&self) -> Millis;
    /// Blocks (or, for simulated clocks, jumps) until `deadline`.
    fn wait_until(&self, deadline: Millis);
}

/// A clock that only moves when told to; `wait_until` jumps forward
/// instantly.
#[derive(Debug, Default)]
pub struct SimulatedClock {
    now: Cell<Millis>,
}

impl SimulatedClock {
    pub fn new(start: Millis) -> Self {
        SimulatedClock { now: Cell::new(start) }
    }

    pub fn advance(&self, by: Millis) {
        self.now.set(self.now.get() + by);
    }
}

impl Clock for SimulatedClock {
    fn now(&self) -> Millis {
        self.now.get()
    }

    fn wait_until(&self, deadline: Millis) {
        if deadline > self.now.get() {
            self.now.set(deadline);
        }
    }
}

/// Wall-clock time in milliseconds since the Unix epoch. Wall time rather
/// than a process-local monotonic clock, so request logs stay meaningful
/// across a checkpoint and a resume in a later process.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Millis {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as Millis)
            .unwrap_or(0)
    }

    fn wait_until(&self, deadline: Millis) {
        let now = self.now();
        if deadline > now {
            std::thread::sleep(Duration::from_millis(deadline - now));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateLimitPolicy {
    pub max_requests: u32,
    #[serde(with = "duration_secs")]
    pub window: Duration,
}

impl Default for RateLimitPolicy {
    fn default() -> Self {
        RateLimitPolicy {
            max_requests: 150,
            window: Duration::from_secs(3600),
        }
    }
}

impl RateLimitPolicy {
    /// A policy must admit at least one whole account per window.
    pub fn validate(&self) -> Result<()> {
        if self.max_requests < REQUESTS_PER_ACCOUNT {
            return Err(CrawlError::InvalidPolicy(format!(
                "max_requests {} cannot fit the {REQUESTS_PER_ACCOUNT} requests one account needs",
                self.max_requests
            )));
        }
        if self.window.is_zero() {
            return Err(CrawlError::InvalidPolicy("window must be positive".into()));
        }
        Ok(())
    }

    pub fn window_millis(&self) -> Millis {
        self.window.as_millis() as Millis
    }
}

mod duration_secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let secs = f64::deserialize(d)?;
        Duration::try_from_secs_f64(secs).map_err(serde::de::Error::custom)
    }
}

/// Where account data comes from. Every call costs one request; any call
/// may fail transiently. Calls are made sequentially.
pub trait AccountSource {
    /// Profile metadata; the `tweets` field of the result is ignored.
    fn fetch_profile(&mut self, id: &str) -> Result<AccountRecord, SourceError>;
    fn fetch_tweets(&mut self, id: &str) -> Result<Vec<TweetRecord>, SourceError>;
    fn fetch_friend_ids(&mut self, id: &str) -> Result<Vec<String>, SourceError>;
    fn fetch_follower_ids(&mut self, id: &str) -> Result<Vec<String>, SourceError>;
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Adjacency {
    #[serde(default)]
    pub friends: Vec<String>,
    #[serde(default)]
    pub followers: Vec<String>,
}

/// Serves accounts from a directory:
///
/// ```text
/// <dir>/accounts/<anything>.json   one account document each
/// <dir>/adjacency.json             { "<id>": { "friends": [..], "followers": [..] } }
/// ```
#[derive(Debug, Clone, Default)]
pub struct FixtureSource {
    accounts: HashMap<String, AccountRecord>,
    adjacency: HashMap<String, Adjacency>,
}

impl FixtureSource {
    pub fn new(accounts: Vec<AccountRecord>, adjacency: HashMap<String, Adjacency>) -> Self {
        FixtureSource {
            accounts: accounts.into_iter().map(|a| (a.account_id.clone(), a)).collect(),
            adjacency,
        }
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let fixture_err = |path: &Path, message: String| CrawlError::Fixture {
            path: path.to_path_buf(),
            message,
        };
        if !dir.is_dir() {
            return Err(fixture_err(dir, "fixture directory does not exist".into()));
        }
        let accounts_dir = dir.join("accounts");
        let entries = std::fs::read_dir(&accounts_dir).map_err(|source| CrawlError::Io {
            path: accounts_dir.clone(),
            source,
        })?;
        let mut accounts = Vec::new();
        for entry in entries {
            let path = entry
                .map_err(|source| CrawlError::Io {
                    path: accounts_dir.clone(),
                    source,
                })?
                .path();
            if path.extension().is_some_and(|e| e == "json") {
                let bytes = std::fs::read(&path).map_err(|source| CrawlError::Io {
                    path: path.clone(),
                    source,
                })?;
                accounts.push(ingest::parse_account(&bytes).map_err(|e| fixture_err(&path, e.to_string()))?);
            }
        }
        let adjacency_path = dir.join("adjacency.json");
        let bytes = std::fs::read(&adjacency_path).map_err(|source| CrawlError::Io {
            path: adjacency_path.clone(),
            source,
        })?;
        let adjacency = serde_json::from_slice(&bytes).map_err(|e| fixture_err(&adjacency_path, e.to_string()))?;
        Ok(FixtureSource::new(accounts, adjacency))
    }

    fn account(&self, id: &str) -> Result<&AccountRecord, SourceError> {
        self.accounts
            .get(id)
            .ok_or_else(|| SourceError::NotFound(id.to_string()))
    }

    fn neighbors(&self, id: &str) -> Result<&Adjacency, SourceError> {
        self.account(id)?;
        static EMPTY: Adjacency = Adjacency {
            friends: Vec::new(),
            followers: Vec::new(),
        };
        Ok(self.adjacency.get(id).unwrap_or(&EMPTY))
    }
}

impl AccountSource for FixtureSource {
    fn fetch_profile(&mut self, id: &str) -> Result<AccountRecord, SourceError> {
        let mut profile = self.account(id)?.clone();
        profile.tweets.clear();
        Ok(profile)
    }

    fn fetch_tweets(&mut self, id: &str) -> Result<Vec<TweetRecord>, SourceError> {
        Ok(self.account(id)?.tweets.clone())
    }

    fn fetch_friend_ids(&mut self, id: &str) -> Result<Vec<String>, SourceError> {
        Ok(self.neighbors(id)?.friends.clone())
    }

    fn fetch_follower_ids(&mut self, id: &str) -> Result<Vec<String>, SourceError> {
        Ok(self.neighbors(id)?.followers.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrawlState {
    pub frontier: VecDeque<String>,
    pub visited: BTreeSet<String>,
    /// Issue times of requests still inside the rate-limit window, oldest
    /// first.
    pub requests_log: VecDeque<Millis>,
    pub collected: Dataset,
    /// Completed steps (collected, skipped or retried accounts).
    pub checkpoint_epoch: u64,
    /// Set when the last step was refused for lack of budget.
    pub wait_until: Option<Millis>,
}

impl CrawlState {
    pub fn new<I, S>(seeds: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut frontier = VecDeque::new();
        for seed in seeds {
            let seed = seed.into();
            if !frontier.contains(&seed) {
                frontier.push_back(seed);
            }
        }
        let provenance = format!(
            "crawl seeds={}",
            frontier.iter().map(String::as_str).collect::<Vec<_>>().join(",")
        );
        CrawlState {
            frontier,
            visited: BTreeSet::new(),
            requests_log: VecDeque::new(),
            collected: Dataset::empty(provenance),
            checkpoint_epoch: 0,
            wait_until: None,
        }
    }

    pub fn is_done(&self) -> bool {
        self.frontier.is_empty()
    }

    fn enqueue(&mut self, id: String) {
        if !self.visited.contains(&id) && !self.frontier.contains(&id) {
            self.frontier.push_back(id);
        }
    }

    fn prune_log(&mut self, now: Millis, window: Millis) {
        while self.requests_log.front().is_some_and(|&t| t + window <= now) {
            self.requests_log.pop_front();
        }
    }
}

/// What a single [`crawl_step`] did.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Collected(String),
    /// Budget exhausted; nothing was issued. Retry at or after `until`.
    Wait {
        until: Millis,
    },
    /// A transient failure; the id went to the back of the frontier.
    Retried {
        id: String,
        error: SourceError,
    },
    /// The source does not know the account; it is marked visited and
    /// dropped.
    Skipped {
        id: String,
    },
}

fn issue<T>(
    state: &mut CrawlState,
    clock: &dyn Clock,
    call: impl FnOnce() -> Result<T, SourceError>,
) -> Result<T, SourceError> {
    state.requests_log.push_back(clock.now());
    call()
}

/// Visits the account at the front of the frontier.
pub fn crawl_step(
    state: &mut CrawlState,
    source: &mut dyn AccountSource,
    policy: &RateLimitPolicy,
    clock: &dyn Clock,
) -> Result<StepOutcome> {
    policy.validate()?;
    if state.frontier.is_empty() {
        return Err(CrawlError::EmptyFrontier);
    }
    let window = policy.window_millis();
    state.prune_log(clock.now(), window);
    if state.requests_log.len() as u64 + REQUESTS_PER_ACCOUNT as u64 > policy.max_requests as u64 {
        let oldest = *state.requests_log.front().expect("log is nonempty when over budget");
        let until = oldest + window;
        state.wait_until = Some(until);
        return Ok(StepOutcome::Wait { until });
    }
    state.wait_until = None;

    let id = state.frontier.pop_front().expect("checked nonempty");
    let fetched = (|| {
        let profile = issue(state, clock, || source.fetch_profile(&id))?;
        let tweets = issue(state, clock, || source.fetch_tweets(&id))?;
        let friends = issue(state, clock, || source.fetch_friend_ids(&id))?;
        let followers = issue(state, clock, || source.fetch_follower_ids(&id))?;
        Ok((profile, tweets, friends, followers))
    })();
    state.checkpoint_epoch += 1;

    match fetched {
        Ok((mut record, tweets, friends, followers)) => {
            record.tweets = tweets;
            // the source is addressed by `id`; keep that as the record's key
            record.account_id = id.clone();
            state.visited.insert(id.clone());
            state
                .collected
                .push(record)
                .expect("visited ids are never collected twice");
            for neighbor in friends.into_iter().chain(followers) {
                state.enqueue(neighbor);
            }
            Ok(StepOutcome::Collected(id))
        }
        Err(SourceError::NotFound(_)) => {
            state.visited.insert(id.clone());
            Ok(StepOutcome::Skipped { id })
        }
        Err(error @ SourceError::Transient(_)) => {
            state.frontier.push_back(id.clone());
            Ok(StepOutcome::Retried { id, error })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    /// Maximum number of completed steps; budget waits do not count.
    pub max_steps: u64,
    pub checkpoint_every: u64,
    /// Checkpoint destination; `None` disables checkpointing.
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_steps: u64::MAX,
            checkpoint_every: DEFAULT_CHECKPOINT_EVERY,
            checkpoint_path: None,
        }
    }
}

/// Starts a crawl from `seeds` and runs it per `options`.
pub fn run_crawl(
    seeds: &[String],
    source: &mut dyn AccountSource,
    policy: &RateLimitPolicy,
    clock: &dyn Clock,
    options: &RunOptions,
) -> Result<CrawlState> {
    if seeds.is_empty() {
        return Err(CrawlError::NoSeeds);
    }
    let mut state = CrawlState::new(seeds.iter().cloned());
    continue_crawl(&mut state, source, policy, clock, options)?;
    Ok(state)
}

/// Steps until the frontier drains or `options.max_steps` steps complete,
/// checkpointing every `checkpoint_every` epochs and once more on exit.
/// Returns the number of steps taken.
pub fn continue_crawl(
    state: &mut CrawlState,
    source: &mut dyn AccountSource,
    policy: &RateLimitPolicy,
    clock: &dyn Clock,
    options: &RunOptions,
) -> Result<u64> {
    policy.validate()?;
    let every = options.checkpoint_every.max(1);
    let mut steps = 0;
    while steps < options.max_steps && !state.is_done() {
        match crawl_step(state, source, policy, clock)? {
            StepOutcome::Wait { until } => {
                log::info!("request budget exhausted, waiting until {until}");
                clock.wait_until(until);
                continue;
            }
            StepOutcome::Retried { id, error } => log::warn!("{id}: {error}, requeued"),
            StepOutcome::Skipped { id } => log::warn!("{id}: not found, skipped"),
            StepOutcome::Collected(_) => {}
        }
        steps += 1;
        if let Some(path) = &options.checkpoint_path {
            if state.checkpoint_epoch.is_multiple_of(every) {
                checkpoint(state, path)?;
            }
        }
    }
    if let Some(path) = &options.checkpoint_path {
        checkpoint(state, path)?;
    }
    Ok(steps)
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    schema_version: u32,
    checkpoint_epoch: u64,
    frontier: &'a VecDeque<String>,
    visited: &'a BTreeSet<String>,
    requests_log: &'a VecDeque<Millis>,
    wait_until: Option<Millis>,
    provenance: &'a str,
    collected: &'a [AccountRecord],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointIn {
    schema_version: u32,
    checkpoint_epoch: u64,
    frontier: VecDeque<String>,
    visited: BTreeSet<String>,
    requests_log: VecDeque<Millis>,
    wait_until: Option<Millis>,
    provenance: String,
    collected: Vec<AccountRecord>,
}

pub fn checkpoint_to_json(state: &CrawlState) -> String {
    let out = CheckpointOut {
        schema_version: CHECKPOINT_SCHEMA_VERSION,
        checkpoint_epoch: state.checkpoint_epoch,
        frontier: &state.frontier,
        visited: &state.visited,
        requests_log: &state.requests_log,
        wait_until: state.wait_until,
        provenance: &state.collected.provenance,
        collected: state.collected.records(),
    };
    serde_json::to_string(&out).expect("checkpoint serializes") + "\n"
}

/// Writes the state to `path` via a temporary file and a rename, so a crash
/// mid-write leaves the previous checkpoint intact.
pub fn checkpoint(state: &CrawlState, path: &Path) -> Result<()> {
    let io = |source| CrawlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, checkpoint_to_json(state)).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn resume(path: &Path) -> Result<CrawlState> {
    let bytes = std::fs::read(path).map_err(|source| CrawlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_json(&bytes).map_err(|message| CrawlError::CorruptCheckpoint {
        path: path.to_path_buf(),
        message,
    })
}

fn checkpoint_from_json(bytes: &[u8]) -> Result<CrawlState, String> {
    let file: CheckpointIn = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    if file.schema_version != CHECKPOINT_SCHEMA_VERSION {
        return Err(format!(
            "schema_version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
            file.schema_version
        ));
    }
    if let Some(id) = file.frontier.iter().find(|id| file.visited.contains(*id)) {
        return Err(format!("`{id}` is both queued and visited"));
    }
    if let Some(r) = file.collected.iter().find(|r| !file.visited.contains(&r.account_id)) {
        return Err(format!("collected `{}` was never visited", r.account_id));
    }
    let collected = Dataset::new(file.collected, file.provenance).map_err(|e| e.to_string())?;
    Ok(CrawlState {
        frontier: file.frontier,
        visited: file.visited,
        requests_log: file.requests_log,
        collected,
        checkpoint_epoch: file.checkpoint_epoch,
        wait_until: file.wait_until,
    })
}
