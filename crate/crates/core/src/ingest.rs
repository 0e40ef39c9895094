//! Account records: parsing, storage, TFF-based candidate flagging and
//! train/test splitting.
//!
//! Datasets live on disk as newline-delimited JSON, one account per line.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Number;
use thiserror::Error;

/// Default number of recent tweets kept per account.
pub const DEFAULT_TWEET_CAP: usize = 200;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed JSON{}: {message}", line.map(|l| format!(" on line {l}")).unwrap_or_default())]
    MalformedJson { line: Option<usize>, message: String },
    #[error("missing count field `{0}`")]
    MissingCountField(String),
    #[error("negative value for count field `{0}`")]
    NegativeCount(String),
    #[error("duplicate account id `{0}`")]
    DuplicateAccountId(String),
    #[error("record `{0}` has no label")]
    UnlabeledRecord(String),
    #[error("train size {requested} exceeds record count {available}")]
    TrainSizeTooLarge { requested: usize, available: usize },
    #[error("TFF threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("I/O failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IngestError {
    fn malformed(line: Option<usize>, err: impl ToString) -> Self {
        IngestError::MalformedJson {
            line,
            message: err.to_string(),
        }
    }

    fn at_line(self, line: usize) -> Self {
        match self {
            IngestError::MalformedJson { message, .. } => IngestError::MalformedJson {
                line: Some(line),
                message,
            },
            other => IngestError::MalformedJson {
                line: Some(line),
                message: other.to_string(),
            },
        }
    }
}

pub type Result<T, E = IngestError> = std::result::Result<T, E>;

/// Ground-truth class of an account. `Bot` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Human,
    Bot,
}

impl Class {
    /// 0 for human, 1 for bot.
    pub fn as_target(self) -> u8 {
        match self {
            Class::Human => 0,
            Class::Bot => 1,
        }
    }

    pub fn from_target(target: u8) -> Option<Class> {
        match target {
            0 => Some(Class::Human),
            1 => Some(Class::Bot),
            _ => None,
        }
    }
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Class::Human => f.write_str("human"),
            Class::Bot => f.write_str("bot"),
        }
    }
}

/// One collected tweet, reduced to what the feature extractor needs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TweetRecord {
    pub text: String,
    pub external_url_count: u64,
    pub hashtag_count: u64,
}

impl TweetRecord {
    /// Builds a tweet by counting `#tag` and `http(s)://` tokens in `text`.
    pub fn from_text(text: impl Into<String>) -> Self {
        let text = text.into();
        let (urls, tags) = count_tokens(&text);
        TweetRecord {
            text,
            external_url_count: urls,
            hashtag_count: tags,
        }
    }
}

fn count_tokens(text: &str) -> (u64, u64) {
    let mut urls = 0;
    let mut tags = 0;
    for token in text.split_whitespace() {
        if token.starts_with("http://") || token.starts_with("https://") {
            urls += 1;
        } else if token.len() > 1 && token.starts_with('#') {
            tags += 1;
        }
    }
    (urls, tags)
}

/// A Twitter-shaped user: profile metadata, a sample of recent tweets and an
/// optional ground-truth label (`None` serializes as `null`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAccount")]
pub struct AccountRecord {
    pub account_id: String,
    pub screen_name: String,
    pub default_profile: bool,
    pub statuses_count: u64,
    pub followers_count: u64,
    pub listed_count: u64,
    pub friends_count: u64,
    pub verified: bool,
    pub protected: bool,
    pub tweets: Vec<TweetRecord>,
    pub label: Option<Class>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTweet {
    Text(String),
    Full {
        text: String,
        external_url_count: Option<Number>,
        hashtag_count: Option<Number>,
    },
}

#[derive(Deserialize)]
struct RawAccount {
    account_id: Option<String>,
    screen_name: Option<String>,
    default_profile: Option<bool>,
    statuses_count: Option<Number>,
    followers_count: Option<Number>,
    listed_count: Option<Number>,
    friends_count: Option<Number>,
    verified: Option<bool>,
    protected: Option<bool>,
    tweets: Option<Vec<RawTweet>>,
    label: Option<Class>,
}

fn count_value(value: Option<Number>, name: &str) -> Result<u64> {
    let number = value.ok_or_else(|| IngestError::MissingCountField(name.to_string()))?;
    if let Some(v) = number.as_u64() {
        return Ok(v);
    }
    match number.as_f64() {
        Some(v) if v < 0.0 => Err(IngestError::NegativeCount(name.to_string())),
        _ => Err(IngestError::malformed(
            None,
            format!("field `{name}` must be a nonnegative integer, got {number}"),
        )),
    }
}

impl RawAccount {
    fn into_record(self, tweet_cap: usize) -> Result<AccountRecord> {
        let account_id = self
            .account_id
            .ok_or_else(|| IngestError::malformed(None, "missing field `account_id`"))?;
        let mut tweets = Vec::new();
        for (i, raw) in self.tweets.unwrap_or_default().into_iter().enumerate() {
            if tweets.len() == tweet_cap {
                break;
            }
            let tweet = match raw {
                RawTweet::Text(text) => TweetRecord::from_text(text),
                RawTweet::Full {
                    text,
                    external_url_count,
                    hashtag_count,
                } => {
                    let (urls, tags) = count_tokens(&text);
                    let urls = match external_url_count {
                        Some(n) => count_value(Some(n), &format!("tweets[{i}].external_url_count"))?,
                        None => urls,
                    };
                    let tags = match hashtag_count {
                        Some(n) => count_value(Some(n), &format!("tweets[{i}].hashtag_count"))?,
                        None => tags,
                    };
                    TweetRecord {
                        text,
                        external_url_count: urls,
                        hashtag_count: tags,
                    }
                }
            };
            tweets.push(tweet);
        }
        Ok(AccountRecord {
            screen_name: self.screen_name.unwrap_or_else(|| account_id.clone()),
            account_id,
            default_profile: self.default_profile.unwrap_or(false),
            statuses_count: count_value(self.statuses_count, "statuses_count")?,
            followers_count: count_value(self.followers_count, "followers_count")?,
            listed_count: count_value(self.listed_count, "listed_count")?,
            friends_count: count_value(self.friends_count, "friends_count")?,
            verified: self.verified.unwrap_or(false),
            protected: self.protected.unwrap_or(false),
            tweets,
            label: self.label,
        })
    }
}

impl TryFrom<RawAccount> for AccountRecord {
    type Error = IngestError;

    fn try_from(raw: RawAccount) -> Result<Self> {
        raw.into_record(DEFAULT_TWEET_CAP)
    }
}

/// Parses one account document with the default tweet cap.
pub fn parse_account(bytes: &[u8]) -> Result<AccountRecord> {
    parse_account_with_cap(bytes, DEFAULT_TWEET_CAP)
}

/// Parses one account document, keeping at most `tweet_cap` tweets (the
/// first ones in document order, which the API returns newest first).
///
/// Missing booleans default to false and a missing tweet list is empty, but
/// a missing count field is an error.
pub fn parse_account_with_cap(bytes: &[u8], tweet_cap: usize) -> Result<AccountRecord> {
    let raw: RawAccount = serde_json::from_slice(bytes).map_err(|e| IngestError::malformed(None, e))?;
    raw.into_record(tweet_cap)
}

/// Followers divided by friends. Zero friends with nonzero followers is
/// `f64::INFINITY`; 0/0 is 0.
pub fn tff_ratio(account: &AccountRecord) -> f64 {
    match (account.followers_count, account.friends_count) {
        (0, 0) => 0.0,
        (_, 0) => f64::INFINITY,
        (followers, friends) => followers as f64 / friends as f64,
    }
}

/// A collection of accounts with unique ids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    records: Vec<AccountRecord>,
    pub provenance: String,
}

impl Dataset {
    pub fn new(records: Vec<AccountRecord>, provenance: impl Into<String>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(records.len());
        for record in &records {
            if !seen.insert(record.account_id.as_str()) {
                return Err(IngestError::DuplicateAccountId(record.account_id.clone()));
            }
        }
        Ok(Dataset {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn empty(provenance: impl Into<String>) -> Self {
        Dataset {
            records: Vec::new(),
            provenance: provenance.into(),
        }
    }

    pub fn records(&self) -> &[AccountRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, account_id: &str) -> bool {
        self.records.iter().any(|r| r.account_id == account_id)
    }

    /// Appends a record, rejecting duplicate ids.
    pub fn push(&mut self, record: AccountRecord) -> Result<()> {
        if self.contains(&record.account_id) {
            return Err(IngestError::DuplicateAccountId(record.account_id));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn into_records(self) -> Vec<AccountRecord> {
        self.records
    }
}

/// Ids of accounts whose TFF ratio is at least `threshold`, highest ratio
/// first, ties broken by id.
pub fn flag_by_tff(dataset: &Dataset, threshold: f64) -> Result<Vec<String>> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(IngestError::InvalidThreshold(threshold));
    }
    let mut flagged: Vec<(f64, &str)> = dataset
        .records()
        .iter()
        .map(|r| (tff_ratio(r), r.account_id.as_str()))
        .filter(|(ratio, _)| *ratio >= threshold)
        .collect();
    flagged.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    Ok(flagged.into_iter().map(|(_, id)| id.to_string()).collect())
}

/// Seeded shuffle, then the first `train_size` records become the training
/// set and the rest the test set.
pub fn split(dataset: &Dataset, train_size: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if let Some(r) = dataset.records().iter().find(|r| r.label.is_none()) {
        return Err(IngestError::UnlabeledRecord(r.account_id.clone()));
    }
    if train_size > dataset.len() {
        return Err(IngestError::TrainSizeTooLarge {
            requested: train_size,
            available: dataset.len(),
        });
    }
    let mut records = dataset.records().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let test = records.split_off(train_size);
    let provenance = &dataset.provenance;
    Ok((
        Dataset {
            records,
            provenance: format!("{provenance} | split seed={seed} train"),
        },
        Dataset {
            records: test,
            provenance: format!("{provenance} | split seed={seed} test"),
        },
    ))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes a dataset as NDJSON into `writer`.
pub fn write_dataset<W: Write>(dataset: &Dataset, mut writer: W) -> std::io::Result<()> {
    for record in dataset.records() {
        serde_json::to_writer(&mut writer, record)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_dataset(dataset, BufWriter::new(file)).map_err(io_err(path))
}

/// Loads an NDJSON dataset. Blank lines are skipped; the first bad line
/// aborts the load with its 1-based line number.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_account(line.as_bytes()).map_err(|e| e.at_line(i + 1))?;
        records.push(record);
    }
    Dataset::new(records, path.display().to_string())
}
