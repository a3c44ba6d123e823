//! Review corpus ingestion.
//!
//! Reviews arrive as newline-delimited JSON, one review per line, with every
//! sentence carrying its own spoiler flag:
//!
//! ```json
//! {"book_id":"b1","user_id":"u1","review_id":"r1","rating":4,"has_spoiler":true,
//!  "review_sentences":[[0,"Fun read."],[1,"She dies."]],"timestamp":"2017-01-01"}
//! ```
//!
//! Malformed lines are skipped and reported, never fatal. Sentence flags are
//! authoritative; a review whose `has_spoiler` disagrees with its flags is
//! kept and counted.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One review record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReview {
    pub book_id: String,
    pub user_id: String,
    pub review_id: String,
    pub rating: u8,
    pub has_spoiler: bool,
    pub review_sentences: Vec<(u8, String)>,
    pub timestamp: String,
}

impl RawReview {
    pub fn n_spoiler_sentences(&self) -> usize {
        self.review_sentences.iter().filter(|(f, _)| *f == 1).count()
    }

    /// True when `has_spoiler` agrees with the sentence flags.
    pub fn flags_consistent(&self) -> bool {
        self.has_spoiler == (self.n_spoiler_sentences() > 0)
    }
}

/// Wire shape used for lenient deserialization; validated into [`RawReview`].
#[derive(Deserialize)]
struct ReviewLine {
    book_id: String,
    user_id: String,
    review_id: String,
    rating: i64,
    has_spoiler: bool,
    review_sentences: Vec<(i64, String)>,
    timestamp: String,
}

impl TryFrom<ReviewLine> for RawReview {
    type Error = String;

    fn try_from(line: ReviewLine) -> std::result::Result<Self, String> {
        if !(0..=5).contains(&line.rating) {
            return Err(format!("rating {} outside 0..=5", line.rating));
        }
        if line.review_sentences.is_empty() {
            return Err("review_sentences is empty".into());
        }
        let mut sentences = Vec::with_capacity(line.review_sentences.len());
        for (i, (flag, text)) in line.review_sentences.into_iter().enumerate() {
            match flag {
                0 | 1 => sentences.push((flag as u8, text)),
                other => return Err(format!("sentence {i} has flag {other}, expected 0 or 1")),
            }
        }
        Ok(RawReview {
            book_id: line.book_id,
            user_id: line.user_id,
            review_id: line.review_id,
            rating: line.rating as u8,
            has_spoiler: line.has_spoiler,
            review_sentences: sentences,
            timestamp: line.timestamp,
        })
    }
}

/// A line that could not be parsed. Line numbers are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedReviews {
    pub reviews: Vec<RawReview>,
    pub skipped: Vec<SkippedLine>,
    /// Reviews whose `has_spoiler` disagrees with their sentence flags.
    pub flag_mismatches: usize,
}

/// Reads newline-delimited JSON lines, yielding `(line_number, text)`;
/// blank lines are passed over silently. Lines that are not valid UTF-8 come
/// back as `Err` so the caller can record them as skips.
struct JsonLines<R> {
    reader: R,
    line_no: usize,
    buf: Vec<u8>,
}

impl<R: BufRead> JsonLines<R> {
    fn new(reader: R) -> Self {
        Self { reader, line_no: 0, buf: Vec::new() }
    }

    fn next_line(&mut self) -> Result<Option<(usize, std::result::Result<String, String>)>> {
        loop {
            self.buf.clear();
            if self.reader.read_until(b'\n', &mut self.buf)? == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            match std::str::from_utf8(&self.buf) {
                Ok(s) if s.trim().is_empty() => continue,
                Ok(s) => return Ok(Some((self.line_no, Ok(s.trim_end().to_owned())))),
                Err(e) => return Ok(Some((self.line_no, Err(format!("invalid utf-8: {e}"))))),
            }
        }
    }
}

/// Parses a reviews stream. `limit` caps the number of reviews kept.
pub fn parse_reviews<R: BufRead>(reader: R, limit: Option<usize>) -> Result<ParsedReviews> {
    let mut lines = JsonLines::new(reader);
    let mut out = ParsedReviews::default();
    while let Some((line, text)) = lines.next_line()? {
        if limit.is_some_and(|n| out.reviews.len() >= n) {
            break;
        }
        let parsed = text.and_then(|t| {
            serde_json::from_str::<ReviewLine>(&t)
                .map_err(|e| e.to_string())
                .and_then(RawReview::try_from)
        });
        match parsed {
            Ok(review) => {
                if !review.flags_consistent() {
                    out.flag_mismatches += 1;
                }
                out.reviews.push(review);
            }
            Err(reason) => {
                log::warn!("reviews line {line}: {reason}");
                out.skipped.push(SkippedLine { line, reason });
            }
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct TitleLine {
    book_id: String,
    title: String,
}

#[derive(Debug, Clone, Default)]
pub struct TitleMap {
    pub titles: HashMap<String, String>,
    /// Lines whose book_id was already present; the later title wins.
    pub duplicates: usize,
    pub skipped: Vec<SkippedLine>,
}

impl TitleMap {
    pub fn get(&self, book_id: &str) -> Option<&str> {
        self.titles.get(book_id).map(String::as_str)
    }
}

pub fn parse_titles<R: BufRead>(reader: R) -> Result<TitleMap> {
    let mut lines = JsonLines::new(reader);
    let mut out = TitleMap::default();
    while let Some((line, text)) = lines.next_line()? {
        match text.and_then(|t| serde_json::from_str::<TitleLine>(&t).map_err(|e| e.to_string())) {
            Ok(TitleLine { book_id, title }) => {
                if out.titles.insert(book_id, title).is_some() {
                    out.duplicates += 1;
                }
            }
            Err(reason) => {
                log::warn!("titles line {line}: {reason}");
                out.skipped.push(SkippedLine { line, reason });
            }
        }
    }
    Ok(out)
}

/// One flattened training sample.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceExample {
    pub book_id: String,
    pub review_id: String,
    /// Position of the sentence inside its review.
    pub sentence_index: usize,
    /// Empty when titles are omitted or unknown for the book.
    pub title: String,
    pub sentence: String,
    pub label: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TitlePolicy {
    #[default]
    Attach,
    Omit,
}

#[derive(Debug, Clone, Default)]
pub struct Flattened {
    pub examples: Vec<SentenceExample>,
    /// Sentences whose book had no title while attaching was requested.
    pub title_misses: usize,
}

/// One example per review sentence, in review order then sentence order.
pub fn flatten(reviews: &[RawReview], titles: &TitleMap, policy: TitlePolicy) -> Flattened {
    let mut out = Flattened::default();
    for review in reviews {
        let title = match policy {
            TitlePolicy::Omit => "",
            TitlePolicy::Attach => titles.get(&review.book_id).unwrap_or_else(|| {
                out.title_misses += review.review_sentences.len();
                ""
            }),
        };
        out.examples.extend(review.review_sentences.iter().enumerate().map(
            |(i, (flag, text))| SentenceExample {
                book_id: review.book_id.clone(),
                review_id: review.review_id.clone(),
                sentence_index: i,
                title: title.to_owned(),
                sentence: text.clone(),
                label: *flag == 1,
            },
        ));
    }
    out
}

/// Partition fractions for [`split`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(train: f64, validation: f64, test: f64) -> Result<Self> {
        let f = Self { train, validation, test };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::InvalidConfig(format!("split fractions must be positive, got {parts:?}")));
        }
        let sum: f64 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("split fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for SplitFractions {
    /// Roughly the 270k / 15k / 15k proportions of a full-size run.
    fn default() -> Self {
        Self { train: 0.9, validation: 0.05, test: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SentenceExample>,
    pub validation: Vec<SentenceExample>,
    pub test: Vec<SentenceExample>,
    pub seed: u64,
}

/// Review-level split. Reviews are shuffled with a seeded generator, then
/// assigned greedily: train until it reaches its sentence target, then
/// validation, then test takes the rest. Every partition receives at least
/// one review.
pub fn split(examples: &[SentenceExample], fractions: SplitFractions, seed: u64) -> Result<DatasetSplit> {
    fractions.validate()?;

    let mut group_of: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<&SentenceExample>> = Vec::new();
    for ex in examples {
        let g = *group_of.entry(ex.review_id.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(ex);
    }
    if groups.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "split needs at least 3 reviews, got {}",
            groups.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    groups.shuffle(&mut rng);

    let total = examples.len() as f64;
    let train_target = (fractions.train * total).round() as usize;
    let val_target = (fractions.validation * total).round() as usize;

    let mut out = DatasetSplit { train: vec![], validation: vec![], test: vec![], seed };
    let n_groups = groups.len();
    for (gi, group) in groups.into_iter().enumerate() {
        let remaining_after = n_groups - gi - 1;
        let dest = if out.train.is_empty()
            || (out.train.len() < train_target && remaining_after >= 2)
        {
            &mut out.train
        } else if out.validation.is_empty()
            || (out.validation.len() < val_target && remaining_after >= 1)
        {
            &mut out.validation
        } else {
            &mut out.test
        };
        dest.extend(group.into_iter().cloned());
    }
    Ok(out)
}

/// Exploratory statistics over a review collection. Lengths are counted in
/// Unicode code points; medians take the lower-middle element for even counts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_reviews: usize,
    pub n_unique_users: usize,
    pub n_unique_books: usize,
    pub reviews_per_user_mean: f64,
    pub reviews_per_user_median: f64,
    pub reviews_per_book_mean: f64,
    pub reviews_per_book_median: f64,
    pub n_sentences: usize,
    pub n_spoiler_sentences: usize,
    pub n_nonspoiler_sentences: usize,
    pub spoiler_len_mean: f64,
    pub spoiler_len_median: f64,
    pub nonspoiler_len_mean: f64,
    pub nonspoiler_len_median: f64,
}

impl CorpusStats {
    /// Share of sentences flagged as spoilers, 0 for an empty corpus.
    pub fn spoiler_fraction(&self) -> f64 {
        if self.n_sentences == 0 {
            0.0
        } else {
            self.n_spoiler_sentences as f64 / self.n_sentences as f64
        }
    }

    pub fn nonspoiler_fraction(&self) -> f64 {
        if self.n_sentences == 0 {
            0.0
        } else {
            self.n_nonspoiler_sentences as f64 / self.n_sentences as f64
        }
    }
}

fn mean(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().map(|&x| x as f64).sum::<f64>() / xs.len() as f64
    }
}

/// Lower-middle median; 0 for an empty slice.
fn lower_median(xs: &[usize]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut sorted = xs.to_vec();
    sorted.sort_unstable();
    sorted[(sorted.len() - 1) / 2] as f64
}

fn counts_per_key<'a>(keys: impl Iterator<Item = &'a str>) -> Vec<usize> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for k in keys {
        *counts.entry(k).or_default() += 1;
    }
    counts.into_values().collect()
}

pub fn compute_stats(reviews: &[RawReview]) -> CorpusStats {
    if reviews.is_empty() {
        return CorpusStats::default();
    }
    let per_user = counts_per_key(reviews.iter().map(|r| r.user_id.as_str()));
    let per_book = counts_per_key(reviews.iter().map(|r| r.book_id.as_str()));

    let mut spoiler_lens = Vec::new();
    let mut plain_lens = Vec::new();
    for (flag, text) in reviews.iter().flat_map(|r| &r.review_sentences) {
        let len = text.chars().count();
        if *flag == 1 {
            spoiler_lens.push(len);
        } else {
            plain_lens.push(len);
        }
    }

    CorpusStats {
        n_reviews: reviews.len(),
        n_unique_users: per_user.len(),
        n_unique_books: per_book.len(),
        reviews_per_user_mean: mean(&per_user),
        reviews_per_user_median: lower_median(&per_user),
        reviews_per_book_mean: mean(&per_book),
        reviews_per_book_median: lower_median(&per_book),
        n_sentences: spoiler_lens.len() + plain_lens.len(),
        n_spoiler_sentences: spoiler_lens.len(),
        n_nonspoiler_sentences: plain_lens.len(),
        spoiler_len_mean: mean(&spoiler_lens),
        spoiler_len_median: lower_median(&spoiler_lens),
        nonspoiler_len_mean: mean(&plain_lens),
        nonspoiler_len_median: lower_median(&plain_lens),
    }
}

/// Distinct review ids in a list of examples, in first-seen order.
pub fn review_ids(examples: &[SentenceExample]) -> Vec<&str> {
    let mut seen = HashSet::new();
    examples
        .iter()
        .map(|e| e.review_id.as_str())
        .filter(|id| seen.insert(*id))
        .collect()
}
