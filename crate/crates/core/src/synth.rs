//! Skewed synthetic review corpora with planted spoiler tokens.
//!
//! Every sentence gets a [`SentenceKind`]:
//!
//! * `Plain` filler and `NameMention` (a character name, no plot token) are
//!   negatives.
//! * `Planted` sentences carry one of the first four plot tokens and are
//!   positive for every book.
//! * `TitleMatched` sentences carry [`CONTEXT_TOKEN`] in a review of a book
//!   whose title holds one of [`SPOILED_TITLE_WORDS`], and are positive.
//! * `WrongTitle` decoys carry [`CONTEXT_TOKEN`] in a review of any other
//!   book, and are negative.
//!
//! The last two form the context-dependent slice: the sentence text alone
//! cannot tell them apart, the title can.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{RawReview, SentenceExample, TitleMap};

pub const PLOT_TOKENS: [&str; 5] = ["murdered", "betrayal", "secretly", "revealed", "survives"];
/// Spoiler only for books whose title holds a [`SPOILED_TITLE_WORDS`] entry.
pub const CONTEXT_TOKEN: &str = PLOT_TOKENS[4];
pub const SPOILED_TITLE_WORDS: [&str; 2] = ["shadow", "river"];
const NAMES: [&str; 5] = ["arlen", "brisa", "corvin", "delia", "emrys"];
const TITLE_WORDS: [&str; 5] = ["shadow", "crown", "river", "ember", "glass"];
const FILLER: [&str; 60] = [
    "the", "a", "book", "story", "really", "liked", "writing", "pace", "slow", "fast", "chapter", "world",
    "characters", "plot", "felt", "was", "is", "and", "but", "very", "quite", "enjoyed", "read", "series",
    "author", "style", "good", "great", "boring", "fun", "long", "short", "middle", "start", "end", "part",
    "loved", "hated", "okay", "fine", "some", "many", "scenes", "dialogue", "setting", "magic", "town", "war",
    "family", "friends", "journey", "tone", "voice", "prose", "cover", "recommend", "others", "again", "i", "it",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SentenceKind {
    Plain,
    NameMention,
    Planted,
    TitleMatched,
    WrongTitle,
}

impl SentenceKind {
    pub fn is_spoiler(self) -> bool {
        matches!(self, SentenceKind::Planted | SentenceKind::TitleMatched)
    }

    pub fn is_context_dependent(self) -> bool {
        matches!(self, SentenceKind::TitleMatched | SentenceKind::WrongTitle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_sentences: usize,
    pub positive_rate: f64,
    /// Share of positives that need the title to be recognized.
    pub context_share: f64,
    /// Wrong-title decoys per title-matched positive.
    pub decoys_per_context: f64,
    /// Share of negatives mentioning a character name without a plot token.
    pub name_mention_rate: f64,
    pub n_users: usize,
    pub max_review_sentences: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sentences: 10_000,
            positive_rate: 0.03,
            context_share: 0.3,
            decoys_per_context: 2.0,
            name_mention_rate: 0.15,
            n_users: 400,
            max_review_sentences: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub reviews: Vec<RawReview>,
    /// `(book_id, title)` pairs.
    pub titles: Vec<(String, String)>,
    kinds: HashMap<(String, usize), SentenceKind>,
}

impl SynthCorpus {
    pub fn title_map(&self) -> TitleMap {
        TitleMap { titles: self.titles.iter().cloned().collect(), ..TitleMap::default() }
    }

    pub fn kind_of(&self, example: &SentenceExample) -> Option<SentenceKind> {
        self.kinds.get(&(example.review_id.clone(), example.sentence_index)).copied()
    }

    pub fn reviews_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.reviews {
            let _ = writeln!(out, "{}", serde_json::to_string(r).expect("review serializes"));
        }
        out
    }

    pub fn titles_jsonl(&self) -> String {
        let mut out = String::new();
        for (book_id, title) in &self.titles {
            let line = serde_json::json!({ "book_id": book_id, "title": title });
            let _ = writeln!(out, "{line}");
        }
        out
    }
}

fn capitalize(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn sentence(rng: &mut ChaCha8Rng, special: &[&str]) -> String {
    let n_filler = rng.gen_range(4..=10);
    let mut words: Vec<String> = (0..n_filler).map(|_| FILLER.choose(rng).unwrap().to_string()).collect();
    for s in special {
        let at = rng.gen_range(0..=words.len());
        words.insert(at, s.to_string());
    }
    for w in words.iter_mut().filter(|w| NAMES.contains(&w.as_str())) {
        *w = capitalize(w);
    }
    words[0] = capitalize(&words[0]);
    format!("{}.", words.join(" "))
}

pub fn generate(config: &SynthConfig) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.n_sentences;
    let n_pos = (config.positive_rate * n as f64).round() as usize;
    let n_context = (config.context_share * n_pos as f64).round() as usize;
    let n_decoy = (config.decoys_per_context * n_context as f64).round() as usize;
    let n_names = (config.name_mention_rate * (n - n_pos) as f64).round() as usize;

    let mut kinds = Vec::with_capacity(n);
    kinds.extend(std::iter::repeat_n(SentenceKind::TitleMatched, n_context));
    kinds.extend(std::iter::repeat_n(SentenceKind::Planted, n_pos - n_context));
    kinds.extend(std::iter::repeat_n(SentenceKind::WrongTitle, n_decoy));
    kinds.extend(std::iter::repeat_n(SentenceKind::NameMention, n_names));
    kinds.resize(n, SentenceKind::Plain);
    kinds.shuffle(&mut rng);

    let titles: Vec<(String, String)> = NAMES
        .iter()
        .zip(TITLE_WORDS)
        .enumerate()
        .map(|(b, (name, word))| (format!("book{b}"), format!("The {} of {}", capitalize(word), capitalize(name))))
        .collect();

    let spoiled: Vec<usize> = (0..NAMES.len()).filter(|&b| SPOILED_TITLE_WORDS.contains(&TITLE_WORDS[b])).collect();
    let unspoiled: Vec<usize> = (0..NAMES.len()).filter(|b| !spoiled.contains(b)).collect();

    let mut reviews = Vec::new();
    let mut kind_map = HashMap::with_capacity(n);
    let mut rest = &kinds[..];
    while !rest.is_empty() {
        let mut size = rng.gen_range(1..=config.max_review_sentences).min(rest.len());
        // a review cannot hold both a title-matched positive and a decoy
        let first_ctx = rest[..size].iter().find(|k| k.is_context_dependent()).copied();
        if let Some(first) = first_ctx {
            size = rest[..size].iter().position(|k| k.is_context_dependent() && *k != first).unwrap_or(size);
        }
        let (chunk, tail) = rest.split_at(size);
        rest = tail;

        let book = match first_ctx {
            Some(SentenceKind::TitleMatched) => *spoiled.choose(&mut rng).unwrap(),
            Some(_) => *unspoiled.choose(&mut rng).unwrap(),
            None => rng.gen_range(0..NAMES.len()),
        };
        let review_id = format!("r{:05}", reviews.len());
        let mut sentences = Vec::with_capacity(size);
        for (i, &kind) in chunk.iter().enumerate() {
            let text = match kind {
                SentenceKind::Plain => sentence(&mut rng, &[]),
                SentenceKind::NameMention => {
                    let name = *NAMES.choose(&mut rng).unwrap();
                    sentence(&mut rng, &[name])
                }
                SentenceKind::Planted => {
                    let plot = *PLOT_TOKENS[..4].choose(&mut rng).unwrap();
                    sentence(&mut rng, &[plot])
                }
                SentenceKind::TitleMatched | SentenceKind::WrongTitle => sentence(&mut rng, &[CONTEXT_TOKEN]),
            };
            sentences.push((kind.is_spoiler() as u8, text));
            kind_map.insert((review_id.clone(), i), kind);
        }
        reviews.push(RawReview {
            book_id: format!("book{book}"),
            user_id: format!("u{}", rng.gen_range(0..config.n_users)),
            has_spoiler: sentences.iter().any(|(f, _)| *f == 1),
            review_id,
            rating: rng.gen_range(1..=5),
            review_sentences: sentences,
            timestamp: "2017-01-01".into(),
        });
    }

    SynthCorpus { reviews, titles, kinds: kind_map }
}
