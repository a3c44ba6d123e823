//! DF-IIF word specificity and a logistic baseline over handcrafted
//! sentence features.
//!
//! For a word `w` and a book (item) `i`, with one review as one document:
//!
//! ```text
//! DF(w, i)    = docs of i containing w / docs of i
//! IIF(w)      = ln(n_items / items containing w)
//! DFIIF(w, i) = DF(w, i) * IIF(w)
//! ```
//!
//! Words frequent in one book's reviews but rare across books score high.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::SentenceExample;
use crate::metrics::roc_auc;
use crate::network::{bce_with_logits, sigmoid};
use crate::textprep::normalize;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DfIifTable {
    n_items: usize,
    item_doc_counts: HashMap<String, usize>,
    /// word -> book -> document frequency in (0, 1]
    df: HashMap<String, HashMap<String, f64>>,
    iif: HashMap<String, f64>,
}

impl DfIifTable {
    /// Builds the table from `(book_id, document text)` pairs.
    pub fn from_documents<I, B, T>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (B, T)>,
        B: Into<String>,
        T: AsRef<str>,
    {
        let mut item_doc_counts: HashMap<String, usize> = HashMap::new();
        let mut containing: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for (book, text) in docs {
            let book = book.into();
            *item_doc_counts.entry(book.clone()).or_default() += 1;
            let words: HashSet<String> = normalize(text.as_ref()).into_iter().collect();
            for w in words {
                *containing.entry(w).or_default().entry(book.clone()).or_default() += 1;
            }
        }
        let n_items = item_doc_counts.len();
        if n_items == 0 {
            return Err(Error::InsufficientData("DF-IIF needs at least one book".into()));
        }

        let mut df = HashMap::with_capacity(containing.len());
        let mut iif = HashMap::with_capacity(containing.len());
        for (word, per_book) in containing {
            iif.insert(word.clone(), (n_items as f64 / per_book.len() as f64).ln());
            let fractions = per_book
                .into_iter()
                .map(|(book, n)| {
                    let total = item_doc_counts[&book] as f64;
                    (book, n as f64 / total)
                })
                .collect();
            df.insert(word, fractions);
        }
        Ok(Self { n_items, item_doc_counts, df, iif })
    }

    /// Treats every review in `examples` as one document: its sentences,
    /// joined, without the title.
    pub fn from_examples(examples: &[SentenceExample]) -> Result<Self> {
        Self::from_documents(review_documents(examples))
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn item_doc_count(&self, book: &str) -> usize {
        self.item_doc_counts.get(book).copied().unwrap_or(0)
    }

    /// 0 when the word never appears in the book's documents.
    pub fn df(&self, word: &str, book: &str) -> f64 {
        self.df.get(word).and_then(|m| m.get(book)).copied().unwrap_or(0.0)
    }

    /// `None` for words unseen during construction.
    pub fn iif(&self, word: &str) -> Option<f64> {
        self.iif.get(word).copied()
    }

    pub fn dfiif(&self, word: &str, book: &str) -> f64 {
        self.df(word, book) * self.iif(word).unwrap_or(0.0)
    }

    #[cfg(test)]
    pub(crate) fn df_entries(&self) -> impl Iterator<Item = (&str, &str, f64)> {
        self.df
            .iter()
            .flat_map(|(w, m)| m.iter().map(move |(b, &v)| (w.as_str(), b.as_str(), v)))
    }
}

/// Concatenated sentences per review, keyed by book, in first-seen order.
pub fn review_documents(examples: &[SentenceExample]) -> Vec<(String, String)> {
    let mut order: Vec<(String, String)> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for e in examples {
        let slot = *index.entry(e.review_id.as_str()).or_insert_with(|| {
            order.push((e.book_id.clone(), String::new()));
            order.len() - 1
        });
        let doc = &mut order[slot].1;
        if !doc.is_empty() {
            doc.push(' ');
        }
        doc.push_str(&e.sentence);
    }
    order
}

pub const FEATURE_NAMES: [&str; 5] = ["max_dfiif", "mean_dfiif", "char_len", "token_count", "title_overlap"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_dfiif: f64,
    pub mean_dfiif: f64,
    /// Code points / 100.
    pub char_len: f64,
    /// Tokens / 10.
    pub token_count: f64,
    /// Distinct normalized tokens shared by title and sentence.
    pub title_overlap: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 5] {
        [self.max_dfiif, self.mean_dfiif, self.char_len, self.token_count, self.title_overlap]
    }
}

pub fn featurize(table: &DfIifTable, example: &SentenceExample) -> FeatureVector {
    let tokens = normalize(&example.sentence);
    let scores: Vec<f64> = tokens.iter().map(|t| table.dfiif(t, &example.book_id)).collect();
    let max_dfiif = scores.iter().copied().fold(0.0, f64::max);
    let mean_dfiif = if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 };
    let title: HashSet<String> = normalize(&example.title).into_iter().collect();
    let sentence: HashSet<&String> = tokens.iter().collect();
    FeatureVector {
        max_dfiif,
        mean_dfiif,
        char_len: example.sentence.chars().count() as f64 / 100.0,
        token_count: tokens.len() as f64 / 10.0,
        title_overlap: sentence.iter().filter(|t| title.contains(t.as_str())).count() as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl BaselineModel {
    pub fn zeros() -> Self {
        Self { weights: vec![0.0; FEATURE_NAMES.len()], bias: 0.0 }
    }

    fn logit(&self, x: &FeatureVector) -> f64 {
        self.bias + self.weights.iter().zip(x.as_array()).map(|(w, v)| w * v).sum::<f64>()
    }

    /// JSON `{"version":1,"weights":[...],"bias":x,"feature_names":[...]}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "version": 1,
            "weights": self.weights,
            "bias": self.bias,
            "feature_names": FEATURE_NAMES,
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct File {
            version: u64,
            weights: Vec<f64>,
            bias: f64,
        }
        let f: File = serde_json::from_value(value.clone())?;
        if f.version != 1 {
            return Err(Error::Version { what: "baseline model", found: f.version, expected: 1 });
        }
        if f.weights.len() != FEATURE_NAMES.len() {
            return Err(Error::ShapeMismatch {
                name: "baseline weights".into(),
                expected: vec![FEATURE_NAMES.len()],
                found: vec![f.weights.len()],
            });
        }
        Ok(Self { weights: f.weights, bias: f.bias })
    }
}

pub fn predict_baseline(model: &BaselineModel, x: &FeatureVector) -> f64 {
    sigmoid(model.logit(x))
}

pub fn baseline_loss(model: &BaselineModel, features: &[FeatureVector], labels: &[bool]) -> f64 {
    features.iter().zip(labels).map(|(x, &y)| bce_with_logits(model.logit(x), y)).sum::<f64>()
        / features.len() as f64
}

/// Full-batch gradient descent on mean logistic loss from a zero start.
/// Returns the model and its final training loss.
pub fn train_baseline(
    features: &[FeatureVector],
    labels: &[bool],
    lr: f64,
    epochs: usize,
) -> Result<(BaselineModel, f64)> {
    if features.len() != labels.len() {
        return Err(Error::InvalidConfig(format!("{} feature rows for {} labels", features.len(), labels.len())));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { context: "train_baseline", n_pos, n_neg });
    }

    let mut model = BaselineModel::zeros();
    let n = features.len() as f64;
    for _ in 0..epochs {
        let mut gw = [0.0; 5];
        let mut gb = 0.0;
        for (x, &y) in features.iter().zip(labels) {
            let d = sigmoid(model.logit(x)) - if y { 1.0 } else { 0.0 };
            for (g, v) in gw.iter_mut().zip(x.as_array()) {
                *g += d * v;
            }
            gb += d;
        }
        for (w, g) in model.weights.iter_mut().zip(gw) {
            *w -= lr * g / n;
        }
        model.bias -= lr * gb / n;
    }
    let loss = baseline_loss(&model, features, labels);
    Ok((model, loss))
}

pub const BASELINE_LR: f64 = 0.5;
pub const BASELINE_EPOCHS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub model: BaselineModel,
    pub train_loss: f64,
    pub train_auc: f64,
    pub test_scores: Vec<f64>,
}

/// Fits the table and the logistic model on `train`, then scores `test`.
pub fn run_baseline(train: &[SentenceExample], test: &[SentenceExample]) -> Result<BaselineOutcome> {
    let table = DfIifTable::from_examples(train)?;
    let xs: Vec<FeatureVector> = train.iter().map(|e| featurize(&table, e)).collect();
    let ys: Vec<bool> = train.iter().map(|e| e.label).collect();
    let (model, train_loss) = train_baseline(&xs, &ys, BASELINE_LR, BASELINE_EPOCHS)?;
    let train_scores: Vec<f64> = xs.iter().map(|x| predict_baseline(&model, x)).collect();
    let train_auc = roc_auc(&train_scores, &ys)?;
    let test_scores = test.iter().map(|e| predict_baseline(&model, &featurize(&table, e))).collect();
    Ok(BaselineOutcome { model, train_loss, train_auc, test_scores })
}
