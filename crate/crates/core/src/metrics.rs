//! Skew-robust evaluation: midrank ROC AUC, confusion counts and reports.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::SentenceExample;
use crate::network::ModelParams;
use crate::textprep::Vocabulary;
use crate::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn class_counts(labels: &[bool]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&l| l).count();
    (pos, labels.len() - pos)
}

fn require_both_classes(context: &'static str, labels: &[bool]) -> Result<(usize, usize)> {
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass { context, n_pos, n_neg });
    }
    Ok((n_pos, n_neg))
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Mann-Whitney AUC with midranks for tied scores:
/// `(R_pos - P(P+1)/2) / (P N)` where `R_pos` is the positives' rank sum.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes("roc_auc", labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their average
        let midrank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum_pos += midrank * tied_pos as f64;
        i = j;
    }

    let p = n_pos as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n_neg as f64))
}

/// Quadratic pairwise AUC, the definition `roc_auc` must agree with.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes("auc_oracle", labels)?;
    let mut wins = 0.0;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| !l) {
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Predicted positive iff `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC curve from the strictest threshold down, one point per distinct
/// score, starting at (0, 0) and ending at (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = require_both_classes("roc_curve", labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push(RocPoint { fpr: fp as f64 / n_neg as f64, tpr: tp as f64 / n_pos as f64 });
        i = j;
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// 0 when nothing was predicted positive; see `precision_defined`.
    pub precision: f64,
    pub precision_defined: bool,
    pub recall: f64,
    pub recall_defined: bool,
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        let auc = roc_auc(scores, labels)?;
        let (n_pos, n_neg) = class_counts(labels);
        let c = confusion(scores, labels, threshold);
        let predicted_pos = c.tp + c.fp;
        let precision_defined = predicted_pos > 0;
        let recall_defined = n_pos > 0;
        Ok(Self {
            auc,
            n_pos,
            n_neg,
            threshold,
            tp: c.tp,
            fp: c.fp,
            tn: c.tn,
            fn_: c.fn_,
            precision: if precision_defined { c.tp as f64 / predicted_pos as f64 } else { 0.0 },
            precision_defined,
            recall: if recall_defined { c.tp as f64 / n_pos as f64 } else { 0.0 },
            recall_defined,
            roc: roc_curve(scores, labels)?,
        })
    }
}

/// Scores every example with the network in eval mode.
pub fn evaluate(params: &ModelParams, vocab: &Vocabulary, examples: &[SentenceExample]) -> Result<EvalReport> {
    let labels: Vec<bool> = examples.iter().map(|e| e.label).collect();
    require_both_classes("evaluate", &labels)?;
    let scores = crate::trainer::score_examples(params, vocab, examples)?;
    EvalReport::from_scores(&scores, &labels, DEFAULT_THRESHOLD)
}
