//! Seeded mini-batch training with best-epoch selection and checkpoints.
//!
//! All randomness derives from `TrainConfig::seed`:
//!
//! * parameter init uses the seed itself,
//! * epoch `k` (0-based) shuffles with `seed + k`,
//! * each example's dropout mask is seeded from `(seed, k, example index)`.
//!
//! Per-example forward/backward passes run in parallel; their gradients are
//! reduced in example-index order so results do not depend on scheduling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{DatasetSplit, SentenceExample};
use crate::metrics::roc_auc;
use crate::network::{
    adam_step, backward, bce_with_logits, forward, init_params, sigmoid, AdamConfig, AdamState, Mode,
    ModelParams, NetworkConfig, Tensor, Weights,
};
use crate::textprep::{EncoderConfig, TokenSequence, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub network: NetworkConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            epochs: 5,
            lr: 0.003,
            seed: 0,
            network: NetworkConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and epochs must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.lr)));
        }
        self.network.validate()?;
        self.encoder.validate()?;
        if self.network.vocab_size != self.encoder.vocab_size || self.network.max_len != self.encoder.max_len {
            return Err(Error::InvalidConfig(format!(
                "network (vocab_size {}, max_len {}) disagrees with encoder (vocab_size {}, max_len {})",
                self.network.vocab_size, self.network.max_len, self.encoder.vocab_size, self.encoder.max_len
            )));
        }
        Ok(())
    }

    /// Copies the vocabulary's encoder settings into both sub-configs.
    pub fn with_encoder(mut self, encoder: EncoderConfig) -> Self {
        self.encoder = encoder;
        self.network.vocab_size = encoder.vocab_size;
        self.network.max_len = encoder.max_len;
        self
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch, measured before each batch update.
    pub loss: f64,
    pub val_auc: f64,
    pub secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub n_train: usize,
    pub n_validation: usize,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// One JSON object per epoch: `{"epoch":k,"loss":x,"val_auc":y,"secs":t}`.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut writer, e)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Shuffled index batches for one epoch; the last batch may be short.
pub fn make_batches(n_examples: usize, batch_size: usize, epoch_seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_examples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn dropout_seed(seed: u64, epoch: usize, example: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ epoch as u64) ^ example as u64)
}

#[derive(Debug, Clone)]
struct Encoded {
    seq: TokenSequence,
    label: bool,
}

fn encode_all(vocab: &Vocabulary, examples: &[SentenceExample]) -> Vec<Encoded> {
    examples
        .par_iter()
        .map(|e| Encoded { seq: vocab.encode(&e.title, &e.sentence).or_oov(), label: e.label })
        .collect()
}

fn score_encoded(params: &ModelParams, data: &[Encoded]) -> Result<Vec<f64>> {
    data.par_iter()
        .map(|e| forward(params, &e.seq, Mode::Eval).map(|(z, _)| sigmoid(z)))
        .collect()
}

/// Spoiler probabilities for each example in eval mode.
pub fn score_examples(params: &ModelParams, vocab: &Vocabulary, examples: &[SentenceExample]) -> Result<Vec<f64>> {
    score_encoded(params, &encode_all(vocab, examples))
}

/// Probability that `sentence` (read with its book `title`) is a spoiler.
/// Text with no tokens is scored as a single OOV token.
pub fn predict(params: &ModelParams, vocab: &Vocabulary, title: &str, sentence: &str) -> Result<f64> {
    let seq = vocab.encode(title, sentence).or_oov();
    let (z, _) = forward(params, &seq, Mode::Eval)?;
    Ok(sigmoid(z))
}

/// Training state beyond the raw parameters, carried in checkpoints so a
/// resumed run ends exactly where an uninterrupted one would.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainProgress {
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub best_weights: Weights,
    pub history: Vec<EpochLog>,
}

pub struct Trainer {
    config: TrainConfig,
    train: Vec<Encoded>,
    validation: Vec<Encoded>,
    params: ModelParams,
    adam: AdamState,
    progress: Option<TrainProgress>,
}

impl Trainer {
    pub fn new(config: TrainConfig, split: &DatasetSplit, vocab: &Vocabulary) -> Result<Self> {
        let params = init_params(&config.network, config.seed)?;
        let adam = AdamState::new(&params);
        Self::assemble(config, split, vocab, params, adam, None)
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, split: &DatasetSplit, vocab: &Vocabulary, ckpt: Checkpoint) -> Result<Self> {
        if ckpt.params.config != config.network {
            return Err(Error::InvalidConfig("checkpoint network config differs from training config".into()));
        }
        let adam = ckpt.adam.unwrap_or_else(|| AdamState::new(&ckpt.params));
        Self::assemble(config, split, vocab, ckpt.params, adam, ckpt.progress)
    }

    fn assemble(
        config: TrainConfig,
        split: &DatasetSplit,
        vocab: &Vocabulary,
        params: ModelParams,
        adam: AdamState,
        progress: Option<TrainProgress>,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.config() != config.encoder {
            return Err(Error::InvalidConfig(format!(
                "vocabulary encoder {:?} differs from training encoder {:?}",
                vocab.config(),
                config.encoder
            )));
        }
        if split.train.is_empty() {
            return Err(Error::InsufficientData("training partition is empty".into()));
        }
        let n_pos = split.validation.iter().filter(|e| e.label).count();
        let n_neg = split.validation.len() - n_pos;
        if n_pos == 0 || n_neg == 0 {
            return Err(Error::SingleClass { context: "validation partition", n_pos, n_neg });
        }
        Ok(Self {
            train: encode_all(vocab, &split.train),
            validation: encode_all(vocab, &split.validation),
            config,
            params,
            adam,
            progress,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epochs_completed(&self) -> usize {
        self.progress.as_ref().map_or(0, |p| p.epochs_completed)
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_completed() >= self.config.epochs
    }

    /// Runs the next epoch: shuffled batches, one Adam step per batch, then
    /// validation AUC in eval mode.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let started = Instant::now();
        let epoch = self.epochs_completed();
        let seed = self.config.seed;
        let hp = self.config.adam();

        let mut loss_sum = 0.0;
        for batch in make_batches(self.train.len(), self.config.batch_size, seed.wrapping_add(epoch as u64)) {
            let params = &self.params;
            let train = &self.train;
            let results: Vec<_> = batch
                .par_iter()
                .map(|&i| {
                    let ex = &train[i];
                    let (z, cache) = forward(params, &ex.seq, Mode::Train { seed: dropout_seed(seed, epoch, i) })?;
                    Ok((bce_with_logits(z, ex.label), backward(params, &cache, ex.label)?))
                })
                .collect::<Result<_>>()?;

            let scale = 1.0 / batch.len() as f64;
            let mut grad = Weights::zeros(&self.params.config);
            for (loss, g) in &results {
                loss_sum += loss;
                g.add_scaled_into(&mut grad, scale);
            }
            adam_step(&mut self.params, &grad, &mut self.adam, &hp)?;
        }

        let labels: Vec<bool> = self.validation.iter().map(|e| e.label).collect();
        let val_auc = roc_auc(&score_encoded(&self.params, &self.validation)?, &labels)?;
        let log = EpochLog {
            epoch: epoch + 1,
            loss: loss_sum / self.train.len() as f64,
            val_auc,
            secs: started.elapsed().as_secs_f64(),
        };
        log::info!("epoch {} loss {:.6} val_auc {:.6} ({:.1}s)", log.epoch, log.loss, log.val_auc, log.secs);

        let improved = self.progress.as_ref().is_none_or(|p| val_auc > p.best_val_auc);
        let progress = self.progress.get_or_insert_with(|| TrainProgress {
            epochs_completed: 0,
            best_epoch: 0,
            best_val_auc: f64::NEG_INFINITY,
            best_weights: self.params.weights.clone(),
            history: Vec::new(),
        });
        if improved {
            progress.best_epoch = epoch + 1;
            progress.best_val_auc = val_auc;
            progress.best_weights = self.params.weights.clone();
        }
        progress.epochs_completed = epoch + 1;
        progress.history.push(log.clone());
        Ok(log)
    }

    /// Current state, including optimizer moments and best-epoch tracking.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { params: self.params.clone(), adam: Some(self.adam.clone()), progress: self.progress.clone() }
    }

    /// Best-validation parameters and the full log.
    pub fn finish(self) -> (ModelParams, TrainLog) {
        let log = TrainLog {
            seed: self.config.seed,
            n_train: self.train.len(),
            n_validation: self.validation.len(),
            epochs: self.progress.as_ref().map(|p| p.history.clone()).unwrap_or_default(),
        };
        let params = match self.progress {
            Some(p) => ModelParams { config: self.params.config, weights: p.best_weights },
            None => self.params,
        };
        (params, log)
    }
}

/// Trains for `config.epochs` epochs and returns the parameters with the
/// best validation AUC.
pub fn train(config: &TrainConfig, split: &DatasetSplit, vocab: &Vocabulary) -> Result<(ModelParams, TrainLog)> {
    let mut trainer = Trainer::new(*config, split, vocab)?;
    while !trainer.is_finished() {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}

const CHECKPOINT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub progress: Option<TrainProgress>,
}

#[derive(Serialize, Deserialize)]
struct TensorJson {
    shape: Vec<usize>,
    data: Vec<f64>,
}

type TensorMap = BTreeMap<String, TensorJson>;

#[derive(Serialize, Deserialize)]
struct AdamJson {
    m: TensorMap,
    v: TensorMap,
}

#[derive(Serialize, Deserialize)]
struct ProgressJson {
    epochs_completed: usize,
    best_epoch: usize,
    best_val_auc: f64,
    best_tensors: TensorMap,
    history: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointJson {
    version: u64,
    config: NetworkConfig,
    tensors: TensorMap,
    #[serde(default)]
    adam: Option<AdamJson>,
    step: u64,
    #[serde(default)]
    progress: Option<ProgressJson>,
}

fn to_map(w: &Weights) -> TensorMap {
    w.tensors()
        .into_iter()
        .map(|(name, t)| (name, TensorJson { shape: t.shape().to_vec(), data: t.data().to_vec() }))
        .collect()
}

fn from_map(config: &NetworkConfig, mut map: TensorMap) -> Result<Weights> {
    let mut w = Weights::zeros(config);
    for (name, slot) in w.tensors_mut() {
        let t = map.remove(&name).ok_or_else(|| Error::ShapeMismatch {
            name: name.clone(),
            expected: slot.shape().to_vec(),
            found: vec![],
        })?;
        if t.shape != slot.shape() {
            return Err(Error::ShapeMismatch { name, expected: slot.shape().to_vec(), found: t.shape });
        }
        *slot = Tensor::from_vec(&t.shape, t.data).map_err(|_| Error::ShapeMismatch {
            name: name.clone(),
            expected: slot.shape().to_vec(),
            found: vec![],
        })?;
        if slot.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig(format!("tensor `{name}` holds non-finite values")));
        }
    }
    if let Some(extra) = map.keys().next() {
        return Err(Error::ShapeMismatch { name: extra.clone(), expected: vec![], found: vec![] });
    }
    Ok(w)
}

impl Checkpoint {
    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        let json = CheckpointJson {
            version: CHECKPOINT_VERSION,
            config: self.params.config,
            tensors: to_map(&self.params.weights),
            adam: self.adam.as_ref().map(|a| AdamJson { m: to_map(&a.m), v: to_map(&a.v) }),
            step: self.adam.as_ref().map_or(0, |a| a.t),
            progress: self.progress.as_ref().map(|p| ProgressJson {
                epochs_completed: p.epochs_completed,
                best_epoch: p.best_epoch,
                best_val_auc: p.best_val_auc,
                best_tensors: to_map(&p.best_weights),
                history: p.history.clone(),
            }),
        };
        serde_json::to_writer(writer, &json)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self> {
        let json: CheckpointJson = serde_json::from_reader(reader)?;
        if json.version != CHECKPOINT_VERSION {
            return Err(Error::Version { what: "checkpoint", found: json.version, expected: CHECKPOINT_VERSION });
        }
        json.config.validate()?;
        let config = json.config;
        let params = ModelParams { config, weights: from_map(&config, json.tensors)? };
        let adam = json
            .adam
            .map(|a| -> Result<AdamState> {
                Ok(AdamState { m: from_map(&config, a.m)?, v: from_map(&config, a.v)?, t: json.step })
            })
            .transpose()?;
        let progress = json
            .progress
            .map(|p| -> Result<TrainProgress> {
                Ok(TrainProgress {
                    epochs_completed: p.epochs_completed,
                    best_epoch: p.best_epoch,
                    best_val_auc: p.best_val_auc,
                    best_weights: from_map(&config, p.best_tensors)?,
                    history: p.history,
                })
            })
            .transpose()?;
        Ok(Self { params, adam, progress })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(Error::io_at(path))?);
        self.write_json(&mut w)?;
        w.flush().map_err(Error::io_at(path))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read_json(BufReader::new(File::open(path).map_err(Error::io_at(path))?))
    }
}

pub fn save_checkpoint(params: &ModelParams, adam: Option<&AdamState>, path: impl AsRef<Path>) -> Result<()> {
    Checkpoint { params: params.clone(), adam: adam.cloned(), progress: None }.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
