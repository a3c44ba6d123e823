//! The `spoiler` command line tool.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 runtime failure (training diverged, output could not be written).

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    compute_stats, flatten, parse_reviews, parse_titles, split, DatasetSplit, SentenceExample, SplitFractions,
    TitleMap, TitlePolicy,
};
use crate::features::run_baseline;
use crate::metrics::{evaluate, EvalReport, DEFAULT_THRESHOLD};
use crate::textprep::{normalize, EncoderConfig, Vocabulary};
use crate::trainer::{load_checkpoint, predict, save_checkpoint, TrainConfig, Trainer};
use crate::Error;

#[derive(Debug, Parser)]
#[command(name = "spoiler", version, about = "Sentence-level spoiler detection for book reviews")]
struct Cli {
    /// Zero out wall-clock timings so repeated runs write identical files.
    #[arg(long, global = true)]
    deterministic: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus statistics as JSON.
    Stats {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a vocabulary from the training partition.
    BuildVocab {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 8000)]
        vocab_size: usize,
        #[arg(long, default_value_t = 600)]
        max_len: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Train the LSTM and write the best-validation checkpoint.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        vocab: PathBuf,
        /// JSON training configuration; missing fields take defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_checkpoint: PathBuf,
        /// Per-epoch JSON lines.
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Score one partition and write an evaluation report.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, value_enum, default_value_t = Partition::Test)]
        split: Partition,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        seed: u64,
    },
    /// Score `{"title","sentence"}` lines.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the DF-IIF logistic baseline and report its test AUC.
    Baseline {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    reviews: PathBuf,
    /// Book titles; sentences are read without titles when absent.
    #[arg(long)]
    titles: Option<PathBuf>,
    /// Read at most this many reviews.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Partition {
    Train,
    Validation,
    Test,
}

enum Failure {
    Data(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteGradient(_) | Error::CacheMismatch(_) => Failure::Runtime(e),
            e => Failure::Data(e),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(Failure::Data(Error::InvalidConfig(msg))) => {
            eprintln!("error: invalid configuration: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            3
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Stats { data, out } => {
            let (reviews, _) = load_reviews(&data)?;
            write_json(&out, &compute_stats(&reviews))
        }
        Command::BuildVocab { data, vocab_size, max_len, out, seed } => {
            let config = EncoderConfig { vocab_size, max_len };
            config.validate()?;
            let split = load_split(&data, seed)?;
            let vocab = Vocabulary::build(
                split.train.iter().map(|e| normalize(&e.title).into_iter().chain(normalize(&e.sentence))),
                config,
            )?;
            log::info!("vocabulary: {} words from {} training sentences", vocab.words().len(), split.train.len());
            write_with(&out, |w| vocab.write_json(w))
        }
        Command::Train { data, vocab, config, out_checkpoint, log: log_path, seed } => {
            let vocab = read_vocab(&vocab)?;
            let text = std::fs::read_to_string(&config).map_err(Error::io_at(&config))?;
            let mut config: TrainConfig = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidConfig(format!("{}: {e}", config.display())))?;
            config.seed = seed;
            let config = config.with_encoder(vocab.config());
            let split = load_split(&data, seed)?;

            let mut trainer = Trainer::new(config, &split, &vocab)?;
            while !trainer.is_finished() {
                trainer.run_epoch().map_err(Failure::Runtime)?;
            }
            let (params, mut train_log) = trainer.finish();
            if cli.deterministic {
                train_log.epochs.iter_mut().for_each(|e| e.secs = 0.0);
            }
            save_checkpoint(&params, None, &out_checkpoint).map_err(Failure::Runtime)?;
            write_with(&log_path, |w| train_log.write_jsonl(w))
        }
        Command::Evaluate { data, checkpoint, vocab, split: part, report, seed } => {
            let params = load_checkpoint(&checkpoint)?.params;
            let vocab = read_vocab(&vocab)?;
            let split = load_split(&data, seed)?;
            let examples = match part {
                Partition::Train => &split.train,
                Partition::Validation => &split.validation,
                Partition::Test => &split.test,
            };
            write_json(&report, &evaluate(&params, &vocab, examples)?)
        }
        Command::Predict { checkpoint, vocab, input, out } => {
            let params = load_checkpoint(&checkpoint)?.params;
            let vocab = read_vocab(&vocab)?;
            let reader = BufReader::new(File::open(&input).map_err(Error::io_at(&input))?);
            let mut lines = Vec::new();
            for line in reader.lines() {
                let line = line.map_err(Error::io_at(&input))?;
                if line.trim().is_empty() {
                    continue;
                }
                let q: PredictInput = serde_json::from_str(&line).map_err(Error::from)?;
                let p = predict(&params, &vocab, &q.title, &q.sentence)?;
                lines.push(PredictOutput { p_spoiler: p, flag: u8::from(p >= DEFAULT_THRESHOLD) });
            }
            write_with(&out, |mut w| {
                for l in &lines {
                    serde_json::to_writer(&mut w, l)?;
                    w.write_all(b"\n")?;
                }
                Ok(())
            })
        }
        Command::Baseline { data, report, seed } => {
            let split = load_split(&data, seed)?;
            let outcome = run_baseline(&split.train, &split.test)?;
            let labels: Vec<bool> = split.test.iter().map(|e| e.label).collect();
            let test = EvalReport::from_scores(&outcome.test_scores, &labels, DEFAULT_THRESHOLD)?;
            log::info!("baseline test auc {:.6}", test.auc);
            let body = serde_json::json!({
                "model": outcome.model.to_json(),
                "train_loss": outcome.train_loss,
                "train_auc": outcome.train_auc,
                "test": test,
            });
            write_json(&report, &body)
        }
    }
}

#[derive(Deserialize)]
struct PredictInput {
    #[serde(default)]
    title: String,
    sentence: String,
}

#[derive(Serialize)]
struct PredictOutput {
    p_spoiler: f64,
    flag: u8,
}

fn open(path: &Path) -> crate::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(Error::io_at(path))?))
}

fn load_reviews(data: &DataArgs) -> crate::Result<(Vec<crate::corpus::RawReview>, Option<TitleMap>)> {
    let parsed = parse_reviews(open(&data.reviews)?, data.limit)?;
    for s in &parsed.skipped {
        log::warn!("{}:{}: skipped: {}", data.reviews.display(), s.line, s.reason);
    }
    if parsed.flag_mismatches > 0 {
        log::warn!("{} reviews have has_spoiler inconsistent with their sentence flags", parsed.flag_mismatches);
    }
    let titles = match &data.titles {
        Some(path) => {
            let t = parse_titles(open(path)?)?;
            if t.duplicates > 0 {
                log::warn!("{}: {} duplicate book ids, last one kept", path.display(), t.duplicates);
            }
            Some(t)
        }
        None => None,
    };
    Ok((parsed.reviews, titles))
}

fn load_examples(data: &DataArgs) -> crate::Result<Vec<SentenceExample>> {
    let (reviews, titles) = load_reviews(data)?;
    let flat = match titles {
        Some(t) => flatten(&reviews, &t, TitlePolicy::Attach),
        None => flatten(&reviews, &TitleMap::default(), TitlePolicy::Omit),
    };
    if flat.title_misses > 0 {
        log::warn!("{} sentences belong to books without a title", flat.title_misses);
    }
    Ok(flat.examples)
}

fn load_split(data: &DataArgs, seed: u64) -> crate::Result<DatasetSplit> {
    let split = split(&load_examples(data)?, SplitFractions::default(), seed)?;
    log::info!(
        "split: {} train, {} validation, {} test sentences",
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );
    Ok(split)
}

fn read_vocab(path: &Path) -> crate::Result<Vocabulary> {
    Vocabulary::read_json(open(path)?)
}

fn write_with(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> crate::Result<()>) -> CmdResult {
    let inner = || -> crate::Result<()> {
        let mut w = BufWriter::new(File::create(path).map_err(Error::io_at(path))?);
        body(&mut w)?;
        w.flush().map_err(Error::io_at(path))?;
        Ok(())
    };
    inner().map_err(Failure::Runtime)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}
