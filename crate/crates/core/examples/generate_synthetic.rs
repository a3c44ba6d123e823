//! Writes a synthetic corpus as `reviews.jsonl` and `titles.jsonl`.
//!
//! ```text
//! cargo run --example generate_synthetic -- OUT_DIR [N_SENTENCES] [SEED]
//! ```

use std::path::PathBuf;

use spoiler_core::synth::{generate, SynthConfig};

fn main() -> std::io::Result<()> {
    let mut args = std::env::args().skip(1);
    let Some(dir) = args.next().map(PathBuf::from) else {
        eprintln!("usage: generate_synthetic OUT_DIR [N_SENTENCES] [SEED]");
        std::process::exit(1);
    };
    let mut config = SynthConfig::default();
    if let Some(n) = args.next() {
        config.n_sentences = n.parse().expect("N_SENTENCES must be an integer");
    }
    if let Some(s) = args.next() {
        config.seed = s.parse().expect("SEED must be an integer");
    }

    let corpus = generate(&config);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("reviews.jsonl"), corpus.reviews_jsonl())?;
    std::fs::write(dir.join("titles.jsonl"), corpus.titles_jsonl())?;
    eprintln!("wrote {} reviews to {}", corpus.reviews.len(), dir.display());
    Ok(())
}
