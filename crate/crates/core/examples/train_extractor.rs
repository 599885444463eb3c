//! Trains the question-agnostic extractor on the bracketed-span corpus and
//! compares conditional and classic decoding by candidate recall.
//!
//! ```text
//! cargo run --release --example train_extractor -- [seed] [epochs]
//! ```

use effqa::corpus::synthetic::bracketed_split;
use effqa::corpus::{build_vocab, prepare_dataset, CorpusConfig};
use effqa::encoder::EncoderConfig;
use effqa::extractor::{dataset_recall, train_extractor, BeamConfig, ClassicMode, Extractor, ExtractorTrainConfig};
use effqa::nn::AdamWConfig;
use effqa::seed::seed_everything;

fn main() -> effqa::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(10, |s| s.parse().expect("epochs"));

    let (raw_train, raw_dev) = bracketed_split(seed, 60, 20);
    let mut all = raw_train.clone();
    all.data.extend(raw_dev.data.iter().cloned());
    let vocab = build_vocab(&all, 1)?;
    let (train, _) = prepare_dataset(&raw_train, &vocab, &CorpusConfig::default());
    let (dev, _) = prepare_dataset(&raw_dev, &vocab, &CorpusConfig::default());
    println!("{} train / {} dev questions, vocabulary {}", train.questions.len(), dev.questions.len(), vocab.len());

    let seeds = seed_everything(seed);
    let enc = EncoderConfig { d_model: 32, n_layers: 1, n_heads: 2, d_ff: 64, max_positions: 128, vocab_size: vocab.len(), dropout_rate: 0.0 };
    let mut ex = Extractor::new(enc, BeamConfig::default(), &mut seeds.rng("extractor.init", 0))?;
    let cfg = ExtractorTrainConfig { epochs, batch_size: 4, optimizer: AdamWConfig::with_learning_rate(3e-3), ..Default::default() };
    let report = train_extractor(&mut ex, &train, Some(&dev), &cfg, &seeds)?;
    println!("kept epoch {:?}", report.best_epoch);

    for (name, mode) in [("conditional beam", None), ("classic optimal", Some(ClassicMode::Optimal)), ("classic beam", Some(ClassicMode::Beam))] {
        let cands = dev
            .contexts
            .iter()
            .map(|c| match mode {
                None => ex.extract_beam(&c.tokens, 100),
                Some(m) => ex.extract_classic(&c.tokens, 100, m),
            })
            .collect::<effqa::Result<Vec<_>>>()?;
        let r = dataset_recall(&dev, &cands)?;
        println!("{name:<17} EM-recall@100 {:.1}  F1-recall {:.1}", 100.0 * r.em_recall, 100.0 * r.f1_max_mean);
    }

    let ctx = &dev.contexts[0];
    println!("\ntop candidates in {}:", ctx.id);
    for c in ex.extract_beam(&ctx.tokens, 5)? {
        println!("  {:.3} {}", c.score, ctx.span_text(c.start, c.end));
    }
    Ok(())
}
