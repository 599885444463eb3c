//! Trains the shared question/candidate encoder on the facts corpus, using
//! every short span of each context as candidates, and answers questions by
//! inner product.

use effqa::corpus::synthetic::{facts_corpus, FactsConfig};
use effqa::corpus::{build_vocab, prepare_dataset, CorpusConfig};
use effqa::dual::{build_training_set, piqa_loss, train_dual_encoder, DualConfig, DualEncoder, DualTrainConfig};
use effqa::encoder::EncoderConfig;
use effqa::extractor::SpanCandidate;
use effqa::nn::AdamWConfig;
use effqa::piqa::{evaluate_piqa, OracleEncoder};
use effqa::seed::seed_everything;

fn main() -> effqa::Result<()> {
    let seeds = seed_everything(3);
    let raw_train = facts_corpus(&FactsConfig { n_contexts: 60, ..FactsConfig::default() }, &mut seeds.rng("train", 0));
    let raw_dev = facts_corpus(&FactsConfig { n_contexts: 15, ..FactsConfig::default() }, &mut seeds.rng("dev", 0));
    let mut all = raw_train.clone();
    all.data.extend(raw_dev.data.iter().cloned());
    let vocab = build_vocab(&all, 1)?;
    let (train, _) = prepare_dataset(&raw_train, &vocab, &CorpusConfig::default());
    let (dev, _) = prepare_dataset(&raw_dev, &vocab, &CorpusConfig::default());

    // Single-token spans stand in for extractor output here.
    let unigram = |ds: &effqa::corpus::QaDataset| -> Vec<Vec<SpanCandidate>> {
        ds.contexts
            .iter()
            .map(|c| (0..c.tokens.len()).map(|i| SpanCandidate { start: i, end: i, score: 0.0, rank: i }).collect())
            .collect()
    };
    let (set, stats) = build_training_set(&train, &unigram(&train), usize::MAX)?;
    println!("training set: {stats:?}");

    let enc = EncoderConfig { d_model: 32, n_layers: 1, n_heads: 2, d_ff: 64, max_positions: 64, vocab_size: vocab.len(), dropout_rate: 0.0 };
    let mut de = DualEncoder::new(DualConfig { dim: 32, ..DualConfig::new(enc) }, &mut seeds.rng("dual.init", 0))?;
    let q = std::ptr::eq(de.question_tower().encoder, de.candidate_tower().encoder);
    println!("question and candidate towers share one encoder: {q}");

    let dev_cands = unigram(&dev);
    let cfg = DualTrainConfig { epochs: 10, accumulation: 2, optimizer: AdamWConfig::with_learning_rate(1e-3), ..Default::default() };
    let report = train_dual_encoder(&mut de, &train, &set, Some((&dev, &dev_cands)), &cfg, &seeds)?;
    for e in &report.epochs {
        println!("epoch {}: loss {:.3}, train top-1 {:.3}, dev EM {:.1}", e.epoch, e.train_loss, e.train_top1, e.dev_em.unwrap_or(0.0));
    }

    let outcome = evaluate_piqa(&dev, &dev_cands, &de, 1)?;
    let oracle = evaluate_piqa(&dev, &dev_cands, &OracleEncoder::new(&dev), 1)?;
    println!("dev EM {:.1} (oracle {:.1})", outcome.report.exact_match, oracle.report.exact_match);

    let qr = &dev.questions[0];
    let ctx = dev.context_of(qr);
    let g = de.encode_question(&qr.question.tokens)?;
    let hs: Vec<Vec<f64>> = (0..ctx.tokens.len()).map(|i| de.encode_candidate(&ctx.tokens.tokens, i, i)).collect::<effqa::Result<_>>()?;
    let gold = qr.gold.start;
    println!("{:?}: loss of gold {:?} = {:.4}", qr.text, qr.gold.answer_text, piqa_loss(&g, &hs, gold)?);
    Ok(())
}
