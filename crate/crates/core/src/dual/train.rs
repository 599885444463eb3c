use serde::{Deserialize, Serialize};

use super::DualEncoder;
use crate::corpus::QaDataset;
use crate::error::{Error, Result};
use crate::eval::normalize_answer;
use crate::extractor::{extract_all, Extractor, SpanCandidate};
use crate::nn::{adamw_step_with_lr, AdamWConfig, Gradients, LinearSchedule, Tape};
use crate::parallel::map_ordered;
use crate::piqa::evaluate_piqa;
use crate::seed::Seeds;

/// A question with its context's extracted candidates, one of which
/// matches the gold answer.
#[derive(Clone, Debug, PartialEq)]
pub struct PiqaTrainExample {
    pub question_index: usize,
    pub ctx_index: usize,
    pub candidates: Vec<SpanCandidate>,
    pub gold_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetStats {
    pub questions: usize,
    pub kept: usize,
    pub retention: f64,
}

/// Keeps a question only when one of the `n_train` candidates of its
/// context normalizes to its gold answer; the first such candidate by rank
/// is the gold index.
pub fn build_training_set(
    ds: &QaDataset,
    candidates: &[Vec<SpanCandidate>],
    n_train: usize,
) -> Result<(Vec<PiqaTrainExample>, TrainingSetStats)> {
    if candidates.len() != ds.contexts.len() {
        return Err(Error::LengthMismatch { left: candidates.len(), right: ds.contexts.len() });
    }
    let mut out = Vec::new();
    if n_train > 0 {
        for (qi, q) in ds.questions.iter().enumerate() {
            let ctx = ds.context_of(q);
            let cands: Vec<SpanCandidate> = candidates[q.ctx_index].iter().take(n_train).cloned().collect();
            let gold = normalize_answer(&q.gold.answer_text);
            if let Some(g) = cands.iter().position(|c| normalize_answer(ctx.span_text(c.start, c.end)) == gold) {
                out.push(PiqaTrainExample { question_index: qi, ctx_index: q.ctx_index, candidates: cands, gold_index: g });
            }
        }
    }
    let questions = ds.questions.len();
    let retention = if questions == 0 { 0.0 } else { out.len() as f64 / questions as f64 };
    if out.is_empty() {
        log::warn!("dual-encoder training set is empty");
    }
    let kept = out.len();
    Ok((out, TrainingSetStats { questions, kept, retention }))
}

/// Runs the extractor and then [`build_training_set`].
pub fn build_training_set_with(
    ds: &QaDataset,
    extractor: &Extractor,
    n_train: usize,
    threads: usize,
) -> Result<(Vec<PiqaTrainExample>, TrainingSetStats)> {
    if n_train == 0 {
        return build_training_set(ds, &vec![Vec::new(); ds.contexts.len()], 0);
    }
    build_training_set(ds, &extract_all(extractor, ds, n_train, threads)?, n_train)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualTrainConfig {
    pub epochs: usize,
    pub micro_batch: usize,
    /// Micro-batches whose gradients are summed before one optimizer step.
    pub accumulation: usize,
    pub optimizer: AdamWConfig,
    pub warmup_fraction: f64,
    pub threads: usize,
}

impl Default for DualTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            micro_batch: 4,
            accumulation: 8,
            optimizer: AdamWConfig::with_learning_rate(1e-5),
            warmup_fraction: 0.0,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Fraction of training examples whose gold had the highest similarity
    /// during the epoch's forward passes.
    pub train_top1: f64,
    pub dev_em: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualTrainReport {
    pub epochs: Vec<DualEpochStats>,
    pub best_epoch: Option<usize>,
}

fn spans(ex: &PiqaTrainExample) -> Vec<(usize, usize)> {
    ex.candidates.iter().map(|c| (c.start, c.end)).collect()
}

/// Inference-mode fraction of examples whose gold candidate scores highest
/// (ties count against it).
pub fn top1_accuracy(de: &DualEncoder, ds: &QaDataset, set: &[PiqaTrainExample], threads: usize) -> Result<f64> {
    if set.is_empty() {
        return Ok(0.0);
    }
    let hits = map_ordered(threads, set, |_, ex| -> Result<bool> {
        let ctx = &ds.contexts[ex.ctx_index].tokens.tokens;
        let g = de.encode_question(&ds.questions[ex.question_index].question.tokens)?;
        let mut sims = Vec::with_capacity(ex.candidates.len());
        for c in &ex.candidates {
            sims.push(super::similarity(&g, &de.encode_candidate(ctx, c.start, c.end)?)?);
        }
        let gold = sims[ex.gold_index];
        Ok(sims.iter().enumerate().all(|(i, &s)| i == ex.gold_index || s < gold))
    });
    let mut n = 0;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / set.len() as f64)
}

/// AdamW on the candidate softmax loss with gradient accumulation. With a
/// dev slice (dataset plus its evaluation candidates) the epoch with the
/// best end-to-end EM is kept; otherwise the last.
pub fn train_dual_encoder(
    de: &mut DualEncoder,
    ds: &QaDataset,
    set: &[PiqaTrainExample],
    dev: Option<(&QaDataset, &[Vec<SpanCandidate>])>,
    cfg: &DualTrainConfig,
    seeds: &Seeds,
) -> Result<DualTrainReport> {
    cfg.optimizer.validate()?;
    if cfg.micro_batch == 0 || cfg.accumulation == 0 {
        return Err(Error::config("dual.micro_batch", "micro_batch and accumulation must be >= 1"));
    }
    let mut report = DualTrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    if set.is_empty() {
        return Err(Error::InvalidArgument("dual-encoder training set is empty".into()));
    }
    let per_step = cfg.micro_batch * cfg.accumulation;
    let steps_per_epoch = set.len().div_ceil(per_step);
    let schedule = LinearSchedule::new(cfg.optimizer.learning_rate, steps_per_epoch * cfg.epochs, cfg.warmup_fraction);
    let mut best: Option<(f64, crate::nn::ParamSet)> = None;
    let mut step = 0usize;
    let mut seen = 0u64;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..set.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seeds.rng("dual.shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for step_items in order.chunks(per_step) {
            for micro in step_items.chunks(cfg.micro_batch) {
                let model: &DualEncoder = de;
                let base = seen;
                let results = map_ordered(cfg.threads, micro, |i, &e| -> Result<(f64, bool, Gradients)> {
                    let ex = &set[e];
                    let mut rng = seeds.rng("dual.dropout", base + i as u64);
                    let mut tape = Tape::new();
                    let (loss, sims) = model.loss_and_scores_on(
                        &mut tape,
                        &model.params,
                        &ds.questions[ex.question_index].question.tokens,
                        &ds.contexts[ex.ctx_index].tokens.tokens,
                        &spans(ex),
                        ex.gold_index,
                        Some(&mut rng),
                    )?;
                    let value = tape.value(loss).item();
                    let sims = tape.value(sims).data();
                    let gold = sims[ex.gold_index];
                    let top1 = sims.iter().enumerate().all(|(i, &s)| i == ex.gold_index || s < gold);
                    Ok((value, top1, tape.backward(loss)?.into_param_grads()))
                });
                seen += micro.len() as u64;
                let mut grads = Gradients::new();
                for r in results {
                    let (l, top1, g) = r?;
                    loss_sum += l;
                    correct += top1 as usize;
                    grads.merge(&g);
                }
                de.params.accumulate(&grads, 1.0 / step_items.len() as f64);
            }
            adamw_step_with_lr(&mut de.params, &cfg.optimizer, schedule.lr(step))?;
            step += 1;
        }
        let train_loss = loss_sum / set.len() as f64;
        let train_top1 = correct as f64 / set.len() as f64;
        let dev_em = match dev {
            Some((dds, cands)) => Some(evaluate_piqa(dds, cands, &*de, cfg.threads)?.report.exact_match),
            None => None,
        };
        log::info!(
            "dual epoch {epoch}: loss {train_loss:.4}, train top-1 {train_top1:.3}{}",
            dev_em.map_or(String::new(), |e| format!(", dev EM {e:.2}"))
        );
        let key = dev_em.unwrap_or(epoch as f64);
        if best.as_ref().map_or(true, |(b, _)| key > *b) {
            best = Some((key, de.params.clone()));
            report.best_epoch = Some(epoch);
        }
        report.epochs.push(DualEpochStats { epoch, train_loss, train_top1, dev_em });
    }
    if let Some((_, params)) = best {
        de.params = params;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, parse_squad_json, prepare_dataset, CorpusConfig, LoadOptions};

    fn ds() -> QaDataset {
        let raw = parse_squad_json(
            r#"{"data":[{"title":"t","paragraphs":[{"context":"the cat sat on a mat",
            "qas":[{"id":"a","question":"who sat?","answers":[{"text":"cat","answer_start":4}]},
                   {"id":"b","question":"on what?","answers":[{"text":"mat","answer_start":17}]}]}]}]}"#,
            LoadOptions::default(),
        )
        .unwrap();
        let vocab = build_vocab(&raw, 1).unwrap();
        prepare_dataset(&raw, &vocab, &CorpusConfig::default()).0
    }

    fn cand(start: usize, end: usize, rank: usize) -> SpanCandidate {
        SpanCandidate { start, end, score: -(rank as f64), rank }
    }

    #[test]
    fn gold_rank_and_dropping() {
        let ds = ds();
        // "the cat" normalizes to "cat" too, so the first match by rank wins.
        let cands = vec![vec![cand(2, 3, 0), cand(0, 0, 1), cand(3, 4, 2), cand(0, 1, 3), cand(1, 1, 4)]];
        let (set, stats) = build_training_set(&ds, &cands, 60).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set[0].question_index, 0);
        assert_eq!(set[0].gold_index, 3);
        assert_eq!(stats.retention, 0.5);
        let (set, stats) = build_training_set(&ds, &cands, 0).unwrap();
        assert!(set.is_empty());
        assert_eq!(stats.retention, 0.0);
    }
}
