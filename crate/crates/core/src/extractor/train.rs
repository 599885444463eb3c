use serde::{Deserialize, Serialize};

use super::{extract_all, Extractor, SpanCandidate};
use crate::corpus::{GoldSpan, QaDataset};
use crate::error::{Error, Result};
use crate::eval::{candidate_recall, RecallReport};
use crate::nn::{adamw_step_with_lr, AdamWConfig, Gradients, LinearSchedule, Tape};
use crate::parallel::map_ordered;
use crate::seed::Seeds;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorTrainConfig {
    pub epochs: usize,
    /// Contexts per optimizer step. Each context contributes the mean loss
    /// of its gold spans.
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub warmup_fraction: f64,
    /// Also fit the independent end head used by classic decoding.
    pub train_classic_head: bool,
    /// Candidate count for the per-epoch dev recall.
    pub dev_k: usize,
    pub threads: usize,
}

impl Default for ExtractorTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            optimizer: AdamWConfig::with_learning_rate(1e-4),
            warmup_fraction: 0.0,
            train_classic_head: true,
            dev_k: 100,
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Option<RecallReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    /// Epoch (1-based) whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub skipped_golds: usize,
}

/// Recall of per-context candidates against every question of `ds`.
pub fn dataset_recall(ds: &QaDataset, candidates: &[Vec<SpanCandidate>]) -> Result<RecallReport> {
    let texts: Vec<Vec<&str>> = ds
        .questions
        .iter()
        .map(|q| {
            let ctx = ds.context_of(q);
            candidates[q.ctx_index].iter().map(|c| ctx.span_text(c.start, c.end)).collect()
        })
        .collect();
    let golds: Vec<Vec<String>> = ds.questions.iter().map(|q| q.answers.clone()).collect();
    candidate_recall(&texts, &golds)
}

/// Groups gold spans by context, dropping duplicates and spans longer than
/// the answer window.
fn training_examples(ex: &Extractor, ds: &QaDataset) -> (Vec<(usize, Vec<GoldSpan>)>, usize) {
    let mut skipped = 0;
    let mut out = Vec::new();
    for (ci, qs) in ds.questions_by_context().into_iter().enumerate() {
        let mut golds: Vec<GoldSpan> = Vec::new();
        for qi in qs {
            let g = &ds.questions[qi].gold;
            if g.end - g.start + 1 > ex.beam.max_answer_tokens {
                skipped += 1;
                continue;
            }
            if !golds.iter().any(|x| x.start == g.start && x.end == g.end) {
                golds.push(g.clone());
            }
        }
        if !golds.is_empty() {
            out.push((ci, golds));
        }
    }
    (out, skipped)
}

/// Minibatch AdamW over contexts. After every epoch the dev recall is
/// measured (when `dev` is given) and the best epoch's parameters are kept;
/// without a dev set the last epoch wins.
pub fn train_extractor(
    ex: &mut Extractor,
    train: &QaDataset,
    dev: Option<&QaDataset>,
    cfg: &ExtractorTrainConfig,
    seeds: &Seeds,
) -> Result<TrainReport> {
    cfg.optimizer.validate()?;
    if cfg.batch_size == 0 {
        return Err(Error::config("extractor.batch_size", "must be >= 1"));
    }
    let mut report = TrainReport::default();
    if cfg.epochs == 0 {
        return Ok(report);
    }
    let (examples, skipped) = training_examples(ex, train);
    report.skipped_golds = skipped;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("extractor training set is empty".into()));
    }
    let steps_per_epoch = examples.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.optimizer.learning_rate, steps_per_epoch * cfg.epochs, cfg.warmup_fraction);
    let mut best: Option<(f64, crate::nn::ParamSet)> = None;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut seeds.rng("extractor.shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let model: &Extractor = ex;
            let results = map_ordered(cfg.threads, batch, |i, &e| -> Result<(f64, Gradients)> {
                let (ci, golds) = &examples[e];
                let mut rng = seeds.rng("extractor.dropout", (step * cfg.batch_size + i) as u64);
                let mut tape = Tape::new();
                let loss = model.loss_on(
                    &mut tape,
                    &model.params,
                    &train.contexts[*ci].tokens.tokens,
                    golds,
                    cfg.train_classic_head,
                    Some(&mut rng),
                )?;
                let value = tape.value(loss).item();
                Ok((value, tape.backward(loss)?.into_param_grads()))
            });
            let mut grads = Gradients::new();
            for r in results {
                let (l, g) = r?;
                loss_sum += l;
                grads.merge(&g);
            }
            ex.params.accumulate(&grads, 1.0 / batch.len() as f64);
            adamw_step_with_lr(&mut ex.params, &cfg.optimizer, schedule.lr(step))?;
            step += 1;
        }
        let train_loss = loss_sum / examples.len() as f64;
        let dev_report = match dev {
            Some(d) => Some(dataset_recall(d, &extract_all(ex, d, cfg.dev_k, cfg.threads)?)?),
            None => None,
        };
        log::info!(
            "extractor epoch {epoch}: loss {train_loss:.4}{}",
            dev_report.as_ref().map_or(String::new(), |r| format!(", dev em-recall@{} {:.4}", cfg.dev_k, r.em_recall))
        );
        let key = dev_report.as_ref().map_or(epoch as f64, |r| r.em_recall);
        if best.as_ref().map_or(true, |(b, _)| key > *b) {
            best = Some((key, ex.params.clone()));
            report.best_epoch = Some(epoch);
        }
        report.epochs.push(EpochStats { epoch, train_loss, dev: dev_report });
    }
    if let Some((_, params)) = best {
        ex.params = params;
    }
    Ok(report)
}
