//! End-to-end phrase-indexed evaluation: candidates of every context are
//! encoded and indexed once, then each question is answered by the top
//! inner-product hit inside its own context.

use crate::corpus::QaDataset;
use crate::dual::{DualEncoder, PhraseVector};
use crate::error::{Error, Result};
use crate::eval::{exact_match, EvalReport, QuestionResult, RecallReport};
use crate::extractor::{dataset_recall, extract_all, Extractor, SpanCandidate};
use crate::index::{build_index, PhraseIndex};
use crate::parallel::map_ordered;

/// Anything that maps candidates and questions into one vector space.
pub trait PhraseEncoder: Sync {
    fn dim(&self) -> usize;
    fn encode_candidate(&self, ds: &QaDataset, ctx_index: usize, cand: &SpanCandidate) -> Result<Vec<f64>>;
    fn encode_question(&self, ds: &QaDataset, question_index: usize) -> Result<Vec<f64>>;
}

impl PhraseEncoder for DualEncoder {
    fn dim(&self) -> usize {
        DualEncoder::dim(self)
    }

    fn encode_candidate(&self, ds: &QaDataset, ctx_index: usize, cand: &SpanCandidate) -> Result<Vec<f64>> {
        DualEncoder::encode_candidate(self, &ds.contexts[ctx_index].tokens.tokens, cand.start, cand.end)
    }

    fn encode_question(&self, ds: &QaDataset, question_index: usize) -> Result<Vec<f64>> {
        DualEncoder::encode_question(self, &ds.questions[question_index].question.tokens)
    }
}

/// Scores a candidate 1 for a question exactly when it matches one of the
/// question's gold answers. Gives the best accuracy any encoder can reach
/// with the given candidates.
pub struct OracleEncoder {
    slot: Vec<usize>,
    by_context: Vec<Vec<usize>>,
    dim: usize,
}

impl OracleEncoder {
    pub fn new(ds: &QaDataset) -> Self {
        let by_context = ds.questions_by_context();
        let mut slot = vec![0; ds.questions.len()];
        for qs in &by_context {
            for (i, &q) in qs.iter().enumerate() {
                slot[q] = i;
            }
        }
        let dim = by_context.iter().map(Vec::len).max().unwrap_or(0).max(1);
        Self { slot, by_context, dim }
    }
}

impl PhraseEncoder for OracleEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode_candidate(&self, ds: &QaDataset, ctx_index: usize, cand: &SpanCandidate) -> Result<Vec<f64>> {
        let text = ds.contexts[ctx_index].span_text(cand.start, cand.end);
        let mut v = vec![0.0; self.dim];
        for &q in &self.by_context[ctx_index] {
            v[self.slot[q]] = exact_match(text, &ds.questions[q].answers)?;
        }
        Ok(v)
    }

    fn encode_question(&self, _ds: &QaDataset, question_index: usize) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        v[self.slot[question_index]] = 1.0;
        Ok(v)
    }
}

/// Phrase vectors for every candidate of every context.
pub fn phrase_vectors<E: PhraseEncoder>(
    ds: &QaDataset,
    candidates: &[Vec<SpanCandidate>],
    enc: &E,
    threads: usize,
) -> Result<Vec<PhraseVector>> {
    if candidates.len() != ds.contexts.len() {
        return Err(Error::LengthMismatch { left: candidates.len(), right: ds.contexts.len() });
    }
    let jobs: Vec<(usize, &SpanCandidate)> =
        candidates.iter().enumerate().flat_map(|(ci, cs)| cs.iter().map(move |c| (ci, c))).collect();
    map_ordered(threads, &jobs, |_, &(ci, c)| {
        let ctx = &ds.contexts[ci];
        Ok(PhraseVector {
            ctx_id: ctx.id.clone(),
            start: c.start,
            end: c.end,
            text: ctx.span_text(c.start, c.end).to_string(),
            values: enc.encode_candidate(ds, ci, c)?,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PiqaOutcome {
    pub report: EvalReport,
    /// Recall of the same candidate sets: the ceiling for `report`.
    pub recall: RecallReport,
}

/// Answers every question of `ds` from `index` (top hit within the
/// question's context). A context without entries yields an empty answer.
pub fn answer_with_index<E: PhraseEncoder>(ds: &QaDataset, index: &PhraseIndex, enc: &E, threads: usize) -> Result<EvalReport> {
    let results = map_ordered(threads, &ds.questions, |qi, q| -> Result<QuestionResult> {
        let ctx = ds.context_of(q);
        let prediction = match index.context_range(&ctx.id) {
            Some(_) => {
                let g = enc.encode_question(ds, qi)?;
                let hits = index.search(&g, 1, Some(&ctx.id))?;
                hits.first().map(|h| index.entry(h.entry).text.to_string()).unwrap_or_default()
            }
            None => String::new(),
        };
        Ok(QuestionResult {
            qid: q.qid.clone(),
            em: exact_match(&prediction, &q.answers)?,
            f1: crate::eval::f1(&prediction, &q.answers)?,
            golds: q.answers.clone(),
            prediction,
        })
    });
    Ok(EvalReport::from_results(results.into_iter().collect::<Result<Vec<_>>>()?))
}

pub fn evaluate_piqa<E: PhraseEncoder>(
    ds: &QaDataset,
    candidates: &[Vec<SpanCandidate>],
    enc: &E,
    threads: usize,
) -> Result<PiqaOutcome> {
    let vectors = phrase_vectors(ds, candidates, enc, threads)?;
    let index = build_index(&vectors)?;
    Ok(PiqaOutcome { report: answer_with_index(ds, &index, enc, threads)?, recall: dataset_recall(ds, candidates)? })
}

/// Extraction of `k_eval` candidates per context followed by
/// [`evaluate_piqa`].
pub fn evaluate_end_to_end(
    ds: &QaDataset,
    extractor: &Extractor,
    dual: &DualEncoder,
    k_eval: usize,
    threads: usize,
) -> Result<PiqaOutcome> {
    let candidates = extract_all(extractor, ds, k_eval, threads)?;
    evaluate_piqa(ds, &candidates, dual, threads)
}
