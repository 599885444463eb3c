//! Question-agnostic answer-candidate extraction.
//!
//! The context is encoded once. A start head scores every context token; for
//! each of the best `s` starts an end head scores the tokens of the answer
//! window from the pair (token embedding, start embedding); the best `e` ends
//! per start give up to `s * e` candidates. A second, independent end head
//! supports the classic decoder used as a baseline.

mod decode;
mod train;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use decode::{beam_search, classic_beam, classic_optimal, count_naive_spans, BeamConfig, SpanCandidate};
pub use train::{dataset_recall, train_extractor, EpochStats, ExtractorTrainConfig, TrainReport};

use crate::corpus::{GoldSpan, QaDataset, TokenizedContext};
use crate::encoder::{pack_single, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, log_softmax_masked, save_checkpoint, Affine, Matrix, ParamId, ParamSet, Tape, Var};

/// Decoding used by [`Extractor::extract_classic`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassicMode {
    Optimal,
    Beam,
}

#[derive(Clone, Debug)]
pub struct Extractor {
    pub encoder: Encoder,
    pub beam: BeamConfig,
    pub start_head: Affine,
    /// First layer of the conditional end head, over `[H_j ; H_start]`.
    pub end_hidden: Affine,
    pub end_out: Affine,
    pub classic_end: Affine,
    pub params: ParamSet,
}

impl Extractor {
    pub fn new(encoder: EncoderConfig, beam: BeamConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        beam.validate()?;
        let mut params = ParamSet::new();
        let d = encoder.d_model;
        let encoder = Encoder::new(encoder, &mut params, "enc", rng)?;
        let start_head = Affine::new(&mut params, "ext.start", d, 1, rng);
        let end_hidden = Affine::new(&mut params, "ext.end_hidden", 2 * d, d, rng);
        let end_out = Affine::new(&mut params, "ext.end_out", d, 1, rng);
        let classic_end = Affine::new(&mut params, "ext.classic_end", d, 1, rng);
        Ok(Self { encoder, beam, start_head, end_hidden, end_out, classic_end, params })
    }

    pub fn d_model(&self) -> usize {
        self.encoder.config.d_model
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        for a in [&self.start_head, &self.end_hidden, &self.end_out, &self.classic_end] {
            ids.extend(a.param_ids());
        }
        ids
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, path)
    }

    /// Loads checkpoint values into a freshly built model of the same shape.
    pub fn load(encoder: EncoderConfig, beam: BeamConfig, path: &Path) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut ex = Self::new(encoder, beam, &mut rng)?;
        let stored = load_checkpoint(path)?;
        ex.params.copy_values_from(&stored)?;
        Ok(ex)
    }

    /// Context token embeddings (`m x d`), framing tokens removed.
    pub fn encode_context_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        tokens: &[usize],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::EmptyContext);
        }
        let packed = pack_single(tokens, self.encoder.config.max_positions)?;
        let h = self.encoder.forward(tape, params, &packed, rng)?;
        let rows: Vec<usize> = (1..=tokens.len()).collect();
        tape.select_rows(h, &rows)
    }

    pub fn encode_context(&self, tokens: &[usize]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let h = self.encode_context_on(&mut tape, &self.params, tokens, None)?;
        Ok(tape.value(h).clone())
    }

    fn check_width(&self, h: &Matrix) -> Result<()> {
        if h.cols() != self.d_model() {
            return Err(Error::ShapeMismatch(format!("embeddings have {} columns, model {}", h.cols(), self.d_model())));
        }
        Ok(())
    }

    fn column_logits(&self, head: &Affine, h: &Matrix) -> Result<Vec<f64>> {
        self.check_width(h)?;
        let mut tape = Tape::new();
        let x = tape.input(h.clone());
        let y = head.forward(&mut tape, &self.params, x)?;
        Ok(tape.value(y).data().to_vec())
    }

    /// Start log-probabilities over the `m` context tokens.
    pub fn score_starts(&self, h: &Matrix) -> Result<Vec<f64>> {
        let logits = self.column_logits(&self.start_head, h)?;
        Ok(log_softmax_masked(&logits, |_| true))
    }

    /// Independent end log-probabilities (classic head).
    pub fn score_ends_classic(&self, h: &Matrix) -> Result<Vec<f64>> {
        let logits = self.column_logits(&self.classic_end, h)?;
        Ok(log_softmax_masked(&logits, |_| true))
    }

    /// End log-probabilities for each start in `starts`, restricted to its
    /// answer window (negative infinity elsewhere).
    pub fn score_ends_conditional_many(&self, h: &Matrix, starts: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_width(h)?;
        let (m, d) = h.shape();
        let mut rows = 0;
        for &s in starts {
            if s >= m {
                return Err(Error::IndexOutOfRange { index: s, len: m });
            }
            rows += self.beam.window_end(s, m) - s;
        }
        let mut feats = Matrix::zeros(rows, 2 * d);
        let mut r = 0;
        for &s in starts {
            for j in s..self.beam.window_end(s, m) {
                let row = feats.row_mut(r);
                row[..d].copy_from_slice(h.row(j));
                row[d..].copy_from_slice(h.row(s));
                r += 1;
            }
        }
        let mut tape = Tape::new();
        let x = tape.input(feats);
        let logits = self.end_logits_from_features(&mut tape, &self.params, x)?;
        let logits = tape.value(logits).data();
        let mut out = Vec::with_capacity(starts.len());
        let mut r = 0;
        for &s in starts {
            let hi = self.beam.window_end(s, m);
            let mut full = vec![f64::NEG_INFINITY; m];
            full[s..hi].copy_from_slice(&logits[r..r + hi - s]);
            r += hi - s;
            out.push(log_softmax_masked(&full, |j| j >= s && j < hi));
        }
        Ok(out)
    }

    pub fn score_ends_conditional(&self, h: &Matrix, start: usize) -> Result<Vec<f64>> {
        Ok(self.score_ends_conditional_many(h, &[start])?.pop().expect("one start"))
    }

    fn end_logits_from_features<'p>(&self, tape: &mut Tape<'p>, params: &'p ParamSet, feats: Var) -> Result<Var> {
        let hid = self.end_hidden.forward(tape, params, feats)?;
        let hid = tape.gelu(hid);
        self.end_out.forward(tape, params, hid)
    }

    /// Conditional beam extraction of up to `k` candidates.
    pub fn extract_beam(&self, ctx: &TokenizedContext, k: usize) -> Result<Vec<SpanCandidate>> {
        let h = self.encode_context(&ctx.tokens)?;
        let start_lp = self.score_starts(&h)?;
        beam_search(&start_lp, &self.beam, k, |starts| self.score_ends_conditional_many(&h, starts))
    }

    pub fn extract_classic(&self, ctx: &TokenizedContext, k: usize, mode: ClassicMode) -> Result<Vec<SpanCandidate>> {
        let h = self.encode_context(&ctx.tokens)?;
        let start_lp = self.score_starts(&h)?;
        let end_lp = self.score_ends_classic(&h)?;
        match mode {
            ClassicMode::Optimal => classic_optimal(&start_lp, &end_lp, self.beam.max_answer_tokens, k),
            ClassicMode::Beam => classic_beam(&start_lp, &end_lp, &self.beam, k),
        }
    }

    fn check_gold(&self, gold: &GoldSpan, m: usize) -> Result<()> {
        if gold.start > gold.end || gold.end >= m {
            return Err(Error::IndexOutOfRange { index: gold.end, len: m });
        }
        if gold.end - gold.start + 1 > self.beam.max_answer_tokens {
            return Err(Error::GoldOutOfWindow {
                start: gold.start,
                end: gold.end,
                max_answer_tokens: self.beam.max_answer_tokens,
            });
        }
        Ok(())
    }

    /// Mean over `golds` of `-log P(s*) - log P(e*|s*)`, plus `-log P_classic(e*)`
    /// when `with_classic` is set. The end term is conditioned on the gold
    /// start.
    pub fn loss_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        tokens: &[usize],
        golds: &[GoldSpan],
        with_classic: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if golds.is_empty() {
            return Err(Error::InvalidArgument("no gold spans".into()));
        }
        let m = tokens.len();
        for g in golds {
            self.check_gold(g, m)?;
        }
        let hc = self.encode_context_on(tape, params, tokens, rng)?;
        let start_logits = self.start_head.forward(tape, params, hc)?;
        let classic_logits = if with_classic { Some(self.classic_end.forward(tape, params, hc)?) } else { None };
        let mut terms = Vec::with_capacity(golds.len() * 3);
        for g in golds {
            terms.push(tape.cross_entropy(start_logits, None, g.start)?);
            let hi = self.beam.window_end(g.start, m);
            let window: Vec<usize> = (g.start..hi).collect();
            let sel = tape.select_rows(hc, &window)?;
            let rep = tape.repeat_row(hc, g.start, window.len())?;
            let feats = tape.concat_cols(&[sel, rep])?;
            let end_logits = self.end_logits_from_features(tape, params, feats)?;
            terms.push(tape.cross_entropy(end_logits, None, g.end - g.start)?);
            if let Some(cl) = classic_logits {
                terms.push(tape.cross_entropy(cl, None, g.end)?);
            }
        }
        let total = tape.sum(&terms)?;
        Ok(tape.scale(total, 1.0 / golds.len() as f64))
    }
}

/// `-log P(s*) - log P(e*|s*)` for one gold span, in inference mode.
pub fn extractor_loss(ex: &Extractor, ctx: &TokenizedContext, gold: &GoldSpan) -> Result<f64> {
    let mut tape = Tape::new();
    let l = ex.loss_on(&mut tape, &ex.params, &ctx.tokens, std::slice::from_ref(gold), false, None)?;
    Ok(tape.value(l).item())
}

#[derive(Serialize)]
struct DumpCandidate<'a> {
    start: usize,
    end: usize,
    text: &'a str,
    score: f64,
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    ctx_id: &'a str,
    candidates: Vec<DumpCandidate<'a>>,
}

/// Candidates for every context of `ds`, in context order.
pub fn extract_all(ex: &Extractor, ds: &QaDataset, k: usize, threads: usize) -> Result<Vec<Vec<SpanCandidate>>> {
    crate::parallel::map_ordered(threads, &ds.contexts, |_, c| ex.extract_beam(&c.tokens, k)).into_iter().collect()
}

/// One JSON line per context: `{"ctx_id", "candidates":[{start,end,text,score}]}`.
pub fn write_candidate_dump<W: Write>(mut w: W, ds: &QaDataset, candidates: &[Vec<SpanCandidate>]) -> std::io::Result<()> {
    for (ctx, cands) in ds.contexts.iter().zip(candidates) {
        let rec = DumpRecord {
            ctx_id: &ctx.id,
            candidates: cands
                .iter()
                .map(|c| DumpCandidate { start: c.start, end: c.end, text: ctx.span_text(c.start, c.end), score: c.score })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(serde::Deserialize)]
struct DumpLine {
    ctx_id: String,
    candidates: Vec<DumpEntry>,
}

#[derive(serde::Deserialize)]
struct DumpEntry {
    start: usize,
    end: usize,
    score: f64,
}

/// Reads a candidate dump back, keyed by context id. Ranks follow line order.
pub fn read_candidate_dump<R: std::io::BufRead>(r: R) -> Result<HashMap<String, Vec<SpanCandidate>>> {
    let mut out = HashMap::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Format(format!("candidate dump line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DumpLine =
            serde_json::from_str(&line).map_err(|e| Error::Format(format!("candidate dump line {}: {e}", n + 1)))?;
        let cands = rec
            .candidates
            .into_iter()
            .enumerate()
            .map(|(rank, c)| SpanCandidate { start: c.start, end: c.end, score: c.score, rank })
            .collect();
        out.insert(rec.ctx_id, cands);
    }
    Ok(out)
}

/// Candidate lists in the context order of `ds` (empty for unknown contexts).
pub fn candidates_for(ds: &QaDataset, by_id: &HashMap<String, Vec<SpanCandidate>>) -> Vec<Vec<SpanCandidate>> {
    ds.contexts.iter().map(|c| by_id.get(&c.id).cloned().unwrap_or_default()).collect()
}
