//! Siamese phrase and question encoder.
//!
//! A candidate is encoded as the pair `[CLS] context [SEP] candidate [SEP]`,
//! a question as `[CLS] question [SEP]`. Both go through the same encoder
//! and the same projection, and the projected token vectors are averaged.
//! Answering a question is then an inner-product search over candidates.

mod train;

use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use train::{
    build_training_set, build_training_set_with, top1_accuracy, train_dual_encoder, DualEpochStats, DualTrainConfig, DualTrainReport,
    PiqaTrainExample, TrainingSetStats,
};

use crate::encoder::{pack_pair, pack_single, Encoder, EncoderConfig, PackedInput};
use crate::error::{Error, Result};
use crate::nn::{load_checkpoint, masked_cross_entropy, save_checkpoint, Affine, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    /// Mean over every non-PAD position of the packed input.
    PairAll,
    /// Mean over the candidate's own tokens only (questions still use every
    /// position).
    SecondSegment,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pair_all" => Ok(Pooling::PairAll),
            "second_segment" => Ok(Pooling::SecondSegment),
            other => Err(Error::config("dual.pool", format!("unknown pooling {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualConfig {
    pub encoder: EncoderConfig,
    /// Output dimension of the shared projection.
    pub dim: usize,
    pub pooling: Pooling,
    pub truncate_first: bool,
}

impl DualConfig {
    pub fn new(encoder: EncoderConfig) -> Self {
        Self { encoder, dim: 64, pooling: Pooling::PairAll, truncate_first: true }
    }
}

/// `H(A)` with the span it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhraseVector {
    pub ctx_id: String,
    pub start: usize,
    pub end: usize,
    pub text: String,
    #[serde(rename = "vec")]
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionVector {
    pub qid: String,
    pub values: Vec<f64>,
}

/// The parameters one tower resolves to.
#[derive(Clone, Copy, Debug)]
pub struct Tower<'a> {
    pub encoder: &'a Encoder,
    pub projection: &'a Affine,
}

#[derive(Clone, Debug)]
pub struct DualEncoder {
    pub config: DualConfig,
    encoder: Encoder,
    projection: Affine,
    pub params: ParamSet,
}

impl DualEncoder {
    pub fn new(config: DualConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::config("dual.dim", "must be >= 1"));
        }
        let mut params = ParamSet::new();
        let encoder = Encoder::new(config.encoder.clone(), &mut params, "enc", rng)?;
        let projection = Affine::new(&mut params, "dual.proj", config.encoder.d_model, config.dim, rng);
        Ok(Self { config, encoder, projection, params })
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn question_tower(&self) -> Tower<'_> {
        Tower { encoder: &self.encoder, projection: &self.projection }
    }

    pub fn candidate_tower(&self) -> Tower<'_> {
        Tower { encoder: &self.encoder, projection: &self.projection }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(&self.params, path)
    }

    pub fn load(config: DualConfig, path: &Path) -> Result<Self> {
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut de = Self::new(config, &mut rng)?;
        de.params.copy_values_from(&load_checkpoint(path)?)?;
        Ok(de)
    }

    pub fn pack_candidate(&self, context: &[usize], start: usize, end: usize) -> Result<PackedInput> {
        if start > end || end >= context.len() {
            return Err(Error::IndexOutOfRange { index: end, len: context.len() });
        }
        let max = self.config.encoder.max_positions;
        let cand = &context[start..=end];
        if cand.len() + 3 > max {
            return Err(Error::CandidateTooLong { len: cand.len(), max: max - 3 });
        }
        pack_pair(context, cand, max, self.config.truncate_first)
    }

    pub fn pack_question(&self, question: &[usize]) -> Result<PackedInput> {
        if question.is_empty() {
            return Err(Error::InvalidArgument("empty question".into()));
        }
        pack_single(question, self.config.encoder.max_positions)
    }

    /// Pooled `1 x dim` vector of one packed input.
    pub fn embed_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        input: &PackedInput,
        candidate: bool,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let h = self.encoder.forward(tape, params, input, rng)?;
        let p = self.projection.forward(tape, params, h)?;
        let rows = match (candidate, self.config.pooling) {
            (true, Pooling::SecondSegment) => input.second_segment_positions(),
            _ => input.non_pad_positions(),
        };
        tape.mean_rows(p, &rows)
    }

    fn embed(&self, input: &PackedInput, candidate: bool) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let v = self.embed_on(&mut tape, &self.params, input, candidate, None)?;
        let out = tape.value(v).data().to_vec();
        if out.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("phrase or question vector".into()));
        }
        Ok(out)
    }

    /// `H(A)` for the span `start..=end` of `context`.
    pub fn encode_candidate(&self, context: &[usize], start: usize, end: usize) -> Result<Vec<f64>> {
        self.embed(&self.pack_candidate(context, start, end)?, true)
    }

    /// `G(Q)`.
    pub fn encode_question(&self, question: &[usize]) -> Result<Vec<f64>> {
        self.embed(&self.pack_question(question)?, false)
    }

    /// Softmax cross-entropy of the question's similarities to every
    /// candidate, gold included.
    pub fn loss_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        question: &[usize],
        context: &[usize],
        spans: &[(usize, usize)],
        gold: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        Ok(self.loss_and_scores_on(tape, params, question, context, spans, gold, rng)?.0)
    }

    /// [`DualEncoder::loss_on`] plus the `n x 1` similarity column.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_scores_on<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        question: &[usize],
        context: &[usize],
        spans: &[(usize, usize)],
        gold: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        if gold >= spans.len() {
            return Err(Error::IndexOutOfRange { index: gold, len: spans.len() });
        }
        let g = self.embed_on(tape, params, &self.pack_question(question)?, false, rng.as_deref_mut())?;
        let mut rows = Vec::with_capacity(spans.len());
        for &(s, e) in spans {
            let packed = self.pack_candidate(context, s, e)?;
            rows.push(self.embed_on(tape, params, &packed, true, rng.as_deref_mut())?);
        }
        let cands = tape.concat_rows(&rows)?;
        let sims = tape.matmul_t(cands, g)?;
        Ok((tape.cross_entropy(sims, None, gold)?, sims))
    }
}

/// Raw inner product.
pub fn similarity(g: &[f64], h: &[f64]) -> Result<f64> {
    if g.len() != h.len() {
        return Err(Error::DimensionMismatch { expected: g.len(), found: h.len() });
    }
    Ok(g.iter().zip(h).map(|(a, b)| a * b).sum())
}

/// `-H(A*)·G(Q) + log Σ_i exp(H(A_i)·G(Q))`.
pub fn piqa_loss(question: &[f64], candidates: &[Vec<f64>], gold: usize) -> Result<f64> {
    if candidates.is_empty() || gold >= candidates.len() {
        return Err(Error::IndexOutOfRange { index: gold, len: candidates.len() });
    }
    let sims = candidates.iter().map(|c| similarity(question, c)).collect::<Result<Vec<_>>>()?;
    Ok(masked_cross_entropy(&sims, None, gold)?.0)
}

/// One JSON line per vector: `{"ctx_id","start","end","text","vec"}`.
pub fn write_vector_dump<W: Write>(mut w: W, vectors: &[PhraseVector]) -> std::io::Result<()> {
    for v in vectors {
        serde_json::to_writer(&mut w, v)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nn::grad_check;

    fn tiny(pooling: Pooling) -> DualEncoder {
        let enc = EncoderConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_positions: 24, vocab_size: 16, dropout_rate: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        DualEncoder::new(DualConfig { encoder: enc, dim: 6, pooling, truncate_first: true }, &mut rng).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(piqa_loss(&[1.0, 2.0], &[vec![3.0, 4.0]], 0).unwrap(), 0.0);
        let l = piqa_loss(&[1.0], &[vec![0.5], vec![0.5]], 1).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
        let l = piqa_loss(&[1.0], &[vec![2.0], vec![0.0]], 0).unwrap();
        assert!((l - (1.0 + (-2f64).exp()).ln()).abs() < 1e-15);
        assert!(matches!(piqa_loss(&[1.0], &[vec![1.0]], 1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(similarity(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), 1.0);
        assert!(matches!(similarity(&[1.0], &[1.0, 2.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn towers_share_parameters() {
        let de = tiny(Pooling::PairAll);
        let (q, c) = (de.question_tower(), de.candidate_tower());
        assert!(std::ptr::eq(q.encoder, c.encoder));
        assert!(std::ptr::eq(q.projection, c.projection));
    }

    #[test]
    fn shapes_and_distinct_candidates() {
        let de = tiny(Pooling::PairAll);
        let ctx = [4, 5, 6, 7, 8];
        let a = de.encode_candidate(&ctx, 0, 1).unwrap();
        let b = de.encode_candidate(&ctx, 1, 2).unwrap();
        assert_eq!(a.len(), 6);
        assert_ne!(a, b);
        assert_eq!(de.encode_question(&[4, 9]).unwrap(), de.encode_question(&[4, 9]).unwrap());
        assert!(matches!(de.encode_candidate(&[4; 30], 0, 29), Err(Error::CandidateTooLong { .. })));
    }

    #[test]
    fn loss_gradients() {
        for pooling in [Pooling::PairAll, Pooling::SecondSegment] {
            let de = tiny(pooling);
            let ctx = [4, 5, 6, 7, 8, 9];
            let spans = [(0, 0), (1, 3), (4, 5)];
            let report =
                grad_check(&de.params, 1e-4, 6, 2, |t, p| de.loss_on(t, p, &[10, 11, 12], &ctx, &spans, 1, None)).unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
        }
    }
}
