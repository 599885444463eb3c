//! Shared transformer encoder: token + position + segment embeddings, then
//! post-norm self-attention blocks. Used by both the extractor and the
//! siamese dual encoder, each with its own parameter set.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{CLS_ID, PAD_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::nn::{dropout, uniform, Affine, LayerNorm, Matrix, ParamId, ParamSet, SelfAttention, Tape, Var};

const EMBEDDING_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_positions: usize,
    pub vocab_size: usize,
    pub dropout_rate: f64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self { d_model: 64, n_layers: 2, n_heads: 4, d_ff: 256, max_positions: 512 + 2, vocab_size, dropout_rate: 0.1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::config("encoder.n_heads", format!("must divide d_model={}", self.d_model)));
        }
        if self.max_positions < 3 {
            return Err(Error::config("encoder.max_positions", "must be at least 3"));
        }
        if self.vocab_size <= SEP_ID {
            return Err(Error::config("encoder.vocab_size", "must include the special tokens"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::config("encoder.dropout_rate", "must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Framed token ids ready for [`Encoder::forward`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedInput {
    pub ids: Vec<usize>,
    pub segments: Vec<usize>,
    /// False on PAD positions; those never receive attention.
    pub mask: Vec<bool>,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn non_pad_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.mask[i]).collect()
    }

    /// Positions of the second sequence's own tokens (segment 1, excluding
    /// the closing SEP).
    pub fn second_segment_positions(&self) -> Vec<usize> {
        let last = self.len().saturating_sub(1);
        (0..self.len()).filter(|&i| self.segments[i] == 1 && self.mask[i] && i != last).collect()
    }

    /// Right-pads with PAD positions up to `total` (mask false, segment 0).
    pub fn padded(mut self, total: usize) -> Self {
        while self.ids.len() < total {
            self.ids.push(PAD_ID);
            self.segments.push(0);
            self.mask.push(false);
        }
        self
    }
}

/// `[CLS] seq [SEP]`, all segment 0.
pub fn pack_single(seq: &[usize], max_positions: usize) -> Result<PackedInput> {
    if seq.len() + 2 > max_positions {
        return Err(Error::TooLong { len: seq.len() + 2, max: max_positions });
    }
    let mut ids = Vec::with_capacity(seq.len() + 2);
    ids.push(CLS_ID);
    ids.extend_from_slice(seq);
    ids.push(SEP_ID);
    let n = ids.len();
    Ok(PackedInput { ids, segments: vec![0; n], mask: vec![true; n] })
}

/// `[CLS] first [SEP] second [SEP]` with `second` and its closing SEP in
/// segment 1. With `truncate_first`, an overflow is absorbed by dropping
/// trailing tokens of `first`; `TooLong` is returned only when `second`
/// cannot fit even with `first` empty.
pub fn pack_pair(first: &[usize], second: &[usize], max_positions: usize, truncate_first: bool) -> Result<PackedInput> {
    let total = first.len() + second.len() + 3;
    let mut first = first;
    if total > max_positions {
        let overflow = total - max_positions;
        if !truncate_first || overflow > first.len() {
            return Err(Error::TooLong { len: total, max: max_positions });
        }
        first = &first[..first.len() - overflow];
    }
    let n = first.len() + second.len() + 3;
    let mut ids = Vec::with_capacity(n);
    ids.push(CLS_ID);
    ids.extend_from_slice(first);
    ids.push(SEP_ID);
    ids.extend_from_slice(second);
    ids.push(SEP_ID);
    let mut segments = vec![0; first.len() + 2];
    segments.resize(n, 1);
    Ok(PackedInput { ids, segments, mask: vec![true; n] })
}

#[derive(Clone, Debug, PartialEq)]
struct Block {
    attention: SelfAttention,
    attn_norm: LayerNorm,
    ff_in: Affine,
    ff_out: Affine,
    ff_norm: LayerNorm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    pub segment_embedding: ParamId,
    blocks: Vec<Block>,
}

impl Encoder {
    /// Registers the encoder's groups in `params` under `prefix` (e.g. `"enc"`).
    pub fn new(config: EncoderConfig, params: &mut ParamSet, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let token_embedding = params.add(format!("{prefix}.tok"), uniform(rng, config.vocab_size, d, EMBEDDING_INIT));
        let position_embedding =
            params.add(format!("{prefix}.pos"), uniform(rng, config.max_positions, d, EMBEDDING_INIT));
        let segment_embedding = params.add(format!("{prefix}.seg"), uniform(rng, 2, d, EMBEDDING_INIT));
        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let name = format!("{prefix}.layer{l}");
            blocks.push(Block {
                attention: SelfAttention::new(params, &format!("{name}.attn"), d, config.n_heads, rng)?,
                attn_norm: LayerNorm::new(params, &format!("{name}.attn_norm"), d),
                ff_in: Affine::new(params, &format!("{name}.ff_in"), d, config.d_ff, rng),
                ff_out: Affine::new(params, &format!("{name}.ff_out"), config.d_ff, d, rng),
                ff_norm: LayerNorm::new(params, &format!("{name}.ff_norm"), d),
            });
        }
        Ok(Self { config, token_embedding, position_embedding, segment_embedding, blocks })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.token_embedding, self.position_embedding, self.segment_embedding];
        for b in &self.blocks {
            ids.extend(b.attention.param_ids());
            ids.extend(b.attn_norm.param_ids());
            ids.extend(b.ff_in.param_ids());
            ids.extend(b.ff_out.param_ids());
            ids.extend(b.ff_norm.param_ids());
        }
        ids
    }

    /// Per-position embeddings (`len x d_model`). Dropout is applied only
    /// when `rng` is given.
    pub fn forward<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        input: &PackedInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let n = input.len();
        if n > self.config.max_positions {
            return Err(Error::TooLong { len: n, max: self.config.max_positions });
        }
        if input.segments.len() != n || input.mask.len() != n {
            return Err(Error::ShapeMismatch("packed input fields differ in length".into()));
        }
        let rate = self.config.dropout_rate;
        let tok = tape.param(params, self.token_embedding);
        let pos = tape.param(params, self.position_embedding);
        let seg = tape.param(params, self.segment_embedding);
        let positions: Vec<usize> = (0..n).collect();
        let t = tape.gather(tok, &input.ids)?;
        let p = tape.gather(pos, &positions)?;
        let s = tape.gather(seg, &input.segments)?;
        let tp = tape.add(t, p)?;
        let mut h = tape.add(tp, s)?;
        h = dropout(tape, h, rate, rng.as_deref_mut())?;

        for b in &self.blocks {
            let a = b.attention.forward(tape, params, h, &input.mask)?;
            let a = dropout(tape, a, rate, rng.as_deref_mut())?;
            let res = tape.add(h, a)?;
            h = b.attn_norm.forward(tape, params, res)?;

            let f = b.ff_in.forward(tape, params, h)?;
            let f = tape.gelu(f);
            let f = b.ff_out.forward(tape, params, f)?;
            let f = dropout(tape, f, rate, rng.as_deref_mut())?;
            let res = tape.add(h, f)?;
            h = b.ff_norm.forward(tape, params, res)?;
        }
        Ok(h)
    }

    /// Inference-mode encoding.
    pub fn encode(&self, params: &ParamSet, input: &PackedInput) -> Result<Matrix> {
        let mut tape = Tape::new();
        let h = self.forward(&mut tape, params, input, None)?;
        Ok(tape.value(h).clone())
    }
}

/// Random token ids in the non-special range, for tests and examples.
pub fn random_tokens<R: Rng>(rng: &mut R, len: usize, vocab_size: usize) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(SEP_ID + 1..vocab_size)).collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn small_config() -> EncoderConfig {
        EncoderConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, max_positions: 12, vocab_size: 20, dropout_rate: 0.0 }
    }

    #[test]
    fn pack_single_framing() {
        let p = pack_single(&[], 10).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, SEP_ID]);
        let p = pack_single(&[7], 10).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, 7, SEP_ID]);
        assert_eq!(p.segments, vec![0, 0, 0]);
        assert!(p.mask.iter().all(|&m| m));
        assert!(pack_single(&[5; 8], 10).is_ok());
        assert!(matches!(pack_single(&[5; 9], 10), Err(Error::TooLong { len: 11, max: 10 })));
    }

    #[test]
    fn pack_pair_framing() {
        let p = pack_pair(&[10, 11], &[12], 20, true).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, 10, 11, SEP_ID, 12, SEP_ID]);
        assert_eq!(p.segments, vec![0, 0, 0, 0, 1, 1]);
        assert_eq!(p.second_segment_positions(), vec![4]);

        let p = pack_pair(&[10, 11], &[], 20, true).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, 10, 11, SEP_ID, SEP_ID]);

        // 5 + 2 + 3 = 10 positions into 7: first loses 3 trailing tokens.
        let p = pack_pair(&[4, 5, 6, 7, 8], &[9, 9], 7, true).unwrap();
        assert_eq!(p.ids, vec![CLS_ID, 4, 5, SEP_ID, 9, 9, SEP_ID]);
        assert!(matches!(pack_pair(&[4, 5, 6, 7, 8], &[9, 9], 7, false), Err(Error::TooLong { .. })));
        assert!(matches!(pack_pair(&[4], &[9; 6], 7, true), Err(Error::TooLong { .. })));
    }

    #[test]
    fn output_shape_and_determinism() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::new(small_config(), &mut params, "enc", &mut rng).unwrap();
        let input = pack_pair(&[5, 6, 7], &[8], 12, true).unwrap();
        let a = enc.encode(&params, &input).unwrap();
        let b = enc.encode(&params, &input).unwrap();
        assert_eq!(a.shape(), (7, 8));
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn identical_tokens_match_when_positions_are_zeroed() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::new(small_config(), &mut params, "enc", &mut rng).unwrap();
        let input = pack_single(&[9, 4, 9], 12).unwrap();
        let with_pos = enc.encode(&params, &input).unwrap();
        assert!(with_pos.row(1).iter().zip(with_pos.row(3)).any(|(a, b)| a != b));

        params.value_mut(enc.position_embedding).fill(0.0);
        let out = enc.encode(&params, &input).unwrap();
        for (a, b) in out.row(1).iter().zip(out.row(3)) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pad_positions_do_not_leak() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::new(small_config(), &mut params, "enc", &mut rng).unwrap();
        let base = pack_single(&[5, 6], 12).unwrap().padded(7);
        let mut other = base.clone();
        other.ids[5] = 17;
        other.ids[6] = 11;
        let a = enc.encode(&params, &base).unwrap();
        let b = enc.encode(&params, &other).unwrap();
        for r in base.non_pad_positions() {
            assert_eq!(a.row(r), b.row(r));
        }
    }

    #[test]
    fn unknown_token_id_is_an_error() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = Encoder::new(small_config(), &mut params, "enc", &mut rng).unwrap();
        let input = pack_single(&[25], 12).unwrap();
        assert!(matches!(enc.encode(&params, &input), Err(Error::UnknownTokenId { id: 25, .. })));
    }
}
