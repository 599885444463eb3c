use rand::Rng;

use super::matrix::Matrix;
use super::param::{xavier_uniform, ParamId, ParamSet};
use super::tape::{masked_cross_entropy, Tape, Var};
use crate::error::{Error, Result};

/// Dense layer `y = x W + b`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Affine {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let weight = params.add(format!("{name}.weight"), xavier_uniform(rng, d_in, d_out));
        let bias = params.add(format!("{name}.bias"), Matrix::zeros(1, d_out));
        Self { weight, bias, d_in, d_out }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, params: &'p ParamSet, x: Var) -> Result<Var> {
        let w = tape.param(params, self.weight);
        let b = tape.param(params, self.bias);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        let gain = params.add(format!("{name}.gain"), Matrix::filled(1, dim, 1.0));
        let bias = params.add(format!("{name}.bias"), Matrix::zeros(1, dim));
        Self { gain, bias, eps: Self::DEFAULT_EPS }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, params: &'p ParamSet, x: Var) -> Result<Var> {
        let g = tape.param(params, self.gain);
        let b = tape.param(params, self.bias);
        tape.layer_norm(x, g, b, self.eps)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.gain, self.bias]
    }
}

/// Multi-head scaled dot-product self-attention with an output projection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelfAttention {
    pub query: Affine,
    pub key: Affine,
    pub value: Affine,
    pub output: Affine,
    pub n_heads: usize,
}

impl SelfAttention {
    pub fn new<R: Rng>(params: &mut ParamSet, name: &str, d_model: usize, n_heads: usize, rng: &mut R) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::ShapeMismatch(format!("d_model {d_model} is not divisible by {n_heads} heads")));
        }
        Ok(Self {
            query: Affine::new(params, &format!("{name}.query"), d_model, d_model, rng),
            key: Affine::new(params, &format!("{name}.key"), d_model, d_model, rng),
            value: Affine::new(params, &format!("{name}.value"), d_model, d_model, rng),
            output: Affine::new(params, &format!("{name}.output"), d_model, d_model, rng),
            n_heads,
        })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, params: &'p ParamSet, x: Var, mask: &[bool]) -> Result<Var> {
        self.forward_with_weights(tape, params, x, mask).map(|(out, _)| out)
    }

    /// Like [`forward`](Self::forward) but also returns each head's
    /// attention-weight node (rows: queries, columns: keys).
    pub fn forward_with_weights<'p>(
        &self,
        tape: &mut Tape<'p>,
        params: &'p ParamSet,
        x: Var,
        mask: &[bool],
    ) -> Result<(Var, Vec<Var>)> {
        let (m, d) = tape.shape(x);
        if d != self.query.d_in {
            return Err(Error::ShapeMismatch(format!("attention input width {d}, expected {}", self.query.d_in)));
        }
        if mask.len() != m {
            return Err(Error::ShapeMismatch(format!("mask length {} for {m} positions", mask.len())));
        }
        if !mask.iter().any(|&k| k) {
            return Err(Error::AllMasked { row: 0 });
        }
        let dh = d / self.n_heads;
        let q = self.query.forward(tape, params, x)?;
        let k = self.key.forward(tape, params, x)?;
        let v = self.value.forward(tape, params, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_t(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax_rows(scores, mask)?;
            weights.push(probs);
            heads.push(tape.matmul(probs, vh)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        Ok((self.output.forward(tape, params, joined)?, weights))
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|a| a.param_ids())
            .collect()
    }
}

/// Inverted dropout. With `rng = None` or `rate = 0` this is the identity.
pub fn dropout<R: Rng>(tape: &mut Tape<'_>, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let n = tape.value(x).len();
            let scale = (0..n).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect();
            tape.dropout_with_mask(x, scale)
        }
        _ => Ok(x),
    }
}

/// `-log softmax(logits)[target]` and its gradient `softmax - one_hot`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    let (loss, mut grad) = masked_cross_entropy(logits, None, target)?;
    grad[target] -= 1.0;
    Ok((loss, grad))
}

/// Numerically stable log-softmax over the entries selected by `mask`;
/// unselected entries become negative infinity.
pub fn log_softmax_masked(logits: &[f64], mask: impl Fn(usize) -> bool) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| mask(*i))
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; logits.len()];
    }
    let z: f64 = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| mask(*i))
        .map(|(_, v)| (v - max).exp())
        .sum();
    let lz = z.ln() + max;
    logits
        .iter()
        .enumerate()
        .map(|(i, v)| if mask(i) { v - lz } else { f64::NEG_INFINITY })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn affine_identity_and_hand_sum() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Affine::new(&mut params, "a", 2, 2, &mut rng);
        *params.value_mut(layer.weight) = Matrix::identity(2);
        let mut tape = Tape::new();
        let x = tape.input(Matrix::identity(2));
        let y = layer.forward(&mut tape, &params, x).unwrap();
        assert_eq!(tape.value(y), &Matrix::identity(2));

        let mut params = ParamSet::new();
        let layer = Affine::new(&mut params, "b", 2, 1, &mut rng);
        *params.value_mut(layer.weight) = Matrix::from_rows(&[[1.0], [1.0]]);
        *params.value_mut(layer.bias) = Matrix::from_rows(&[[3.0]]);
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[[1.0, 2.0]]));
        let y = layer.forward(&mut tape, &params, x).unwrap();
        assert_eq!(tape.value(y).item(), 6.0);
    }

    #[test]
    fn affine_shape_mismatch() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let layer = Affine::new(&mut params, "a", 3, 2, &mut rng);
        let mut tape = Tape::new();
        let x = tape.input(Matrix::zeros(1, 2));
        assert!(matches!(layer.forward(&mut tape, &params, x), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn layer_norm_constant_and_normalized_rows() {
        let mut params = ParamSet::new();
        let ln = LayerNorm::new(&mut params, "ln", 3);
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[[5.0, 5.0, 5.0]]));
        let y = ln.forward(&mut tape, &params, x).unwrap();
        assert!(tape.value(y).data().iter().all(|v| *v == 0.0));

        let mut params = ParamSet::new();
        let mut ln = LayerNorm::new(&mut params, "ln", 2);
        ln.eps = 1e-300;
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[[1.0, -1.0]]));
        let y = ln.forward(&mut tape, &params, x).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -1.0]);
    }

    #[test]
    fn attention_single_token_is_projected_value() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let attn = SelfAttention::new(&mut params, "att", 4, 2, &mut rng).unwrap();
        let xm = Matrix::from_rows(&[[0.3, -0.2, 0.9, 0.1]]);
        let mut tape = Tape::new();
        let x = tape.input(xm.clone());
        let y = attn.forward(&mut tape, &params, x, &[true]).unwrap();

        let mut t2 = Tape::new();
        let x2 = t2.input(xm);
        let v = attn.value.forward(&mut t2, &params, x2).unwrap();
        let o = attn.output.forward(&mut t2, &params, v).unwrap();
        assert!(tape.value(y).max_abs_diff(t2.value(o)) < 1e-15);
    }

    #[test]
    fn attention_identical_tokens_split_evenly() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let attn = SelfAttention::new(&mut params, "att", 4, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Matrix::from_rows(&[[0.5, 0.1, -0.3, 0.2], [0.5, 0.1, -0.3, 0.2]]));
        let (_, weights) = attn.forward_with_weights(&mut tape, &params, x, &[true, true]).unwrap();
        for w in weights {
            for v in tape.value(w).data() {
                assert!((v - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_errors() {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(SelfAttention::new(&mut params, "bad", 6, 4, &mut rng).is_err());
        let attn = SelfAttention::new(&mut params, "att", 4, 2, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Matrix::zeros(2, 4));
        assert!(matches!(
            attn.forward(&mut tape, &params, x, &[false, false]),
            Err(Error::AllMasked { .. })
        ));
        assert!(matches!(attn.forward(&mut tape, &params, x, &[true]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn cross_entropy_cases() {
        let (loss, grad) = softmax_cross_entropy(&[0.7; 5], 2).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-15);
        assert!(grad.iter().sum::<f64>().abs() < 1e-15);

        // log(1 + e^-20), evaluated independently with ln_1p.
        let expected = (-20f64).exp().ln_1p();
        let (loss, _) = softmax_cross_entropy(&[10.0, -10.0], 0).unwrap();
        assert!((loss - expected).abs() < 1e-20);
        assert!((loss - 2.061_153_6e-9).abs() < 1e-15);

        assert!(matches!(softmax_cross_entropy(&[1.0], 1), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn log_softmax_masked_sums_to_one() {
        let lp = log_softmax_masked(&[1.0, 2.0, 3.0, 4.0], |i| i != 2);
        assert_eq!(lp[2], f64::NEG_INFINITY);
        let s: f64 = lp.iter().map(|v| v.exp()).sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
