//! Quick runtime checks of the decoders, losses, metrics, index and
//! gradients against brute-force oracles. Backs the `selftest` subcommand.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{GoldSpan, TokenizedContext};
use crate::dual::{piqa_loss, DualConfig, DualEncoder, PhraseVector, Pooling};
use crate::encoder::EncoderConfig;
use crate::error::Result;
use crate::eval::{exact_match, f1};
use crate::extractor::{beam_search, classic_optimal, extractor_loss, BeamConfig, Extractor, SpanCandidate};
use crate::index::{build_index, PhraseIndex};
use crate::nn::{decode_checkpoint, encode_checkpoint, grad_check, Matrix};

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lse).collect()
}

fn random_lp(rng: &mut ChaCha8Rng, m: usize) -> Vec<f64> {
    log_softmax(&(0..m).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>())
}

/// Every feasible span sorted by the shared candidate order.
fn enumerate(m: usize, max_len: usize, score: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize, f64)> {
    let mut all = Vec::new();
    for s in 0..m {
        for e in s..(s + max_len).min(m) {
            all.push((s, e, score(s, e)));
        }
    }
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all
}

fn same_spans(got: &[SpanCandidate], want: &[(usize, usize, f64)]) -> bool {
    got.len() == want.len()
        && got
            .iter()
            .zip(want)
            .enumerate()
            .all(|(r, (c, w))| c.rank == r && c.start == w.0 && c.end == w.1 && c.score.to_bits() == w.2.to_bits())
}

fn outcome(name: &'static str, result: Result<(bool, String)>) -> CheckOutcome {
    match result {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome { name, passed: false, detail: format!("error: {e}") },
    }
}

fn beam_oracle() -> Result<(bool, String)> {
    let mut cases = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for m in 1..=8 {
            let start = random_lp(&mut rng, m);
            let ends: Vec<Vec<f64>> = (0..m).map(|_| random_lp(&mut rng, m)).collect();
            let cfg = BeamConfig { s: m, e: m, max_answer_tokens: m };
            let want = enumerate(m, m, |s, e| start[s] + ends[s][e]);
            let got = beam_search(&start, &cfg, want.len(), |starts| Ok(starts.iter().map(|&s| ends[s].clone()).collect()))?;
            if !same_spans(&got, &want) {
                return Ok((false, format!("mismatch at seed {seed}, m={m}")));
            }
            cases += 1;
        }
    }
    Ok((true, format!("{cases} cases equal exhaustive enumeration")))
}

fn classic_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..100 {
        let m = rng.gen_range(1..=40);
        let max_len = rng.gen_range(1..=12);
        let k = rng.gen_range(1..=60);
        let start = random_lp(&mut rng, m);
        let end = random_lp(&mut rng, m);
        let mut want = enumerate(m, max_len, |s, e| start[s] + end[e]);
        want.truncate(k);
        if !same_spans(&classic_optimal(&start, &end, max_len, k)?, &want) {
            return Ok((false, format!("mismatch on instance {i}")));
        }
    }
    Ok((true, "100 instances equal global top-k".into()))
}

fn loss_identities() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let single = piqa_loss(&q, std::slice::from_ref(&c), 0)?;
    let pair = piqa_loss(&q, &[c.clone(), c.clone()], 1)?;

    let enc = EncoderConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_positions: 32, vocab_size: 20, dropout_rate: 0.0 };
    let beam = BeamConfig { s: 50, e: 2, max_answer_tokens: 4 };
    let mut ex = Extractor::new(enc, beam, &mut rng)?;
    for name in ["ext.start.weight", "ext.start.bias", "ext.end_out.weight", "ext.end_out.bias"] {
        let id = ex.params.find(name).expect("extractor head parameter");
        ex.params.value_mut(id).data_mut().fill(0.0);
    }
    let ctx = TokenizedContext { tokens: (4..14).collect(), surface: Vec::new(), truncated: false };
    let gold = GoldSpan { start: 7, end: 8, answer_text: String::new() };
    let uniform = extractor_loss(&ex, &ctx, &gold)?;
    let expected = 10f64.ln() + 3f64.ln();
    let passed = single == 0.0 && (pair - 2f64.ln()).abs() < 1e-12 && (uniform - expected).abs() < 1e-9;
    Ok((passed, format!("singleton {single:e}, pair-ln2 {:e}, uniform error {:e}", pair - 2f64.ln(), uniform - expected)))
}

fn metric_cases() -> Result<(bool, String)> {
    let g = |s: &[&str]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let cases: [(&str, Vec<String>, f64, f64); 6] = [
        ("The Cat!", g(&["cat"]), 1.0, 1.0),
        ("cat sat", g(&["the cat sat on"]), 0.0, 0.8),
        ("cat sat", g(&["cat"]), 0.0, 2.0 / 3.0),
        ("dog", g(&["cat", "dog"]), 1.0, 1.0),
        ("", g(&["cat"]), 0.0, 0.0),
        ("a", g(&["the"]), 1.0, 1.0),
    ];
    for (pred, golds, em, f) in &cases {
        if exact_match(pred, golds)? != *em || (f1(pred, golds)? - f).abs() > 1e-12 {
            return Ok((false, format!("{pred:?} vs {golds:?}")));
        }
    }
    Ok((true, format!("{} hand-worked cases", cases.len())))
}

fn index_oracle() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dim = 16;
    let vectors: Vec<PhraseVector> = (0..2000)
        .map(|i| PhraseVector {
            ctx_id: format!("c{}", i % 7),
            start: i,
            end: i,
            text: String::new(),
            values: (0..dim).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect(),
        })
        .collect();
    let index = build_index(&vectors)?;
    for _ in 0..10 {
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut brute: Vec<(usize, f64)> = (0..index.len()).map(|i| (i, index.score(&q, i))).collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let hits = index.search(&q, 25, None)?;
        if hits.iter().zip(&brute).any(|(h, b)| h.entry != b.0 || h.score != b.1) {
            return Ok((false, "search differs from brute force".into()));
        }
    }
    let bytes = index.to_bytes();
    let back = PhraseIndex::from_bytes(&bytes)?;
    Ok((back.to_bytes() == bytes && back == index, "2000 vectors, 10 queries, round trip bit-exact".into()))
}

fn gradients() -> Result<(bool, String)> {
    let enc = EncoderConfig { d_model: 8, n_layers: 1, n_heads: 2, d_ff: 16, max_positions: 32, vocab_size: 20, dropout_rate: 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let ex = Extractor::new(enc.clone(), BeamConfig { s: 50, e: 2, max_answer_tokens: 3 }, &mut rng)?;
    let toks = [4, 7, 9, 5, 12, 6];
    let golds = [GoldSpan { start: 1, end: 2, answer_text: String::new() }];
    let a = grad_check(&ex.params, 1e-4, 4, 1, |t, p| ex.loss_on(t, p, &toks, &golds, true, None))?;
    let cfg = DualConfig { encoder: enc, dim: 6, pooling: Pooling::PairAll, truncate_first: true };
    let de = DualEncoder::new(cfg, &mut rng)?;
    let b = grad_check(&de.params, 1e-4, 4, 2, |t, p| de.loss_on(t, p, &[8, 9, 10], &toks, &[(0, 1), (2, 4), (5, 5)], 1, None))?;
    let worst = a.max_rel_error.max(b.max_rel_error);
    Ok((worst < 1e-4, format!("max relative error {worst:.2e}")))
}

fn checkpoint_round_trip() -> Result<(bool, String)> {
    let mut params = crate::nn::ParamSet::new();
    params.add("x", Matrix::from_rows(&[[0.5, -1.25], [3.0, 0.0]]));
    let bytes = encode_checkpoint(&params);
    let back = decode_checkpoint(&bytes)?;
    Ok((back.values_equal(&params) && encode_checkpoint(&back) == bytes, format!("{} bytes", bytes.len())))
}

/// Runs every check; never stops early.
pub fn run_selftest() -> Vec<CheckOutcome> {
    vec![
        outcome("beam-oracle", beam_oracle()),
        outcome("classic-oracle", classic_oracle()),
        outcome("loss-identities", loss_identities()),
        outcome("metrics", metric_cases()),
        outcome("index", index_oracle()),
        outcome("gradients", gradients()),
        outcome("checkpoint", checkpoint_round_trip()),
    ]
}
