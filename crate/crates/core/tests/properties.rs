use effqa::corpus::{align_answer, detokenize, tokenize, TokenizedContext, Vocab};
use effqa::dual::{piqa_loss, similarity, DualConfig, DualEncoder, PhraseVector, Pooling};
use effqa::encoder::{pack_pair, Encoder, EncoderConfig};
use effqa::eval::{exact_match, f1, normalize_answer};
use effqa::extractor::{beam_search, classic_beam, BeamConfig};
use effqa::index::{build_index, PhraseIndex};
use effqa::nn::{adamw_step, AdamWConfig, Matrix, ParamSet, Tape};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &["the", "cat", "sat", "on", "a", "mat", "red", "blue", "42", "paris", "o'neil", "x-ray", ",", ".", "!"];

fn sentence() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(prop::sample::select(WORDS), 1..25)
}

fn lp_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-6.0f64..0.0, len)
}

fn tiny_encoder(vocab: usize) -> EncoderConfig {
    EncoderConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, max_positions: 40, vocab_size: vocab, dropout_rate: 0.0 }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_spans_round_trip(words in sentence(), a in 0usize..25, len in 1usize..5) {
        let text = words.join(" ");
        let toks = tokenize(&text);
        let a = a % toks.len();
        let b = (a + len - 1).min(toks.len() - 1);
        let start_char = toks[a].char_start;
        let answer: String = text.chars().skip(start_char).take(toks[b].char_end - start_char).collect();
        let vocab = Vocab::build([text.as_str()], 1).unwrap();
        let ctx = TokenizedContext::new(&text, &vocab, 512);
        let gold = align_answer(&ctx, &answer, start_char).unwrap();
        prop_assert_eq!((gold.start, gold.end), (a, b));
        let span = detokenize(&ctx.surface[gold.start..=gold.end]);
        prop_assert_eq!(normalize_answer(&span), normalize_answer(&answer));
    }

    #[test]
    fn tokenize_is_idempotent_on_detokenized_output(text in "[ a-zA-Z0-9,.!?'-]{0,60}") {
        let once = detokenize(&tokenize(&text));
        let twice = detokenize(&tokenize(&once));
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn vocab_is_deterministic(texts in prop::collection::vec("[a-z ]{0,30}", 1..6), min_freq in 1usize..3) {
        let a = Vocab::build(texts.iter().map(String::as_str), min_freq);
        let b = Vocab::build(texts.iter().map(String::as_str), min_freq);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.tokens(), b.tokens()),
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "builds disagree"),
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..9, seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap();
        let mask: Vec<bool> = (0..cols).map(|j| j == 0 || rng.gen_bool(0.7)).collect();
        let mut tape = Tape::new();
        let v = tape.input(x);
        let s = tape.softmax_rows(v, &mask).unwrap();
        for r in 0..rows {
            let row = tape.value(s).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(row.iter().zip(&mask).all(|(p, &m)| m || *p == 0.0));
        }
    }

    #[test]
    fn adamw_is_bit_deterministic(seed in any::<u64>(), steps in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = ParamSet::new();
        set.add("w", Matrix::from_vec(3, 4, (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap());
        let grads: Vec<Vec<f64>> = (0..steps).map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let run = |mut s: ParamSet| {
            let cfg = AdamWConfig { weight_decay: 0.01, ..AdamWConfig::with_learning_rate(1e-2) };
            for g in &grads {
                for group in s.iter_mut() {
                    group.grad.data_mut().copy_from_slice(g);
                }
                adamw_step(&mut s, &cfg).unwrap();
            }
            s.iter().flat_map(|g| g.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(set.clone()), run(set));
    }

    #[test]
    fn pad_positions_never_leak(seed in any::<u64>(), q_len in 1usize..6, c_len in 1usize..10, pad in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let enc = Encoder::new(tiny_encoder(30), &mut params, "enc", &mut rng).unwrap();
        let q: Vec<usize> = (0..q_len).map(|_| rng.gen_range(4..30)).collect();
        let c: Vec<usize> = (0..c_len).map(|_| rng.gen_range(4..30)).collect();
        let packed = pack_pair(&c, &q, 40, true).unwrap();
        let real = packed.len();
        let padded = packed.padded((real + pad).min(40));
        let mut other = padded.clone();
        for id in other.ids.iter_mut().skip(real) {
            *id = rng.gen_range(0..30);
        }
        let a = enc.encode(&params, &padded).unwrap();
        let b = enc.encode(&params, &other).unwrap();
        let again = enc.encode(&params, &padded).unwrap();
        for r in 0..real {
            prop_assert!(a.row(r).iter().zip(b.row(r)).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        prop_assert_eq!(a.data(), again.data());
    }

    #[test]
    fn beam_candidates_are_well_formed(
        start in lp_vec(12), ends in prop::collection::vec(lp_vec(12), 12),
        m in 1usize..13, s in 1usize..8, e in 1usize..5, max_len in 1usize..6, k_frac in 0.0f64..1.0,
    ) {
        let cfg = BeamConfig { s, e, max_answer_tokens: max_len };
        let k = ((cfg.capacity() as f64) * k_frac) as usize + 1;
        let start = &start[..m];
        let cands = beam_search(start, &cfg, k, |st| Ok(st.iter().map(|&i| ends[i][..m].to_vec()).collect())).unwrap();
        let classic = classic_beam(start, &ends[0][..m], &cfg, k).unwrap();
        for list in [&cands, &classic] {
            prop_assert!(list.len() <= k);
            let mut seen = std::collections::HashSet::new();
            for (i, c) in list.iter().enumerate() {
                prop_assert_eq!(c.rank, i);
                prop_assert!(c.start <= c.end && c.end < m && c.end - c.start < max_len);
                prop_assert!(seen.insert((c.start, c.end)));
                if i > 0 {
                    prop_assert!(list[i - 1].score >= c.score);
                }
            }
        }
    }

    #[test]
    fn piqa_loss_is_non_negative(seed in any::<u64>(), n in 1usize..8, d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let cands: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect()).collect();
        let gold = rng.gen_range(0..n);
        prop_assert!(piqa_loss(&q, &cands, gold).unwrap() >= 0.0);
    }

    #[test]
    fn argmax_is_shift_invariant(seed in any::<u64>(), n in 1usize..30, dim in 1usize..6, shift in -400i32..400) {
        // Quarter-integer values keep every inner product and shift exact.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let quarter = |rng: &mut ChaCha8Rng| rng.gen_range(-8i32..9) as f64 * 0.25;
        let q: Vec<f64> = (0..dim).map(|_| quarter(&mut rng)).collect();
        let hs: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| quarter(&mut rng)).collect()).collect();
        let index_with = |bias: f64| {
            let vectors: Vec<PhraseVector> = hs
                .iter()
                .enumerate()
                .map(|(i, h)| {
                    let mut values = h.clone();
                    values.push(bias);
                    PhraseVector { ctx_id: "c".into(), start: i, end: i, text: String::new(), values }
                })
                .collect();
            build_index(&vectors).unwrap()
        };
        let mut q1 = q.clone();
        q1.push(1.0);
        let base = index_with(0.0).search(&q1, 1, Some("c")).unwrap();
        let shifted = index_with(shift as f64 * 0.25).search(&q1, 1, Some("c")).unwrap();
        prop_assert_eq!(base[0].entry, shifted[0].entry);
        prop_assert_eq!(shifted[0].score - base[0].score, shift as f64 * 0.25);
        let sims: Vec<f64> = hs.iter().map(|h| similarity(&q, h).unwrap()).collect();
        let best = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(base[0].score, best);
    }

    #[test]
    fn index_top_k_is_monotone_and_persistent(seed in any::<u64>(), n in 1usize..300, dim in 1usize..12, k in 0usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vectors: Vec<PhraseVector> = (0..n)
            .map(|i| PhraseVector {
                ctx_id: format!("c{}", i % 5),
                start: i,
                end: i + 1,
                text: format!("w{i}"),
                // Coarse values create ties, which must break consistently.
                values: (0..dim).map(|_| rng.gen_range(-2i32..3) as f64 * 0.5).collect(),
            })
            .collect();
        let index = build_index(&vectors).unwrap();
        let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2i32..3) as f64).collect();
        let shorter = index.search(&q, k, None).unwrap();
        let longer = index.search(&q, k + 1, None).unwrap();
        prop_assert_eq!(&longer[..shorter.len()], &shorter[..]);
        let back = PhraseIndex::from_bytes(&index.to_bytes()).unwrap();
        let again = back.search(&q, k + 1, None).unwrap();
        prop_assert!(again.iter().zip(&longer).all(|(a, b)| a.entry == b.entry && a.score.to_bits() == b.score.to_bits()));
    }

    #[test]
    fn em_never_exceeds_f1(pred in "[ a-zA-Z.,!'-]{0,20}", golds in prop::collection::vec("[ a-zA-Z.,!'-]{0,20}", 1..4)) {
        let em = exact_match(&pred, &golds).unwrap();
        let f = f1(&pred, &golds).unwrap();
        prop_assert!(em <= f);
        prop_assert!(em == 0.0 || f == 1.0);
    }
}

#[test]
fn towers_share_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for pooling in [Pooling::PairAll, Pooling::SecondSegment] {
        let de = DualEncoder::new(DualConfig { encoder: tiny_encoder(20), dim: 4, pooling, truncate_first: true }, &mut rng).unwrap();
        let (q, c) = (de.question_tower(), de.candidate_tower());
        assert!(std::ptr::eq(q.encoder, c.encoder));
        assert!(std::ptr::eq(q.projection, c.projection));
        assert_eq!(q.encoder.param_ids(), c.encoder.param_ids());
        let n_groups = de.params.len();
        assert_eq!(n_groups, q.encoder.param_ids().len() + 2, "exactly one encoder and one projection");
    }
}
