//! Decodes spans from hand-written log-probabilities with the conditional
//! beam, classic exact top-k and classic beam decoders.

use effqa::extractor::{beam_search, classic_beam, classic_optimal, count_naive_spans, BeamConfig, SpanCandidate};

fn log_softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = x.iter().map(|v| (v - max).exp()).sum();
    x.iter().map(|v| v - max - z.ln()).collect()
}

fn show(title: &str, spans: &[SpanCandidate], words: &[&str]) {
    println!("{title}");
    for c in spans {
        println!("  #{} [{}, {}] {:<22} {:.3}", c.rank, c.start, c.end, words[c.start..=c.end].join(" "), c.score);
    }
}

fn main() -> effqa::Result<()> {
    let words = ["open1", "x", "close2", "close1", "open2", "y", "close1", "close2"];
    let m = words.len();
    let start = log_softmax(&[3.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0]);
    // The end distribution depends on the start: each opener wants its own closer.
    let conditional = |s: usize| {
        let mut logits = vec![0.0; m];
        for (j, w) in words.iter().enumerate() {
            if (s == 0 && *w == "close1") || (s == 4 && *w == "close2") {
                logits[j] = 4.0;
            }
        }
        log_softmax(&logits)
    };
    // What an end head blind to the start sees: both closers look alike.
    let classic_end = log_softmax(&[0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0]);

    let cfg = BeamConfig { s: 2, e: 2, max_answer_tokens: 4 };
    println!("{m} tokens: {} unconstrained spans\n", count_naive_spans(m));
    let beam = beam_search(&start, &cfg, 4, |starts| Ok(starts.iter().map(|&s| conditional(s)).collect()))?;
    show("conditional beam (s=2, e=2):", &beam, &words);
    show("classic exact top-4:", &classic_optimal(&start, &classic_end, cfg.max_answer_tokens, 4)?, &words);
    show("classic beam (s=2, e=2):", &classic_beam(&start, &classic_end, &cfg, 4)?, &words);
    Ok(())
}
