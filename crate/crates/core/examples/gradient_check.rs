//! Verifies backpropagation through the full extractor and the dual encoder
//! against finite differences on sampled coordinates.

use effqa::corpus::GoldSpan;
use effqa::dual::{DualConfig, DualEncoder, Pooling};
use effqa::encoder::EncoderConfig;
use effqa::extractor::{BeamConfig, Extractor};
use effqa::nn::{grad_check, GradCheckReport};
use rand::SeedableRng;

fn show(name: &str, r: &GradCheckReport) {
    println!("{name}: {} coordinates, max relative error {:.2e}", r.coords_checked, r.max_rel_error);
    if let Some((group, i, a, n)) = &r.worst {
        println!("  worst {group}[{i}]: analytic {a:.6e}, numeric {n:.6e}");
    }
}

fn main() -> effqa::Result<()> {
    let enc = EncoderConfig { d_model: 8, n_layers: 2, n_heads: 2, d_ff: 16, max_positions: 32, vocab_size: 20, dropout_rate: 0.0 };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);

    let ex = Extractor::new(enc.clone(), BeamConfig { s: 50, e: 2, max_answer_tokens: 3 }, &mut rng)?;
    let tokens = [5, 9, 4, 11, 7, 6];
    let golds = [GoldSpan { start: 1, end: 3, answer_text: String::new() }];
    let r = grad_check(&ex.params, 1e-4, 10, 0, |tape, p| ex.loss_on(tape, p, &tokens, &golds, true, None))?;
    show("extractor", &r);

    for pooling in [Pooling::PairAll, Pooling::SecondSegment] {
        let de = DualEncoder::new(DualConfig { encoder: enc.clone(), dim: 6, pooling, truncate_first: true }, &mut rng)?;
        let spans = [(0, 1), (2, 4), (5, 5)];
        let r = grad_check(&de.params, 1e-4, 10, 1, |tape, p| de.loss_on(tape, p, &[8, 9, 10], &tokens, &spans, 1, None))?;
        show(&format!("dual encoder ({pooling:?})"), &r);
    }
    Ok(())
}
