//! Builds a phrase index from random vectors, searches it globally and
//! within one context, and round-trips it through a file.

use effqa::dual::PhraseVector;
use effqa::index::{build_index, load_index, save_index};
use rand::{Rng, SeedableRng};

fn main() -> effqa::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let dim = 16;
    let vectors: Vec<PhraseVector> = (0..5000)
        .map(|i| PhraseVector {
            ctx_id: format!("doc{}", i % 50),
            start: i / 50,
            end: i / 50 + 1,
            text: format!("phrase {i}"),
            values: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect();
    let index = build_index(&vectors)?;
    println!("{} entries, {} contexts, dim {}", index.len(), index.contexts().len(), index.dim());

    let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    for (label, filter) in [("global", None), ("doc7", Some("doc7"))] {
        println!("{label}:");
        for h in index.search(&q, 3, filter)? {
            let e = index.entry(h.entry);
            println!("  #{} {:.4} {} [{}, {}] {}", h.rank, h.score, e.ctx_id, e.start, e.end, e.text);
        }
    }

    let path = std::env::temp_dir().join("effqa-example.pqix");
    save_index(&index, &path)?;
    let back = load_index(&path)?;
    println!("{} bytes on disk, reload identical: {}", std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0), back == index);
    std::fs::remove_file(&path).ok();
    Ok(())
}
