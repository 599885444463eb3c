//! Writes the synthetic corpora as SQuAD-style JSON.
//!
//! ```text
//! cargo run --example generate_toy_corpus -- [out_dir] [seed]
//! ```
//!
//! Produces `out_dir/toy/{train,dev}.json` (facts corpus used by
//! `configs/toy.conf`) and `out_dir/bracketed/{train,dev}.json`.

use std::path::PathBuf;

use effqa::corpus::synthetic::{bracketed_split, toy_facts_split};

fn main() -> effqa::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "data".into()));
    let seed: u64 = args.next().map_or(7, |s| s.parse().expect("seed must be an integer"));

    let (train, dev) = toy_facts_split(seed);
    let (btrain, bdev) = bracketed_split(seed, 60, 20);
    for (dir, name, ds) in [("toy", "train", &train), ("toy", "dev", &dev), ("bracketed", "train", &btrain), ("bracketed", "dev", &bdev)] {
        let dir = out.join(dir);
        std::fs::create_dir_all(&dir).map_err(|e| effqa::Error::io(&dir, e))?;
        let path = dir.join(format!("{name}.json"));
        ds.write(&path)?;
        println!("{}: {} contexts, {} questions", path.display(), ds.num_paragraphs(), ds.num_questions());
    }
    Ok(())
}
