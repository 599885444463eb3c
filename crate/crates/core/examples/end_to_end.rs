//! Runs every pipeline stage on the toy corpus, then answers a free-text
//! question from the resulting index.
//!
//! ```text
//! cargo run --release --example generate_toy_corpus
//! cargo run --release --example end_to_end -- [config] [work_dir]
//! ```

use std::path::PathBuf;

use effqa::config::PipelineConfig;
use effqa::pipeline;

fn main() -> effqa::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let config = PathBuf::from(args.next().unwrap_or_else(|| "configs/toy.conf".into()));
    let mut cfg = PipelineConfig::load(&config)?;
    if let Some(work) = args.next() {
        cfg.paths.work = work.into();
    }

    let ev = pipeline::run_all(&cfg)?;
    println!("{}", ev.report.summary());
    println!("candidate EM-recall@{}: {:.2}, oracle EM {:.2}", ev.recall.k, 100.0 * ev.recall.em_recall, ev.oracle_em);

    let q = &ev.report.per_question[0];
    println!("\nsample: {} predicted {:?}, gold {:?}", q.qid, q.prediction, q.golds);
    for hit in pipeline::query(&cfg, "which city is mentioned ?", None, 3)? {
        println!("{:>2} {:>8.3} {:<6} {}", hit.rank + 1, hit.score, hit.ctx_id, hit.text);
    }
    Ok(())
}
