//! Tokenizes a context, aligns a character-offset answer to token indices
//! and shows the tokenized training record.

use effqa::corpus::{align_answer, build_vocab, parse_squad_json, prepare_dataset, CorpusConfig, LoadOptions, TokenizedContext};

const DATA: &str = r#"{"data":[{"title":"demo","paragraphs":[{
  "context":"The Eiffel Tower, completed in 1889, stands in Paris.",
  "qas":[{"id":"q1","question":"When was the tower completed?","answers":[{"text":"1889","answer_start":31}]},
         {"id":"q2","question":"Where is it?","answers":[{"text":" Paris","answer_start":46}]}]}]}]}"#;

fn main() -> effqa::Result<()> {
    let raw = parse_squad_json(DATA, LoadOptions::default())?;
    let vocab = build_vocab(&raw, 1)?;
    let context = &raw.data[0].paragraphs[0].context;

    let ctx = TokenizedContext::new(context, &vocab, 512);
    for (i, t) in ctx.surface.iter().enumerate() {
        println!("{i:>2} {:<10} chars {:>2}..{:<2} id {}", t.text, t.char_start, t.char_end, ctx.tokens[i]);
    }

    // Leading whitespace in the answer text is ignored when aligning.
    let gold = align_answer(&ctx, " Paris", 46)?;
    println!("\n' Paris' -> tokens [{}, {}]", gold.start, gold.end);

    let (ds, stats) = prepare_dataset(&raw, &vocab, &CorpusConfig::default());
    println!("{stats:?}");
    for q in &ds.questions {
        let ctx = ds.context_of(q);
        println!("{}: {:?} -> [{}, {}] = {:?}", q.qid, q.text, q.gold.start, q.gold.end, ctx.span_text(q.gold.start, q.gold.end));
    }
    let mut cache = Vec::new();
    ds.write_cache(&mut cache).expect("in-memory write");
    print!("\ncache records:\n{}", String::from_utf8_lossy(&cache));
    Ok(())
}
