use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::squad::RawDataset;
use super::tokenize::{char_slice, tokenize, Token};
use super::vocab::Vocab;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub min_freq: usize,
    pub max_context_tokens: usize,
    pub max_question_tokens: usize,
    pub skip_bad_answers: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { min_freq: 1, max_context_tokens: 512, max_question_tokens: 64, skip_bad_answers: false }
    }
}

/// A context as token ids plus the surface tokens they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedContext {
    pub tokens: Vec<usize>,
    pub surface: Vec<Token>,
    /// Whether tokens past `max_context_tokens` were dropped.
    pub truncated: bool,
}

impl TokenizedContext {
    pub fn new(text: &str, vocab: &Vocab, max_tokens: usize) -> Self {
        let mut surface = tokenize(text);
        let truncated = surface.len() > max_tokens;
        surface.truncate(max_tokens);
        let tokens = surface.iter().map(|t| vocab.id(&t.text)).collect();
        Self { tokens, surface, truncated }
    }

    /// Builds a context directly from surface tokens (ids all UNK unless a
    /// vocabulary is applied later). Useful for alignment tests.
    pub fn from_surface(surface: Vec<Token>) -> Self {
        Self { tokens: vec![super::vocab::UNK_ID; surface.len()], surface, truncated: false }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedQuestion {
    pub tokens: Vec<usize>,
}

impl TokenizedQuestion {
    /// Tokenizes and truncates to `max_tokens`. `None` for an empty question.
    pub fn new(text: &str, vocab: &Vocab, max_tokens: usize) -> Option<Self> {
        let mut tokens = vocab.encode_text(text);
        tokens.truncate(max_tokens);
        (!tokens.is_empty()).then_some(Self { tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Gold answer as an inclusive token span.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "text")]
    pub answer_text: String,
}

/// Minimal token span overlapping the answer's non-whitespace characters.
/// A span that covers more than the answer (the answer starts or ends
/// mid-token) is accepted with a warning.
pub fn align_answer(ctx: &TokenizedContext, answer_text: &str, answer_start: usize) -> Result<GoldSpan> {
    let chars: Vec<char> = answer_text.chars().collect();
    let lead = chars.iter().take_while(|c| c.is_whitespace()).count();
    let trail = chars.iter().rev().take_while(|c| c.is_whitespace()).count();
    if lead == chars.len() {
        return Err(Error::AlignmentFailure(format!("answer {answer_text:?} has no visible characters")));
    }
    let lo = answer_start + lead;
    let hi = answer_start + chars.len() - trail;

    if let Some(last) = ctx.surface.last() {
        if ctx.truncated && hi > last.char_end {
            return Err(Error::AlignmentFailure(format!(
                "answer {answer_text:?} at {answer_start} lies past the truncated context"
            )));
        }
    }
    let start = ctx.surface.iter().position(|t| t.char_end > lo);
    let end = ctx.surface.iter().rposition(|t| t.char_start < hi);
    match (start, end) {
        (Some(s), Some(e)) if s <= e => {
            if ctx.surface[s].char_start < lo || ctx.surface[e].char_end > hi {
                log::warn!(
                    "answer {answer_text:?} at {answer_start} covers tokens {s}..={e} only partially"
                );
            }
            Ok(GoldSpan { start: s, end: e, answer_text: answer_text.to_string() })
        }
        _ => Err(Error::AlignmentFailure(format!(
            "no token overlaps answer {answer_text:?} at {answer_start}"
        ))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContextRecord {
    pub id: String,
    pub text: String,
    pub tokens: TokenizedContext,
}

impl ContextRecord {
    /// Original text covered by tokens `start..=end`.
    pub fn span_text(&self, start: usize, end: usize) -> &str {
        let s = &self.tokens.surface;
        char_slice(&self.text, s[start].char_start, s[end].char_end)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuestionRecord {
    pub qid: String,
    pub ctx_index: usize,
    pub text: String,
    pub question: TokenizedQuestion,
    /// Aligned from the first answer.
    pub gold: GoldSpan,
    /// Every gold answer text, used for evaluation.
    pub answers: Vec<String>,
}

/// Tokenized, aligned dataset ready for training and evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct QaDataset {
    pub contexts: Vec<ContextRecord>,
    pub questions: Vec<QuestionRecord>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct PrepareStats {
    pub contexts: usize,
    pub truncated_contexts: usize,
    pub questions_in: usize,
    pub questions_kept: usize,
    pub dropped_alignment: usize,
    pub dropped_empty: usize,
}

#[derive(Serialize)]
struct CacheRecord<'a> {
    qid: &'a str,
    ctx_id: &'a str,
    ctx_tokens: &'a [usize],
    q_tokens: &'a [usize],
    gold: &'a GoldSpan,
}

/// Context ids are `"{article index}_{paragraph index}"`.
pub fn context_id(article: usize, paragraph: usize) -> String {
    format!("{article}_{paragraph}")
}

pub fn prepare_dataset(raw: &RawDataset, vocab: &Vocab, cfg: &CorpusConfig) -> (QaDataset, PrepareStats) {
    let mut ds = QaDataset::default();
    let mut stats = PrepareStats::default();
    for (ai, art) in raw.data.iter().enumerate() {
        for (pi, para) in art.paragraphs.iter().enumerate() {
            let tokens = TokenizedContext::new(&para.context, vocab, cfg.max_context_tokens);
            stats.truncated_contexts += tokens.truncated as usize;
            let ctx_index = ds.contexts.len();
            for qa in &para.qas {
                stats.questions_in += 1;
                let Some(first) = qa.answers.first() else {
                    stats.dropped_alignment += 1;
                    continue;
                };
                let Some(question) = TokenizedQuestion::new(&qa.question, vocab, cfg.max_question_tokens) else {
                    log::warn!("question {} is empty; dropped", qa.id);
                    stats.dropped_empty += 1;
                    continue;
                };
                match align_answer(&tokens, &first.text, first.answer_start) {
                    Ok(gold) => ds.questions.push(QuestionRecord {
                        qid: qa.id.clone(),
                        ctx_index,
                        text: qa.question.clone(),
                        question,
                        gold,
                        answers: qa.answers.iter().map(|a| a.text.clone()).collect(),
                    }),
                    Err(e) => {
                        log::warn!("question {}: {e}; dropped", qa.id);
                        stats.dropped_alignment += 1;
                    }
                }
            }
            ds.contexts.push(ContextRecord { id: context_id(ai, pi), text: para.context.clone(), tokens });
        }
    }
    stats.contexts = ds.contexts.len();
    stats.questions_kept = ds.questions.len();
    (ds, stats)
}

impl QaDataset {
    pub fn context_of(&self, q: &QuestionRecord) -> &ContextRecord {
        &self.contexts[q.ctx_index]
    }

    pub fn context_index(&self, ctx_id: &str) -> Option<usize> {
        self.contexts.iter().position(|c| c.id == ctx_id)
    }

    /// Questions grouped by context index, in question order.
    pub fn questions_by_context(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.contexts.len()];
        for (i, q) in self.questions.iter().enumerate() {
            groups[q.ctx_index].push(i);
        }
        groups
    }

    /// A dataset restricted to the first `n` questions (and only the
    /// contexts they use).
    pub fn take_questions(&self, n: usize) -> QaDataset {
        let mut out = QaDataset::default();
        let mut remap = vec![usize::MAX; self.contexts.len()];
        for q in self.questions.iter().take(n) {
            if remap[q.ctx_index] == usize::MAX {
                remap[q.ctx_index] = out.contexts.len();
                out.contexts.push(self.contexts[q.ctx_index].clone());
            }
            let mut q = q.clone();
            q.ctx_index = remap[q.ctx_index];
            out.questions.push(q);
        }
        out
    }

    /// One JSON line per question:
    /// `{"qid","ctx_id","ctx_tokens","q_tokens","gold":{"start","end","text"}}`.
    pub fn write_cache<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for q in &self.questions {
            let ctx = self.context_of(q);
            let rec = CacheRecord {
                qid: &q.qid,
                ctx_id: &ctx.id,
                ctx_tokens: &ctx.tokens.tokens,
                q_tokens: &q.question.tokens,
                gold: &q.gold,
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_cache(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_cache(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::squad::{parse_squad_json, LoadOptions};
    use crate::eval::normalize_answer;

    fn cat_ctx() -> TokenizedContext {
        TokenizedContext::from_surface(tokenize("the cat sat"))
    }

    #[test]
    fn exact_and_multi_token_alignment() {
        let ctx = cat_ctx();
        assert_eq!(align_answer(&ctx, "cat", 4).unwrap(), GoldSpan { start: 1, end: 1, answer_text: "cat".into() });
        assert_eq!(
            align_answer(&ctx, "cat sat", 4).unwrap(),
            GoldSpan { start: 1, end: 2, answer_text: "cat sat".into() }
        );
    }

    /// Independent oracle: shortest token span whose characters cover every
    /// non-whitespace character of the answer range.
    fn brute_force_cover(ctx: &TokenizedContext, text: &str, lo: usize) -> Option<(usize, usize)> {
        let hi = lo + text.chars().count();
        let needed: Vec<usize> =
            text.chars().enumerate().filter(|(_, c)| !c.is_whitespace()).map(|(i, _)| lo + i).collect();
        let mut best: Option<(usize, usize)> = None;
        let m = ctx.surface.len();
        for s in 0..m {
            for e in s..m {
                let covers = needed
                    .iter()
                    .all(|&p| ctx.surface[s..=e].iter().any(|t| t.char_start <= p && p < t.char_end));
                if covers && best.map_or(true, |(bs, be)| e - s < be - bs) {
                    best = Some((s, e));
                }
            }
        }
        let _ = hi;
        best
    }

    #[test]
    fn partial_cover_matches_brute_force() {
        let ctx = cat_ctx();
        let gold = align_answer(&ctx, "at", 5).unwrap();
        assert_eq!((gold.start, gold.end), (1, 1));
        assert_eq!(brute_force_cover(&ctx, "at", 5), Some((1, 1)));

        let ctx = TokenizedContext::from_surface(tokenize("Hello, wonderful world-wide web!"));
        let text = "Hello, wonderful world-wide web!";
        for lo in 0..text.len() {
            for hi in lo + 1..=text.len() {
                let ans = &text[lo..hi];
                if ans.trim().is_empty() {
                    continue;
                }
                let got = align_answer(&ctx, ans, lo).unwrap();
                assert_eq!(Some((got.start, got.end)), brute_force_cover(&ctx, ans, lo), "{ans:?}");
            }
        }
    }

    #[test]
    fn alignment_failures() {
        let ctx = cat_ctx();
        assert!(matches!(align_answer(&ctx, "   ", 3), Err(Error::AlignmentFailure(_))));
        let vocab = Vocab::build(["the cat sat"], 1).unwrap();
        let truncated = TokenizedContext::new("the cat sat", &vocab, 2);
        assert!(truncated.truncated);
        assert!(matches!(align_answer(&truncated, "sat", 8), Err(Error::AlignmentFailure(_))));
        assert!(align_answer(&truncated, "cat", 4).is_ok());
    }

    #[test]
    fn prepare_round_trip_and_cache() {
        let raw = parse_squad_json(
            r#"{"data":[{"title":"t","paragraphs":[{"context":"The Eiffel tower, in Paris (France).",
            "qas":[{"id":"a","question":"Where?","answers":[{"text":"Paris (France)","answer_start":21},{"text":"Paris","answer_start":21}]},
                   {"id":"b","question":"What?","answers":[{"text":"Eiffel tower","answer_start":4}]}]}]}]}"#,
            LoadOptions::default(),
        )
        .unwrap();
        let vocab = crate::corpus::vocab::build_vocab(&raw, 1).unwrap();
        let (ds, stats) = prepare_dataset(&raw, &vocab, &CorpusConfig::default());
        assert_eq!(stats.questions_kept, 2);
        for q in &ds.questions {
            let ctx = ds.context_of(q);
            assert_eq!(normalize_answer(ctx.span_text(q.gold.start, q.gold.end)), normalize_answer(&q.gold.answer_text));
        }
        assert_eq!(ds.questions[0].answers.len(), 2);

        let mut buf = Vec::new();
        ds.write_cache(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["qid"], "a");
        assert_eq!(first["ctx_id"], "0_0");
        assert_eq!(first["gold"]["text"], "Paris (France)");
        assert_eq!(first["ctx_tokens"].as_array().unwrap().len(), ds.contexts[0].tokens.len());
    }
}
