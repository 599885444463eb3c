//! Generators for the two synthetic reading-comprehension corpora.
//!
//! *Bracketed spans*: each context is a run of `open<t> w.. close<t>`
//! spans. Any start is followed by several plausible close tokens inside the
//! answer window, but only the one of matching type closes a real span, so
//! an end distribution that ignores the start cannot single it out.
//!
//! *Facts*: filler words with one value from each of several categories
//! (a two-digit number, a color, an animal, a city) scattered among them.
//! Each question asks for one category. With only the number category this
//! is the "find the unique number" task.

use rand::seq::SliceRandom;
use rand::Rng;

use super::squad::{Answer, Article, Paragraph, Qa, RawDataset};

const FILLER: &[&str] = &[
    "and", "then", "near", "over", "under", "with", "from", "into", "past", "old", "small", "quiet", "river", "stone",
    "road", "house", "field", "light", "early", "later", "very", "some", "many", "often", "there", "here", "along",
    "beside", "across", "green", "wide", "long", "story", "people", "water", "hill",
];

#[derive(Clone, Debug, PartialEq)]
pub struct BracketConfig {
    pub n_contexts: usize,
    pub spans_per_context: usize,
    pub n_types: usize,
    pub inner_vocab: usize,
    pub max_inner: usize,
    /// Probability of one filler word between consecutive spans.
    pub filler_prob: f64,
}

impl Default for BracketConfig {
    fn default() -> Self {
        Self { n_contexts: 100, spans_per_context: 20, n_types: 10, inner_vocab: 200, max_inner: 2, filler_prob: 0.3 }
    }
}

struct TextBuilder {
    text: String,
    chars: usize,
}

impl TextBuilder {
    fn new() -> Self {
        Self { text: String::new(), chars: 0 }
    }

    /// Appends a word and returns its character offset.
    fn push(&mut self, word: &str) -> usize {
        if !self.text.is_empty() {
            self.text.push(' ');
            self.chars += 1;
        }
        let at = self.chars;
        self.text.push_str(word);
        self.chars += word.chars().count();
        at
    }
}

/// One question per span; the answer is the whole span including both
/// bracket words. Span texts are unique within a context.
pub fn bracketed_corpus<R: Rng>(cfg: &BracketConfig, rng: &mut R) -> RawDataset {
    let mut paragraphs = Vec::with_capacity(cfg.n_contexts);
    for c in 0..cfg.n_contexts {
        // Types cycle through a permutation so equal types are n_types spans apart.
        let mut perm: Vec<usize> = (0..cfg.n_types).collect();
        perm.shuffle(rng);
        let mut tb = TextBuilder::new();
        let mut seen = std::collections::HashSet::new();
        let mut qas = Vec::new();
        for i in 0..cfg.spans_per_context {
            if i > 0 && rng.gen_bool(cfg.filler_prob) {
                tb.push(FILLER[rng.gen_range(0..FILLER.len())]);
            }
            let t = perm[i % cfg.n_types];
            let span = loop {
                let len = rng.gen_range(1..=cfg.max_inner);
                let inner: Vec<String> = (0..len).map(|_| format!("w{}", rng.gen_range(0..cfg.inner_vocab))).collect();
                let s = format!("open{t} {} close{t}", inner.join(" "));
                if seen.insert(s.clone()) {
                    break s;
                }
            };
            let mut words = span.split(' ');
            let start = tb.push(words.next().expect("open word"));
            for w in words {
                tb.push(w);
            }
            qas.push(Qa {
                id: format!("br{c}_{i}"),
                question: format!("which span is number {i} ?"),
                answers: vec![Answer { text: span, answer_start: start }],
            });
        }
        paragraphs.push(Paragraph { context: tb.text, qas });
    }
    RawDataset { data: vec![Article { title: "bracketed".into(), paragraphs }] }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Number,
    Color,
    Animal,
    City,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::Number, Category::Color, Category::Animal, Category::City];

    fn values(self) -> Vec<String> {
        let words: &[&str] = match self {
            Category::Number => return (12..100).map(|n| n.to_string()).collect(),
            Category::Color => &["red", "blue", "yellow", "purple", "orange", "black", "white", "brown", "pink", "gray"],
            Category::Animal => &["fox", "owl", "horse", "tiger", "rabbit", "eagle", "otter", "wolf", "camel", "lynx"],
            Category::City => &["paris", "lyon", "berlin", "madrid", "rome", "vienna", "oslo", "lisbon", "prague", "dublin"],
        };
        words.iter().map(|s| s.to_string()).collect()
    }

    fn questions(self) -> &'static [&'static str] {
        match self {
            Category::Number => &["which number is mentioned ?", "what number appears in the text ?"],
            Category::Color => &["what color appears ?", "which color is mentioned ?"],
            Category::Animal => &["which animal is mentioned ?", "what animal appears in the text ?"],
            Category::City => &["which city is named ?", "what city appears in the text ?"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Number => "number",
            Category::Color => "color",
            Category::Animal => "animal",
            Category::City => "city",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactsConfig {
    pub n_contexts: usize,
    pub categories: Vec<Category>,
    pub min_filler: usize,
    pub max_filler: usize,
}

impl Default for FactsConfig {
    fn default() -> Self {
        Self { n_contexts: 200, categories: Category::ALL.to_vec(), min_filler: 12, max_filler: 24 }
    }
}

impl FactsConfig {
    /// Contexts holding exactly one number among filler words.
    pub fn unique_number(n_contexts: usize) -> Self {
        Self { n_contexts, categories: vec![Category::Number], ..Self::default() }
    }
}

/// One question per category per context.
pub fn facts_corpus<R: Rng>(cfg: &FactsConfig, rng: &mut R) -> RawDataset {
    let pools: Vec<Vec<String>> = cfg.categories.iter().map(|c| c.values()).collect();
    let mut paragraphs = Vec::with_capacity(cfg.n_contexts);
    for c in 0..cfg.n_contexts {
        let n_filler = rng.gen_range(cfg.min_filler..=cfg.max_filler);
        let mut words: Vec<(String, Option<usize>)> =
            (0..n_filler).map(|_| (FILLER[rng.gen_range(0..FILLER.len())].to_string(), None)).collect();
        for (ci, pool) in pools.iter().enumerate() {
            let value = pool[rng.gen_range(0..pool.len())].clone();
            let at = rng.gen_range(0..=words.len());
            words.insert(at, (value, Some(ci)));
        }
        let mut tb = TextBuilder::new();
        let mut found = vec![None; pools.len()];
        for (w, cat) in &words {
            let off = tb.push(w);
            if let Some(ci) = cat {
                found[*ci] = Some((w.clone(), off));
            }
        }
        let qas = cfg
            .categories
            .iter()
            .zip(found)
            .map(|(cat, f)| {
                let (text, answer_start) = f.expect("every category placed");
                let qs = cat.questions();
                Qa {
                    id: format!("fx{c}_{}", cat.name()),
                    question: qs[rng.gen_range(0..qs.len())].to_string(),
                    answers: vec![Answer { text, answer_start }],
                }
            })
            .collect();
        paragraphs.push(Paragraph { context: tb.text, qas });
    }
    RawDataset { data: vec![Article { title: "facts".into(), paragraphs }] }
}

/// Context counts of the bundled toy corpus.
pub const TOY_TRAIN_CONTEXTS: usize = 150;
pub const TOY_DEV_CONTEXTS: usize = 40;

/// The bundled facts corpus: independent train and dev draws from one seed.
pub fn toy_facts_split(seed: u64) -> (RawDataset, RawDataset) {
    let seeds = crate::seed::Seeds::new(seed);
    let train = facts_corpus(&FactsConfig { n_contexts: TOY_TRAIN_CONTEXTS, ..FactsConfig::default() }, &mut seeds.rng("toy.train", 0));
    let dev = facts_corpus(&FactsConfig { n_contexts: TOY_DEV_CONTEXTS, ..FactsConfig::default() }, &mut seeds.rng("toy.dev", 0));
    (train, dev)
}

/// Bracketed-span train and dev sets drawn from one seed.
pub fn bracketed_split(seed: u64, n_train: usize, n_dev: usize) -> (RawDataset, RawDataset) {
    let seeds = crate::seed::Seeds::new(seed);
    let train = bracketed_corpus(&BracketConfig { n_contexts: n_train, ..BracketConfig::default() }, &mut seeds.rng("bracket.train", 0));
    let dev = bracketed_corpus(&BracketConfig { n_contexts: n_dev, ..BracketConfig::default() }, &mut seeds.rng("bracket.dev", 0));
    (train, dev)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::corpus::squad::{parse_squad_json, LoadOptions};
    use crate::corpus::tokenize::tokenize;

    #[test]
    fn bracketed_answers_are_aligned_and_types_do_not_repeat_in_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = bracketed_corpus(&BracketConfig { n_contexts: 5, ..Default::default() }, &mut rng);
        // Round trip through the validating parser checks every answer_start.
        let again = parse_squad_json(&ds.to_json(), LoadOptions::default()).unwrap();
        assert_eq!(again.num_questions(), 100);
        for p in &again.data[0].paragraphs {
            let toks = tokenize(&p.context);
            for (i, t) in toks.iter().enumerate() {
                if let Some(ty) = t.text.strip_prefix("open") {
                    let close = format!("close{ty}");
                    let n = toks[i..(i + 30).min(toks.len())].iter().filter(|x| x.text == close).count();
                    assert_eq!(n, 1);
                }
            }
        }
    }

    #[test]
    fn facts_have_one_value_per_category() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = facts_corpus(&FactsConfig { n_contexts: 10, ..Default::default() }, &mut rng);
        let again = parse_squad_json(&ds.to_json(), LoadOptions::default()).unwrap();
        assert_eq!(again.num_questions(), 40);
        let numbers = Category::Number.values();
        for p in &again.data[0].paragraphs {
            let n = tokenize(&p.context).iter().filter(|t| numbers.contains(&t.text)).count();
            assert_eq!(n, 1);
        }
    }
}
