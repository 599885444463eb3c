//! SQuAD v1.1 answer scoring.
//!
//! Normalization follows the official evaluation script exactly: lowercase,
//! drop every character of Python's `string.punctuation`, remove the whole
//! words `a`, `an` and `the`, then collapse whitespace. EM compares
//! normalized strings; F1 is the token-multiset overlap of the normalized
//! strings. Both take the maximum over the gold answers.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Python's `string.punctuation`.
const PUNCTUATION: &str = "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~";

fn articles() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b(a|an|the)\b").expect("valid regex"))
}

pub fn normalize_answer(text: &str) -> String {
    let lower = text.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !PUNCTUATION.contains(*c)).collect();
    let no_articles = articles().replace_all(&no_punct, " ");
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn check_golds(golds: &[String]) -> Result<()> {
    if golds.is_empty() {
        Err(Error::EmptyGolds)
    } else {
        Ok(())
    }
}

pub fn exact_match(prediction: &str, golds: &[String]) -> Result<f64> {
    check_golds(golds)?;
    let p = normalize_answer(prediction);
    Ok(if golds.iter().any(|g| normalize_answer(g) == p) { 1.0 } else { 0.0 })
}

fn f1_single(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn f1(prediction: &str, golds: &[String]) -> Result<f64> {
    check_golds(golds)?;
    Ok(golds.iter().map(|g| f1_single(prediction, g)).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    /// Fraction of questions with at least one exactly matching candidate.
    pub em_recall: f64,
    /// Mean over questions of the best candidate F1.
    pub f1_max_mean: f64,
    /// Largest candidate-set size seen.
    pub k: usize,
    pub n_questions: usize,
}

/// Max-over-candidates EM and F1, averaged over questions. Questions with no
/// candidates score 0.
pub fn candidate_recall<S: AsRef<str>>(candidates: &[Vec<S>], golds: &[Vec<String>]) -> Result<RecallReport> {
    if candidates.len() != golds.len() {
        return Err(Error::LengthMismatch { left: candidates.len(), right: golds.len() });
    }
    let mut em_sum = 0.0;
    let mut f1_sum = 0.0;
    let mut k = 0;
    for (cands, g) in candidates.iter().zip(golds) {
        k = k.max(cands.len());
        let mut em_best: f64 = 0.0;
        let mut f1_best: f64 = 0.0;
        for c in cands {
            em_best = em_best.max(exact_match(c.as_ref(), g)?);
            f1_best = f1_best.max(f1(c.as_ref(), g)?);
        }
        em_sum += em_best;
        f1_sum += f1_best;
    }
    let n = candidates.len();
    let mean = |s: f64| if n == 0 { 0.0 } else { s / n as f64 };
    Ok(RecallReport { em_recall: mean(em_sum), f1_max_mean: mean(f1_sum), k, n_questions: n })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub qid: String,
    pub prediction: String,
    pub golds: Vec<String>,
    pub em: f64,
    pub f1: f64,
}

/// Aggregate EM/F1 as percentages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub exact_match: f64,
    pub f1: f64,
    pub n: usize,
    pub per_question: Vec<QuestionResult>,
}

impl EvalReport {
    pub fn from_predictions<'a>(items: impl IntoIterator<Item = (&'a str, &'a str, &'a [String])>) -> Result<Self> {
        let mut per_question = Vec::new();
        for (qid, prediction, golds) in items {
            per_question.push(QuestionResult {
                qid: qid.to_string(),
                prediction: prediction.to_string(),
                golds: golds.to_vec(),
                em: exact_match(prediction, golds)?,
                f1: f1(prediction, golds)?,
            });
        }
        Ok(Self::from_results(per_question))
    }

    pub fn from_results(per_question: Vec<QuestionResult>) -> Self {
        let n = per_question.len();
        let (em, f) = per_question.iter().fold((0.0, 0.0), |(e, f), r| (e + r.em, f + r.f1));
        let pct = |s: f64| if n == 0 { 0.0 } else { 100.0 * s / n as f64 };
        Self { exact_match: pct(em), f1: pct(f), n, per_question }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>8}", "metric", "value");
        let _ = writeln!(s, "{:<12} {:>8.2}", "exact_match", self.exact_match);
        let _ = writeln!(s, "{:<12} {:>8.2}", "f1", self.f1);
        let _ = writeln!(s, "{:<12} {:>8}", "questions", self.n);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_answer("The Answer!"), "answer");
        assert_eq!(normalize_answer("a  cat"), "cat");
        assert_eq!(normalize_answer(""), "");
        assert_eq!(normalize_answer("theory"), "theory");
    }

    #[test]
    fn em_and_f1_examples() {
        assert_eq!(exact_match("The cat", &g(&["cat"])).unwrap(), 1.0);
        assert_eq!(exact_match("cats", &g(&["cat"])).unwrap(), 0.0);
        assert_eq!(exact_match("cat", &g(&["dog", "cat"])).unwrap(), 1.0);
        assert!((f1("cat sat", &g(&["cat"])).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1("a", &g(&["the"])).unwrap(), 1.0);
        assert_eq!(f1("a", &g(&["cat"])).unwrap(), 0.0);
        assert!(matches!(f1("x", &[]), Err(Error::EmptyGolds)));
    }

    #[test]
    fn recall_examples() {
        let r = candidate_recall(&[vec!["cat"], vec!["dog"]], &[g(&["cat"]), g(&["fish"])]).unwrap();
        assert_eq!(r.em_recall, 0.5);
        let empty: Vec<Vec<&str>> = vec![vec![], vec![]];
        let r = candidate_recall(&empty, &[g(&["a"]), g(&["b"])]).unwrap();
        assert_eq!((r.em_recall, r.f1_max_mean), (0.0, 0.0));
        assert!(matches!(candidate_recall(&empty, &[g(&["a"])]), Err(Error::LengthMismatch { .. })));
    }

    proptest::proptest! {
        #[test]
        fn normalization_is_idempotent(s in "[ a-zA-Z.,!'-]{0,30}") {
            let once = normalize_answer(&s);
            proptest::prop_assert_eq!(normalize_answer(&once), once);
        }

        #[test]
        fn em_implies_full_f1(p in "[ a-c.]{0,12}", q in "[ a-c.]{0,12}") {
            let golds = vec![q];
            if exact_match(&p, &golds).unwrap() == 1.0 {
                proptest::prop_assert_eq!(f1(&p, &golds).unwrap(), 1.0);
            }
        }
    }
}
