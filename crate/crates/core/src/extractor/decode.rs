//! Span decoding over precomputed log-probabilities.
//!
//! All decoders share the final ordering: score descending, then smaller
//! start, then smaller end. Ranks are `0..n` in that order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeamConfig {
    /// Number of start positions kept.
    pub s: usize,
    /// Number of end positions kept per start.
    pub e: usize,
    pub max_answer_tokens: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { s: 50, e: 2, max_answer_tokens: 30 }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::config("beam.s", "must be >= 1"));
        }
        if self.e == 0 {
            return Err(Error::config("beam.e", "must be >= 1"));
        }
        if self.max_answer_tokens == 0 {
            return Err(Error::config("beam.max_answer_tokens", "must be >= 1"));
        }
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.s * self.e
    }

    /// Exclusive upper bound of the feasible ends for `start` in a context of
    /// `m` tokens.
    pub fn window_end(&self, start: usize, m: usize) -> usize {
        (start + self.max_answer_tokens).min(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanCandidate {
    pub start: usize,
    pub end: usize,
    pub score: f64,
    pub rank: usize,
}

/// Number of spans in a context of `m` tokens with no length cap.
pub fn count_naive_spans(m: usize) -> u64 {
    let m = m as u64;
    m * (m + 1) / 2
}

fn cmp_candidates(a: &(usize, usize, f64), b: &(usize, usize, f64)) -> Ordering {
    b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1))
}

/// Sorts, keeps the best-scoring copy of each `(start, end)`, truncates to
/// `k` and assigns ranks.
fn finalize(mut spans: Vec<(usize, usize, f64)>, k: usize) -> Vec<SpanCandidate> {
    spans.sort_by(cmp_candidates);
    let mut seen = std::collections::HashSet::new();
    spans
        .into_iter()
        .filter(|(s, e, _)| seen.insert((*s, *e)))
        .take(k)
        .enumerate()
        .map(|(rank, (start, end, score))| SpanCandidate { start, end, score, rank })
        .collect()
}

/// Indices of the `n` largest values (ties to the smaller index), skipping
/// non-finite entries.
fn top_indices(values: impl Iterator<Item = (usize, f64)>, n: usize) -> Vec<usize> {
    let mut v: Vec<(usize, f64)> = values.filter(|(_, x)| x.is_finite()).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(n);
    v.into_iter().map(|(i, _)| i).collect()
}

/// Keeps the top `cfg.s` starts, asks `end_lp` for the end log-probabilities
/// of each kept start (one length-`m` vector per start, in order), keeps the
/// top `cfg.e` feasible ends of each, and returns the best `k` spans by
/// `start_lp[s] + end_lp[s][e]`.
pub fn beam_search<F>(start_lp: &[f64], cfg: &BeamConfig, k: usize, end_lp: F) -> Result<Vec<SpanCandidate>>
where
    F: FnOnce(&[usize]) -> Result<Vec<Vec<f64>>>,
{
    let m = start_lp.len();
    if m == 0 {
        return Err(Error::EmptyContext);
    }
    cfg.validate()?;
    if k > cfg.capacity() {
        return Err(Error::InvalidArgument(format!("k={k} exceeds s*e={}", cfg.capacity())));
    }
    let starts = top_indices(start_lp.iter().copied().enumerate(), cfg.s);
    let ends = end_lp(&starts)?;
    if ends.len() != starts.len() {
        return Err(Error::ShapeMismatch(format!("{} end vectors for {} starts", ends.len(), starts.len())));
    }
    let mut spans = Vec::with_capacity(starts.len() * cfg.e);
    for (&s, lp) in starts.iter().zip(&ends) {
        if lp.len() != m {
            return Err(Error::ShapeMismatch(format!("end vector of length {} for m={m}", lp.len())));
        }
        let hi = cfg.window_end(s, m);
        for e in top_indices((s..hi).map(|j| (j, lp[j])), cfg.e) {
            spans.push((s, e, start_lp[s] + lp[e]));
        }
    }
    Ok(finalize(spans, k))
}

/// Global top-`k` of `start_lp[s] + end_lp[e]` over every feasible span.
pub fn classic_optimal(start_lp: &[f64], end_lp: &[f64], max_answer_tokens: usize, k: usize) -> Result<Vec<SpanCandidate>> {
    let m = start_lp.len();
    if m == 0 {
        return Err(Error::EmptyContext);
    }
    if end_lp.len() != m {
        return Err(Error::ShapeMismatch(format!("{} end log-probs for m={m}", end_lp.len())));
    }
    let mut spans = Vec::with_capacity(m * max_answer_tokens.min(m));
    for s in 0..m {
        for e in s..(s + max_answer_tokens).min(m) {
            let score = start_lp[s] + end_lp[e];
            if score.is_finite() {
                spans.push((s, e, score));
            }
        }
    }
    if spans.len() > k && k > 0 {
        spans.select_nth_unstable_by(k - 1, cmp_candidates);
        spans.truncate(k);
    }
    Ok(finalize(spans, k))
}

/// The beam procedure applied to independent start and end distributions.
pub fn classic_beam(start_lp: &[f64], end_lp: &[f64], cfg: &BeamConfig, k: usize) -> Result<Vec<SpanCandidate>> {
    if end_lp.len() != start_lp.len() {
        return Err(Error::ShapeMismatch(format!("{} end log-probs for m={}", end_lp.len(), start_lp.len())));
    }
    beam_search(start_lp, cfg, k, |starts| Ok(vec![end_lp.to_vec(); starts.len()]))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn naive_counts() {
        assert_eq!(count_naive_spans(500), 125_250);
        assert_eq!(count_naive_spans(0), 0);
        assert_eq!(count_naive_spans(3), 6);
    }

    #[test]
    fn at_most_s_times_e_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = 200;
        let start: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..0.0)).collect();
        let end: Vec<f64> = (0..m).map(|_| rng.gen_range(-5.0..0.0)).collect();
        let cfg = BeamConfig::default();
        let c = classic_beam(&start, &end, &cfg, 100).unwrap();
        assert_eq!(c.len(), 100);
        assert!(matches!(classic_beam(&start, &end, &cfg, 101), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn classic_top1_factorizes() {
        let start = [-2.0, -0.1, -3.0, -4.0];
        let end = [-0.5, -3.0, -1.0, -0.2];
        let c = classic_optimal(&start, &end, 30, 1).unwrap();
        assert_eq!((c[0].start, c[0].end), (1, 3));
    }

    #[test]
    fn duplicates_collapse_and_ranks_are_contiguous() {
        let spans = vec![(0, 1, -1.0), (0, 1, -2.0), (1, 1, -1.0), (0, 0, -1.0)];
        let out = finalize(spans, 10);
        let pairs: Vec<_> = out.iter().map(|c| (c.start, c.end, c.rank)).collect();
        assert_eq!(pairs, vec![(0, 0, 0), (0, 1, 1), (1, 1, 2)]);
    }

    #[test]
    fn empty_context() {
        assert!(matches!(classic_optimal(&[], &[], 30, 5), Err(Error::EmptyContext)));
        assert!(matches!(
            beam_search(&[], &BeamConfig::default(), 5, |_| Ok(vec![])),
            Err(Error::EmptyContext)
        ));
    }
}
