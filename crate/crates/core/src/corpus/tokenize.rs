use serde::{Deserialize, Serialize};

/// A lowercased token with its character span (code points, end exclusive)
/// in the original string.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl Token {
    pub fn as_tuple(&self) -> (&str, usize, usize) {
        (&self.text, self.char_start, self.char_end)
    }
}

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits on whitespace and isolates every punctuation character as its own
/// token. Token text is lowercased; offsets refer to the input.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut word_start = 0;
    let flush = |word: &mut String, start: usize, end: usize, out: &mut Vec<Token>| {
        if !word.is_empty() {
            out.push(Token { text: word.to_lowercase(), char_start: start, char_end: end });
            word.clear();
        }
    };
    let mut n = 0;
    for (i, c) in text.chars().enumerate() {
        n = i + 1;
        if c.is_whitespace() {
            flush(&mut word, word_start, i, &mut out);
        } else if is_punct(c) {
            flush(&mut word, word_start, i, &mut out);
            out.push(Token { text: c.to_lowercase().collect(), char_start: i, char_end: i + 1 });
        } else {
            if word.is_empty() {
                word_start = i;
            }
            word.push(c);
        }
    }
    flush(&mut word, word_start, n, &mut out);
    out
}

/// Joins token texts, with one space wherever the source had whitespace
/// between them.
pub fn detokenize(tokens: &[Token]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 && t.char_start > tokens[i - 1].char_end {
            out.push(' ');
        }
        out.push_str(&t.text);
    }
    out
}

/// Substring by character offsets, clamped to the string.
pub fn char_slice(text: &str, char_start: usize, char_end: usize) -> &str {
    let mut indices = text.char_indices().map(|(b, _)| b).chain(std::iter::once(text.len()));
    let start = indices.nth(char_start).unwrap_or(text.len());
    let end = if char_end > char_start {
        indices.nth(char_end - char_start - 1).unwrap_or(text.len())
    } else {
        start
    };
    &text[start..end]
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tuples(text: &str) -> Vec<(String, usize, usize)> {
        tokenize(text).into_iter().map(|t| (t.text, t.char_start, t.char_end)).collect()
    }

    #[test]
    fn rule_examples() {
        assert_eq!(
            tuples("Hello, world"),
            vec![("hello".into(), 0, 5), (",".into(), 5, 6), ("world".into(), 7, 12)]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tuples("a-b"), vec![("a".into(), 0, 1), ("-".into(), 1, 2), ("b".into(), 2, 3)]);
    }

    #[test]
    fn offsets_are_in_characters() {
        let text = "Café — Zoë";
        let toks = tokenize(text);
        assert_eq!(toks[0].as_tuple(), ("café", 0, 4));
        assert_eq!(toks[1].as_tuple(), ("—", 5, 6));
        assert_eq!(char_slice(text, 7, 10), "Zoë");
    }

    proptest! {
        #[test]
        fn surfaces_cover_non_whitespace(text in "[ a-zA-Z0-9,.!?'-]{0,40}") {
            let toks = tokenize(&text);
            let joined: String = toks.iter().map(|t| char_slice(&text, t.char_start, t.char_end)).collect();
            let expected: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, expected);
            for w in toks.windows(2) {
                prop_assert!(w[0].char_end <= w[1].char_start);
            }
        }

        #[test]
        fn idempotent_on_detokenized_output(text in "[ a-zA-Z0-9,.!?'-]{0,40}") {
            let once = tokenize(&text);
            let again = tokenize(&detokenize(&once));
            let a: Vec<_> = once.iter().map(|t| t.text.clone()).collect();
            let b: Vec<_> = again.iter().map(|t| t.text.clone()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
