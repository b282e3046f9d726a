//! Whitespace-and-punctuation tokenizer shared by the matcher (word
//! boundaries) and the BIO converter.
//!
//! Each whitespace-delimited chunk has its leading and trailing
//! non-alphanumeric characters peeled off as one-character tokens; whatever
//! remains (including internal `-`, `'`, `&`, `.`) is a single token.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    /// Unicode scalar offsets into the sentence text.
    pub start: usize,
    pub end: usize,
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

/// Token spans as `(start, end)` scalar offsets over `chars`.
pub fn token_offsets(chars: &[char]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let n = chars.len();
    let mut i = 0;
    while i < n {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < n && !chars[j].is_whitespace() {
            j += 1;
        }
        // chunk is chars[i..j]
        let mut lo = i;
        while lo < j && !is_word(chars[lo]) {
            out.push((lo, lo + 1));
            lo += 1;
        }
        if lo < j {
            let mut hi = j;
            while hi > lo && !is_word(chars[hi - 1]) {
                hi -= 1;
            }
            out.push((lo, hi));
            for k in hi..j {
                out.push((k, k + 1));
            }
        }
        i = j;
    }
    out
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    token_offsets(&chars)
        .into_iter()
        .map(|(start, end)| Token {
            text: chars[start..end].iter().collect(),
            start,
            end,
        })
        .collect()
}

/// Per-position flags: `starts[i]` is true when a token starts at offset `i`,
/// `ends[i]` when one ends there. Both have length `chars.len() + 1`.
#[derive(Debug, Clone)]
pub struct Boundaries {
    pub starts: Vec<bool>,
    pub ends: Vec<bool>,
}

impl Boundaries {
    pub fn new(chars: &[char]) -> Self {
        let mut starts = vec![false; chars.len() + 1];
        let mut ends = vec![false; chars.len() + 1];
        for (s, e) in token_offsets(chars) {
            starts[s] = true;
            ends[e] = true;
        }
        Boundaries { starts, ends }
    }

    /// True when `[start, end)` covers whole tokens only.
    pub fn aligned(&self, start: usize, end: usize) -> bool {
        start < end && end < self.ends.len() && self.starts[start] && self.ends[end]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn examples() {
        assert_eq!(
            texts("I love masala chai."),
            ["I", "love", "masala", "chai", "."]
        );
        assert_eq!(texts("latte"), ["latte"]);
        assert_eq!(texts("soy-milk's taste"), ["soy-milk's", "taste"]);
    }

    #[test]
    fn punctuation_peeling() {
        assert_eq!(
            texts("(Kidneys (meat))"),
            ["(", "Kidneys", "(", "meat", ")", ")"]
        );
        assert_eq!(
            texts("A&W, U.S. ..."),
            ["A&W", ",", "U.S", ".", ".", ".", "."]
        );
        assert!(texts("   ").is_empty());
    }

    #[test]
    fn offsets_are_scalar() {
        let toks = tokenize("Caffè latte 😀 ok");
        assert_eq!((toks[1].start, toks[1].end), (6, 11));
        assert_eq!((toks[2].start, toks[2].end), (12, 13));
        assert_eq!((toks[3].start, toks[3].end), (14, 16));
    }

    #[test]
    fn boundaries_alignment() {
        let chars: Vec<char> = "a checkmate move".chars().collect();
        let b = Boundaries::new(&chars);
        assert!(b.aligned(2, 11));
        assert!(!b.aligned(7, 11));
        assert!(!b.aligned(2, 2));
    }
}
