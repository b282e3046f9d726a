//! Small text utilities shared by the gazetteer, matcher and tokenizer.

use unicode_normalization::UnicodeNormalization;

/// Length-preserving case fold of a single scalar.
///
/// Uses the lowercase mapping when it is a single scalar and leaves the
/// character untouched otherwise, so folded text keeps the original offsets.
pub fn simple_fold(c: char) -> char {
    match c {
        'ſ' => 's',
        'ς' => 'σ',
        '\u{345}' => 'ι',
        _ => {
            let mut lower = c.to_lowercase();
            match (lower.next(), lower.next()) {
                (Some(l), None) => l,
                _ => c,
            }
        }
    }
}

pub fn fold_str(s: &str) -> String {
    s.chars().map(simple_fold).collect()
}

pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// Collapse whitespace runs to a single space and trim both ends.
pub fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fold_preserves_length() {
        for s in ["Caffè Latte", "İstanbul", "STRASSE ẞ", "ΣΟΦΟΣ"] {
            assert_eq!(fold_str(s).chars().count(), s.chars().count());
        }
        assert_eq!(fold_str("ΣΟΦΟΣ"), "σοφοσ");
    }

    #[test]
    fn collapse() {
        assert_eq!(collapse_whitespace("  a \t b\n\nc "), "a b c");
        assert_eq!(collapse_whitespace("   "), "");
    }
}
