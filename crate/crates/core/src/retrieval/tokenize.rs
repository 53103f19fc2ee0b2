use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static NON_ASCII_PUNCT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[\p{P}\p{S}]$").expect("valid regex"));

/// Unicode punctuation or symbol.
pub(crate) fn is_punct(c: char) -> bool {
    if c.is_ascii() {
        return c.is_ascii_punctuation();
    }
    let mut buf = [0u8; 4];
    NON_ASCII_PUNCT.is_match(c.encode_utf8(&mut buf))
}

/// A token counts as a number when, with `,` `.` `-` and `−` removed, it is
/// non-empty and all digits (`5,300`, `1.000.000`, `12`).
fn is_number(token: &str) -> bool {
    let mut digits = 0;
    for c in token.chars() {
        match c {
            ',' | '.' | '-' | '\u{2212}' => {}
            c if c.is_numeric() => digits += 1,
            _ => return false,
        }
    }
    digits > 0
}

/// Lowercased word tokens used for fuzzy matching; numbers and punctuation
/// are not part of the sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MatchTokenSeq(Vec<String>);

impl MatchTokenSeq {
    pub(crate) fn from_vec(tokens: Vec<String>) -> Self {
        MatchTokenSeq(tokens)
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<String> {
        self.0
    }
}

impl AsRef<[String]> for MatchTokenSeq {
    fn as_ref(&self) -> &[String] {
        &self.0
    }
}

pub fn match_tokenize(text: &str) -> MatchTokenSeq {
    let tokens = text
        .split_whitespace()
        .filter_map(|raw| {
            let token = raw.trim_matches(is_punct);
            if token.is_empty() || is_number(token) {
                None
            } else {
                Some(token.to_lowercase())
            }
        })
        .collect();
    MatchTokenSeq(tokens)
}
