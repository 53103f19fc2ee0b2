//! Cleaning raw completions and tokenizing text for scoring.

mod moses;

use std::path::PathBuf;

pub use moses::{score_tokenize, MosesTokenizer};

use crate::corpus::unescape_entities;

#[derive(Debug, thiserror::Error)]
pub enum PostprocessError {
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
}

/// Characters stripped from both ends of a completion.
pub const EDGE_CHARS: [char; 7] = ['"', '\n', '\r', '[', ']', ' ', '\t'];

fn clean_once(raw: &str) -> String {
    let stripped = raw.trim_matches(&EDGE_CHARS[..]);
    let unescaped = unescape_entities(stripped);
    let mut out = String::with_capacity(unescaped.len());
    let mut in_break = false;
    for c in unescaped.chars() {
        if c == '\n' || c == '\r' {
            if !in_break {
                out.push(' ');
            }
            in_break = true;
        } else {
            out.push(c);
            in_break = false;
        }
    }
    out.trim().to_string()
}

/// Strips edge symbols, unescapes entities and folds line breaks, repeating
/// until nothing changes. Fully stripped input gives an empty string.
pub fn clean_output(raw: &str) -> String {
    let mut current = clean_once(raw);
    loop {
        let next = clean_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn strips_quotes_and_newlines() {
        assert_eq!(clean_output("\n\"Ich habe einen Apfel.\"\n"), "Ich habe einen Apfel.");
    }

    #[test]
    fn strips_brackets() {
        assert_eq!(clean_output("[Hello]"), "Hello");
        assert_eq!(clean_output(" [[\"Hallo\"]] "), "Hallo");
    }

    #[test]
    fn clean_text_untouched() {
        assert_eq!(clean_output("already clean"), "already clean");
    }

    #[test]
    fn internal_newlines_collapse() {
        assert_eq!(clean_output("eins\n\nzwei\r\ndrei"), "eins zwei drei");
    }

    #[test]
    fn entities_unescaped() {
        assert_eq!(clean_output("Tom &amp; Jerry &quot;x&quot;"), "Tom & Jerry \"x");
        assert_eq!(clean_output("&quot;quoted&quot;"), "quoted");
    }

    #[test]
    fn fully_stripped_is_empty() {
        assert_eq!(clean_output("\n[]\"\"\n "), "");
        assert_eq!(clean_output(""), "");
    }

    proptest! {
        #[test]
        fn idempotent(s in r#"[ \n\r\t"\[\]a-z&;.]{0,30}|(&(amp|quot|lt|gt|apos);){0,4}"#) {
            let once = clean_output(&s);
            prop_assert_eq!(clean_output(&once), once);
        }

        #[test]
        fn inert_strings_unchanged(s in "[a-zA-Z0-9.,!?]([a-zA-Z0-9 .,!?]{0,30}[a-zA-Z0-9.,!?])?") {
            prop_assert_eq!(clean_output(&s), s);
        }
    }
}
