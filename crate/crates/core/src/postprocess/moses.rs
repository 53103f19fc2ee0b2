//! Port of the Moses `tokenizer.perl` (v1.1) word tokenizer, run with
//! `-no-escape` and no protected patterns.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, LazyLock, Mutex};

use regex::Regex;

use super::PostprocessError;

const PREFIX_FILES: [(&str, &str); 7] = [
    ("cs", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.cs")),
    ("de", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.de")),
    ("en", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.en")),
    ("es", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.es")),
    ("fr", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.fr")),
    ("it", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.it")),
    ("ro", include_str!("../../data/nonbreaking_prefixes/nonbreaking_prefix.ro")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PrefixKind {
    Always,
    NumericOnly,
}

fn re(pattern: &str) -> Regex {
    Regex::new(pattern).expect("valid tokenizer regex")
}

struct Rules {
    whitespace: Regex,
    control: Regex,
    spaces: Regex,
    special: Regex,
    han: Regex,
    dot_multi: Regex,
    dot_multi_next: Regex,
    comma_after: Regex,
    comma_before: Regex,
    en: [Regex; 5],
    fr_it: [Regex; 4],
    final_dot: Regex,
    lower_start: Regex,
    digit_start: Regex,
    alpha: Regex,
    numeric_only: Regex,
}

static RULES: LazyLock<Rules> = LazyLock::new(|| {
    let alpha = r"\p{Alphabetic}";
    Rules {
        whitespace: re(r"\s+"),
        control: re(r"[\x00-\x1f]"),
        spaces: re(r" +"),
        special: re(r"([^\p{Alphabetic}\p{Nd}\s.'`,\-])"),
        han: re(r"(\p{Han})"),
        dot_multi: re(r"\.(\.+)"),
        dot_multi_next: re(r"DOTMULTI\.([^.])"),
        comma_after: re(r"([^\p{N}]),"),
        comma_before: re(r",([^\p{N}])"),
        en: [
            re(&format!("([^{alpha}])'([^{alpha}])")),
            re(&format!(r"([^{alpha}\p{{N}}])'([{alpha}])")),
            re(&format!("([{alpha}])'([^{alpha}])")),
            re(&format!("([{alpha}])'([{alpha}])")),
            re(r"(\p{N})'(s)"),
        ],
        fr_it: [
            re(&format!("([^{alpha}])'([^{alpha}])")),
            re(&format!("([^{alpha}])'([{alpha}])")),
            re(&format!("([{alpha}])'([^{alpha}])")),
            re(&format!("([{alpha}])'([{alpha}])")),
        ],
        final_dot: re(r"^(\S+)\.$"),
        lower_start: re(r"^\p{Lowercase}"),
        digit_start: re(r"^[0-9]+"),
        alpha: re(alpha),
        numeric_only: re(r"(.*)\s+(#NUMERIC_ONLY#)"),
    }
});

fn parse_prefixes(text: &str) -> HashMap<String, PrefixKind> {
    let mut out = HashMap::new();
    // Lines are only chomped: some entries carry trailing spaces that matter.
    for item in text.split('\n') {
        if item.is_empty() || item == "0" || item.starts_with('#') {
            continue;
        }
        match RULES.numeric_only.captures(item) {
            Some(c) => out.insert(c[1].to_string(), PrefixKind::NumericOnly),
            None => out.insert(item.to_string(), PrefixKind::Always),
        };
    }
    out
}

/// Tokenizer for one language, with its nonbreaking-prefix table.
#[derive(Debug, Clone)]
pub struct MosesTokenizer {
    lang: String,
    prefixes: Arc<HashMap<String, PrefixKind>>,
}

impl MosesTokenizer {
    /// Uses the shipped prefix list; languages without one fall back to English.
    pub fn new(lang: &str) -> Self {
        type Prefixes = Arc<HashMap<String, PrefixKind>>;
        static CACHE: LazyLock<Mutex<HashMap<String, Prefixes>>> =
            LazyLock::new(Default::default);
        let file_lang = if PREFIX_FILES.iter().any(|(l, _)| *l == lang) { lang } else { "en" };
        let prefixes = CACHE
            .lock()
            .expect("prefix cache lock")
            .entry(file_lang.to_string())
            .or_insert_with(|| {
                let text = PREFIX_FILES.iter().find(|(l, _)| *l == file_lang).map(|(_, t)| *t).unwrap_or("");
                Arc::new(parse_prefixes(text))
            })
            .clone();
        MosesTokenizer { lang: lang.to_string(), prefixes }
    }

    pub fn with_prefix_file(lang: &str, path: &Path) -> Result<Self, PostprocessError> {
        let text = std::fs::read_to_string(path).map_err(|e| PostprocessError::Io(path.to_path_buf(), e))?;
        Ok(MosesTokenizer { lang: lang.to_string(), prefixes: Arc::new(parse_prefixes(&text)) })
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let r = &*RULES;
        let text = text.strip_suffix('\n').unwrap_or(text);
        if text.trim().is_empty() {
            return Vec::new();
        }
        let mut t = format!(" {text} ");
        t = r.whitespace.replace_all(&t, " ").into_owned();
        t = r.control.replace_all(&t, "").into_owned();
        if matches!(self.lang.as_str(), "zh" | "ja") {
            t = r.han.replace_all(&t, " ${1} ").into_owned();
        }
        t = r.spaces.replace_all(&t, " ").into_owned();
        let mut t = t.trim_start_matches(' ').to_string();
        if t.ends_with(' ') {
            t.pop();
        }

        t = r.special.replace_all(&t, " ${1} ").into_owned();

        t = r.dot_multi.replace_all(&t, " DOTMULTI${1}").into_owned();
        while t.contains("DOTMULTI.") {
            t = r.dot_multi_next.replace_all(&t, "DOTDOTMULTI ${1}").into_owned();
            t = t.replace("DOTMULTI.", "DOTDOTMULTI");
        }

        t = r.comma_after.replace_all(&t, "${1} , ").into_owned();
        t = r.comma_before.replace_all(&t, " , ${1}").into_owned();

        match self.lang.as_str() {
            "en" => {
                t = r.en[0].replace_all(&t, "${1} ' ${2}").into_owned();
                t = r.en[1].replace_all(&t, "${1} ' ${2}").into_owned();
                t = r.en[2].replace_all(&t, "${1} ' ${2}").into_owned();
                t = r.en[3].replace_all(&t, "${1} '${2}").into_owned();
                t = r.en[4].replace_all(&t, "${1} '${2}").into_owned();
            }
            "fr" | "it" => {
                t = r.fr_it[0].replace_all(&t, "${1} ' ${2}").into_owned();
                t = r.fr_it[1].replace_all(&t, "${1} ' ${2}").into_owned();
                t = r.fr_it[2].replace_all(&t, "${1} ' ${2}").into_owned();
                t = r.fr_it[3].replace_all(&t, "${1}' ${2}").into_owned();
            }
            _ => t = t.replace('\'', " ' "),
        }

        let mut words: Vec<&str> = t.split(|c: char| c.is_whitespace()).collect();
        while words.last().is_some_and(|w| w.is_empty()) {
            words.pop();
        }
        let mut out = String::with_capacity(t.len() + 8);
        for (i, word) in words.iter().enumerate() {
            let next = words.get(i + 1);
            match r.final_dot.captures(word) {
                Some(c) if !self.keeps_dot(&c[1], next.copied()) => {
                    out.push_str(&c[1]);
                    out.push_str(" .");
                }
                _ => out.push_str(word),
            }
            out.push(' ');
        }

        let mut t = out;
        while t.contains("DOTDOTMULTI") {
            t = t.replace("DOTDOTMULTI", "DOTMULTI.");
        }
        let t = t.replace("DOTMULTI", ".");
        t.split(' ').filter(|w| !w.is_empty()).map(str::to_string).collect()
    }

    fn keeps_dot(&self, pre: &str, next: Option<&str>) -> bool {
        let r = &*RULES;
        let kind = self.prefixes.get(pre).copied();
        if (pre.contains('.') && r.alpha.is_match(pre))
            || kind == Some(PrefixKind::Always)
            || next.is_some_and(|n| r.lower_start.is_match(n))
        {
            return true;
        }
        kind == Some(PrefixKind::NumericOnly) && next.is_some_and(|n| r.digit_start.is_match(n))
    }
}

/// Moses-style tokens for BLEU scoring.
pub fn score_tokenize(text: &str, lang: &str) -> Vec<String> {
    MosesTokenizer::new(lang).tokenize(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(lang: &str, s: &str) -> Vec<String> {
        score_tokenize(s, lang)
    }

    #[test]
    fn terminal_period() {
        assert_eq!(tok("en", "I have an apple."), ["I", "have", "an", "apple", "."]);
    }

    #[test]
    fn nonbreaking_prefix() {
        assert_eq!(tok("en", "Dr. Smith"), ["Dr.", "Smith"]);
        assert_eq!(tok("en", "See No. 5 now."), ["See", "No.", "5", "now", "."]);
        assert_eq!(tok("en", "It is No. It is."), ["It", "is", "No", ".", "It", "is", "."]);
    }

    #[test]
    fn english_contractions() {
        assert_eq!(tok("en", "it's a test, ok?"), ["it", "'s", "a", "test", ",", "ok", "?"]);
        assert_eq!(tok("en", "the 1990's"), ["the", "1990", "'s"]);
    }

    #[test]
    fn french_contractions_split_left() {
        assert_eq!(tok("fr", "l'homme"), ["l'", "homme"]);
    }

    #[test]
    fn numbers_and_hyphens() {
        assert_eq!(tok("en", "5,300 well-known"), ["5,300", "well-known"]);
        assert_eq!(tok("en", "a,b"), ["a", ",", "b"]);
    }

    #[test]
    fn multi_dots() {
        assert_eq!(tok("en", "Wait... what"), ["Wait", "...", "what"]);
    }

    #[test]
    fn han_split() {
        assert_eq!(tok("zh", "我有苹果。"), ["我", "有", "苹", "果", "。"]);
    }

    #[test]
    fn blank_input() {
        assert!(tok("en", "").is_empty());
        assert!(tok("en", "  \t ").is_empty());
    }

    #[test]
    fn unknown_language_uses_english_prefixes() {
        assert_eq!(tok("nl", "Dr. Smith"), ["Dr.", "Smith"]);
    }

    #[test]
    fn prefix_parsing_keeps_trailing_space() {
        let p = parse_prefixes("# comment\nMr\nNo #NUMERIC_ONLY# \nFil \n\n0\n");
        assert_eq!(p.get("Mr"), Some(&PrefixKind::Always));
        assert_eq!(p.get("No"), Some(&PrefixKind::NumericOnly));
        assert_eq!(p.get("Fil "), Some(&PrefixKind::Always));
        assert!(!p.contains_key("Fil"));
        assert_eq!(p.len(), 3);
    }
}
