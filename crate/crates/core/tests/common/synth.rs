//! Synthetic parallel corpora with controllable overlap.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmprompt::corpus::{save_split, CorpusSplit, LangPair, SentencePair};

const SYLLABLES: [&str; 16] = ["ka", "lo", "mi", "ne", "po", "ru", "sa", "ti", "vo", "ze", "ba", "du", "fe", "gi", "ho", "ju"];

/// A word that no other id maps to.
pub fn unique_word(mut id: u64) -> String {
    let mut w = String::from("q");
    loop {
        w.push_str(SYLLABLES[(id % 16) as usize]);
        id /= 16;
        if id == 0 {
            return w;
        }
    }
}

pub fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=3);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..16)]).collect()
}

/// The target side: every word reversed and capitalised, plus a full stop.
pub fn translate(source: &str) -> String {
    let words: Vec<String> = source
        .trim_end_matches('.')
        .split_whitespace()
        .map(|w| {
            let r: String = w.chars().rev().collect();
            let mut c = r.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
        })
        .collect();
    format!("{}.", words.join(" "))
}

/// `n` pairs with distinct sources of 5 to 12 words each.
pub fn corpus(n: usize, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|id| {
            let len = rng.random_range(4..=11);
            let mut words: Vec<String> = (0..len).map(|_| word(&mut rng)).collect();
            let at = rng.random_range(0..=words.len());
            words.insert(at, unique_word(id));
            let source = format!("{}.", words.join(" "));
            SentencePair::new(id, source.clone(), translate(&source))
        })
        .collect()
}

/// Copies of `base` with `edits` words replaced, renumbered from `first_id`.
pub fn perturbed(base: &[SentencePair], edits: usize, first_id: u64, seed: u64) -> Vec<SentencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    base.iter()
        .enumerate()
        .map(|(i, p)| {
            let mut words: Vec<String> = p.source.trim_end_matches('.').split_whitespace().map(String::from).collect();
            for _ in 0..edits {
                let at = rng.random_range(0..words.len());
                words[at] = word(&mut rng);
            }
            let source = format!("{}.", words.join(" "));
            SentencePair::new(first_id + i as u64, source.clone(), translate(&source))
        })
        .collect()
}

pub fn de_en() -> LangPair {
    LangPair::from_codes("de", "en").unwrap()
}

/// Saves a split whose test set is given explicitly.
pub fn write_split(dir: &Path, test_set: Vec<SentencePair>, tm_database: Vec<SentencePair>) {
    let split = CorpusSplit { test_set, tm_database, seed: 0, lang: de_en() };
    save_split(&split, dir).unwrap();
}
