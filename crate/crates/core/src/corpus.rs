//! Parallel corpus loading, normalization, test/TM splitting and split persistence.
//!
//! The canonical on-disk form of a corpus is JSONL with one `{id, source, target}`
//! object per line. TSV and paired plain-text files are accepted as imports.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SPLIT_FORMAT: &str = "tmprompt-split";
pub const SPLIT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_TEST_SIZE: usize = 3000;
pub const DEFAULT_MAX_TOKENS: usize = 512;

const TEST_FILE: &str = "test.jsonl";
const TM_FILE: &str = "tm.jsonl";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("paired files differ in length: {source_lines} source lines vs {target_lines} target lines")]
    LineCountMismatch {
        source_lines: usize,
        target_lines: usize,
    },
    #[error("{0}: corpus is empty")]
    Empty(PathBuf),
    #[error("test size {test_size} must be smaller than the corpus size {corpus_size}")]
    TestSizeTooLarge { test_size: usize, corpus_size: usize },
    #[error("duplicate sentence id {0}")]
    DuplicateId(u64),
    #[error("invalid language pair: {0}")]
    InvalidLang(String),
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}: checksum mismatch (manifest {expected}, file {actual})")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },
}

type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Source and target language of a corpus. Display names are what prompt
/// templates print (e.g. "English").
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LangPair {
    pub src_code: String,
    pub tgt_code: String,
    pub src_name: String,
    pub tgt_name: String,
}

impl LangPair {
    pub fn new(
        src_code: impl Into<String>,
        tgt_code: impl Into<String>,
        src_name: impl Into<String>,
        tgt_name: impl Into<String>,
    ) -> Result<Self> {
        let lang = Self {
            src_code: src_code.into(),
            tgt_code: tgt_code.into(),
            src_name: src_name.into(),
            tgt_name: tgt_name.into(),
        };
        lang.validate()?;
        Ok(lang)
    }

    /// Builds a pair from codes alone, looking display names up in a small
    /// built-in table (falls back to the code itself).
    pub fn from_codes(src_code: &str, tgt_code: &str) -> Result<Self> {
        Self::new(src_code, tgt_code, language_name(src_code), language_name(tgt_code))
    }

    pub fn validate(&self) -> Result<()> {
        if self.src_code.is_empty() || self.tgt_code.is_empty() {
            return Err(CorpusError::InvalidLang("empty language code".into()));
        }
        if self.src_code == self.tgt_code {
            return Err(CorpusError::InvalidLang(format!(
                "source and target are both '{}'",
                self.src_code
            )));
        }
        if self.src_name.trim().is_empty() || self.tgt_name.trim().is_empty() {
            return Err(CorpusError::InvalidLang("empty display name".into()));
        }
        Ok(())
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src_code, self.tgt_code)
    }
}

pub fn language_name(code: &str) -> String {
    match code {
        "en" => "English",
        "de" => "German",
        "fr" => "French",
        "es" => "Spanish",
        "it" => "Italian",
        "ro" => "Romanian",
        "cs" => "Czech",
        "zh" => "Chinese",
        "ja" => "Japanese",
        "pt" => "Portuguese",
        "nl" => "Dutch",
        other => other,
    }
    .to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: u64,
    pub source: String,
    pub target: String,
}

impl SentencePair {
    pub fn new(id: u64, source: impl Into<String>, target: impl Into<String>) -> Self {
        Self {
            id,
            source: source.into(),
            target: target.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub test_set: Vec<SentencePair>,
    pub tm_database: Vec<SentencePair>,
    pub seed: u64,
    pub lang: LangPair,
}

/// Where a corpus comes from and how it is encoded.
#[derive(Debug, Clone)]
pub enum CorpusSource {
    /// `source<TAB>target`, exactly one tab per line.
    Tsv(PathBuf),
    /// One `{source, target}` object per line; an `id` field is ignored.
    Jsonl(PathBuf),
    /// Two line-aligned plain-text files.
    Paired { source: PathBuf, target: PathBuf },
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = Vec::new();
    for line in BufReader::new(file).lines() {
        let mut line = line.map_err(io_err(path))?;
        if line.ends_with('\r') {
            line.pop();
        }
        lines.push(line);
    }
    Ok(lines)
}

/// Loads a corpus, assigning ids sequentially from 0 in file order.
pub fn load_corpus(source: &CorpusSource) -> Result<Vec<SentencePair>> {
    let (path, pairs) = match source {
        CorpusSource::Tsv(path) => {
            let mut pairs = Vec::new();
            for (i, line) in read_lines(path)?.into_iter().enumerate() {
                let tabs = line.matches('\t').count();
                if tabs != 1 {
                    return Err(CorpusError::Malformed {
                        path: path.clone(),
                        line: i + 1,
                        message: format!("expected exactly one tab, found {tabs}"),
                    });
                }
                let (src, tgt) = line.split_once('\t').expect("one tab");
                pairs.push(SentencePair::new(pairs.len() as u64, src, tgt));
            }
            (path, pairs)
        }
        CorpusSource::Jsonl(path) => {
            #[derive(Deserialize)]
            struct Record {
                source: String,
                target: String,
            }
            let mut pairs = Vec::new();
            for (i, line) in read_lines(path)?.into_iter().enumerate() {
                let rec: Record =
                    serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                        path: path.clone(),
                        line: i + 1,
                        message: e.to_string(),
                    })?;
                pairs.push(SentencePair::new(pairs.len() as u64, rec.source, rec.target));
            }
            (path, pairs)
        }
        CorpusSource::Paired { source, target } => {
            let src = read_lines(source)?;
            let tgt = read_lines(target)?;
            if src.len() != tgt.len() {
                return Err(CorpusError::LineCountMismatch {
                    source_lines: src.len(),
                    target_lines: tgt.len(),
                });
            }
            let pairs = src
                .into_iter()
                .zip(tgt)
                .enumerate()
                .map(|(i, (s, t))| SentencePair::new(i as u64, s, t))
                .collect();
            (source, pairs)
        }
    };
    if pairs.is_empty() {
        return Err(CorpusError::Empty(path.clone()));
    }
    Ok(pairs)
}

/// Reads canonical JSONL, keeping the stored ids.
pub fn read_pairs_jsonl(path: &Path) -> Result<Vec<SentencePair>> {
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in read_lines(path)?.into_iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let pair: SentencePair =
            serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
        if !seen.insert(pair.id) {
            return Err(CorpusError::DuplicateId(pair.id));
        }
        pairs.push(pair);
    }
    Ok(pairs)
}

pub fn to_jsonl(pairs: &[SentencePair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&serde_json::to_string(p).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn write_pairs_jsonl(path: &Path, pairs: &[SentencePair]) -> Result<()> {
    fs::write(path, to_jsonl(pairs)).map_err(io_err(path))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of the canonical JSONL encoding of `pairs`.
pub fn corpus_checksum(pairs: &[SentencePair]) -> String {
    sha256_hex(to_jsonl(pairs).as_bytes())
}

// ---------------------------------------------------------------------------
// Normalization

/// Fixed entity table. Only these five escapes are decoded.
const ENTITIES: [(&str, char); 5] = [
    ("&amp;", '&'),
    ("&quot;", '"'),
    ("&lt;", '<'),
    ("&gt;", '>'),
    ("&apos;", '\''),
];

fn unescape_once(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        rest = &rest[pos..];
        match ENTITIES.iter().find(|(e, _)| rest.starts_with(e)) {
            Some((entity, ch)) => {
                out.push(*ch);
                rest = &rest[entity.len()..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

/// Decodes `&amp; &quot; &lt; &gt; &apos;` until no escape remains, so doubly
/// escaped input (`&amp;lt;`) ends up as the literal character.
pub fn unescape_entities(text: &str) -> String {
    let mut current = text.to_string();
    loop {
        let next = unescape_once(&current);
        if next == current {
            return current;
        }
        current = next;
    }
}

/// Collapses every run of Unicode whitespace to one space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizationConfig {
    /// Maximum whitespace-token count per side.
    pub max_tokens: usize,
    /// Reject pairs whose (source, target) was already kept.
    pub reject_duplicates: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            reject_duplicates: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    EmptyAfterNormalization,
    TooLong,
    Duplicate,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::EmptyAfterNormalization => "empty-after-normalization",
            RejectReason::TooLong => "too-long",
            RejectReason::Duplicate => "duplicate",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub id: u64,
    pub reason: RejectReason,
    pub side: Option<Side>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    Kept(SentencePair),
    Rejected(Rejection),
}

fn normalize_text(text: &str) -> String {
    collapse_whitespace(&unescape_entities(text))
}

pub fn normalize_pair(pair: &SentencePair, rules: &NormalizationConfig) -> Normalized {
    let source = normalize_text(&pair.source);
    let target = normalize_text(&pair.target);
    for (side, text) in [(Side::Source, &source), (Side::Target, &target)] {
        let reason = if text.is_empty() {
            RejectReason::EmptyAfterNormalization
        } else if text.split(' ').count() > rules.max_tokens {
            RejectReason::TooLong
        } else {
            continue;
        };
        return Normalized::Rejected(Rejection {
            id: pair.id,
            reason,
            side: Some(side),
        });
    }
    Normalized::Kept(SentencePair {
        id: pair.id,
        source,
        target,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestStats {
    pub kept: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
}

impl IngestStats {
    pub fn total_rejected(&self) -> usize {
        self.rejected.values().sum()
    }
}

/// Normalizes a whole corpus; degenerate pairs are dropped and counted, never fatal.
pub fn ingest(
    pairs: impl IntoIterator<Item = SentencePair>,
    rules: &NormalizationConfig,
) -> (Vec<SentencePair>, IngestStats) {
    let mut kept = Vec::new();
    let mut stats = IngestStats::default();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    for pair in pairs {
        match normalize_pair(&pair, rules) {
            Normalized::Kept(p) => {
                if rules.reject_duplicates && !seen.insert((p.source.clone(), p.target.clone())) {
                    *stats.rejected.entry(RejectReason::Duplicate).or_default() += 1;
                    continue;
                }
                kept.push(p);
            }
            Normalized::Rejected(r) => *stats.rejected.entry(r.reason).or_default() += 1,
        }
    }
    stats.kept = kept.len();
    (kept, stats)
}

// ---------------------------------------------------------------------------
// Splitting

/// Draws `test_size` pairs uniformly without replacement as the test set; the
/// rest become the TM database. Both sides keep the input order and ids.
pub fn split_corpus(
    corpus: &[SentencePair],
    test_size: usize,
    seed: u64,
    lang: LangPair,
) -> Result<CorpusSplit> {
    lang.validate()?;
    if test_size >= corpus.len() {
        return Err(CorpusError::TestSizeTooLarge {
            test_size,
            corpus_size: corpus.len(),
        });
    }
    let mut seen = HashSet::with_capacity(corpus.len());
    for p in corpus {
        if !seen.insert(p.id) {
            return Err(CorpusError::DuplicateId(p.id));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = vec![false; corpus.len()];
    for i in rand::seq::index::sample(&mut rng, corpus.len(), test_size) {
        chosen[i] = true;
    }
    let (test, tm): (Vec<_>, Vec<_>) = corpus
        .iter()
        .zip(&chosen)
        .partition(|(_, &picked)| picked);
    Ok(CorpusSplit {
        test_set: test.into_iter().map(|(p, _)| p.clone()).collect(),
        tm_database: tm.into_iter().map(|(p, _)| p.clone()).collect(),
        seed,
        lang,
    })
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitChecksums {
    pub test: String,
    pub tm: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format: String,
    pub format_version: u32,
    pub seed: u64,
    pub test_size: usize,
    pub lang: LangPair,
    pub checksums: SplitChecksums,
}

/// Writes `test.jsonl`, `tm.jsonl` and `manifest.json` into `dir`.
pub fn save_split(split: &CorpusSplit, dir: &Path) -> Result<SplitManifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let test = to_jsonl(&split.test_set);
    let tm = to_jsonl(&split.tm_database);
    let test_path = dir.join(TEST_FILE);
    let tm_path = dir.join(TM_FILE);
    fs::write(&test_path, &test).map_err(io_err(&test_path))?;
    fs::write(&tm_path, &tm).map_err(io_err(&tm_path))?;
    let manifest = SplitManifest {
        format: SPLIT_FORMAT.to_string(),
        format_version: SPLIT_FORMAT_VERSION,
        seed: split.seed,
        test_size: split.test_set.len(),
        lang: split.lang.clone(),
        checksums: SplitChecksums {
            test: sha256_hex(test.as_bytes()),
            tm: sha256_hex(tm.as_bytes()),
        },
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;
    Ok(manifest)
}

pub fn read_split_manifest(dir: &Path) -> Result<SplitManifest> {
    let path = dir.join(MANIFEST_FILE);
    let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: SplitManifest =
        serde_json::from_str(&raw).map_err(|e| CorpusError::Format {
            path: path.clone(),
            message: format!("unreadable manifest: {e}"),
        })?;
    if manifest.format != SPLIT_FORMAT {
        return Err(CorpusError::Format {
            path,
            message: format!("not a split manifest (format '{}')", manifest.format),
        });
    }
    if manifest.format_version != SPLIT_FORMAT_VERSION {
        return Err(CorpusError::Format {
            path,
            message: format!(
                "unsupported format_version {} (expected {SPLIT_FORMAT_VERSION})",
                manifest.format_version
            ),
        });
    }
    Ok(manifest)
}

fn read_verified(path: &Path, expected: &str) -> Result<Vec<SentencePair>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let actual = sha256_hex(&bytes);
    if actual != expected {
        return Err(CorpusError::Checksum {
            path: path.to_path_buf(),
            expected: expected.to_string(),
            actual,
        });
    }
    read_pairs_jsonl(path)
}

pub fn load_split(dir: &Path) -> Result<CorpusSplit> {
    let manifest = read_split_manifest(dir)?;
    manifest.lang.validate()?;
    let test_set = read_verified(&dir.join(TEST_FILE), &manifest.checksums.test)?;
    let tm_database = read_verified(&dir.join(TM_FILE), &manifest.checksums.tm)?;
    if test_set.len() != manifest.test_size {
        return Err(CorpusError::Format {
            path: dir.join(MANIFEST_FILE),
            message: format!(
                "manifest says {} test pairs, file has {}",
                manifest.test_size,
                test_set.len()
            ),
        });
    }
    Ok(CorpusSplit {
        test_set,
        tm_database,
        seed: manifest.seed,
        lang: manifest.lang,
    })
}
