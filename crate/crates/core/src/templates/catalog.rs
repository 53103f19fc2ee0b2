use std::collections::BTreeSet;
use std::path::Path;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::TemplateError;

const BUILTIN_CATALOG: &str = include_str!("../../data/catalog.jsonl");

pub const DEFAULT_TM_TEMPLATE: u32 = 17;
pub const DEFAULT_ZERO_SHOT_TEMPLATE: u32 = 18;
pub const INSTRUCTION_TM_TEMPLATE: u32 = 1;
pub const INSTRUCTION_ZERO_SHOT_TEMPLATE: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateStyle {
    Instruction,
    Code,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    SrcLang,
    TgtLang,
    Query,
    Demos,
    DemoSrc,
    DemoTgt,
}

impl Slot {
    fn parse(name: &str) -> Option<Slot> {
        Some(match name {
            "SRC_LANG" => Slot::SrcLang,
            "TGT_LANG" => Slot::TgtLang,
            "QUERY" => Slot::Query,
            "DEMOS" => Slot::Demos,
            "DEMO_SRC" => Slot::DemoSrc,
            "DEMO_TGT" => Slot::DemoTgt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Segment {
    Text(String),
    Slot(Slot),
}

/// Splits `${NAME}` slots out of a pattern. `$$` is a literal `$`.
pub(crate) fn parse_segments(pattern: &str) -> Result<Vec<Segment>, String> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut rest = pattern;
    while let Some(pos) = rest.find('$') {
        text.push_str(&rest[..pos]);
        let after = &rest[pos + 1..];
        if let Some(tail) = after.strip_prefix('$') {
            text.push('$');
            rest = tail;
        } else if let Some(body) = after.strip_prefix('{') {
            let end = body.find('}').ok_or("unterminated slot")?;
            let name = &body[..end];
            let slot = Slot::parse(name).ok_or_else(|| format!("unknown slot '{name}'"))?;
            if !text.is_empty() {
                out.push(Segment::Text(std::mem::take(&mut text)));
            }
            out.push(Segment::Slot(slot));
            rest = &body[end + 1..];
        } else {
            return Err("stray '$' (write '$$' for a literal dollar)".into());
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    Ok(out)
}

fn count(segments: &[Segment], slot: Slot) -> usize {
    segments.iter().filter(|s| **s == Segment::Slot(slot)).count()
}

/// The closing character that follows `slot`, when it is one of the
/// delimiters a sentence could collide with.
fn closing_after(segments: &[Segment], slot: Slot) -> Option<char> {
    let pos = segments.iter().position(|s| *s == Segment::Slot(slot))?;
    match segments.get(pos + 1) {
        Some(Segment::Text(t)) => t.chars().next().filter(|c| matches!(c, ']' | '"' | '}' | ')')),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateRecord {
    pub id: u32,
    pub style: TemplateStyle,
    pub with_tm: bool,
    pub pattern: String,
    #[serde(default)]
    pub demo_block: String,
    #[serde(default)]
    pub joiner: String,
}

/// A validated template ready for rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TemplateRecord", into = "TemplateRecord")]
pub struct PromptTemplate {
    pub id: u32,
    pub style: TemplateStyle,
    pub with_tm: bool,
    pub pattern: String,
    pub demo_block: String,
    pub joiner: String,
    #[serde(skip)]
    pub(crate) segments: Vec<Segment>,
    #[serde(skip)]
    pub(crate) block_segments: Vec<Segment>,
}

impl TryFrom<TemplateRecord> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(r: TemplateRecord) -> Result<Self, TemplateError> {
        let invalid = |message: String| TemplateError::InvalidTemplate { id: r.id, message };
        let segments = parse_segments(&r.pattern).map_err(&invalid)?;
        let block_segments = parse_segments(&r.demo_block).map_err(&invalid)?;

        if count(&segments, Slot::Query) != 1 {
            return Err(invalid("pattern needs exactly one ${QUERY}".into()));
        }
        if count(&segments, Slot::DemoSrc) + count(&segments, Slot::DemoTgt) > 0 {
            return Err(invalid("demo slots belong in demo_block".into()));
        }
        if count(&block_segments, Slot::Query) + count(&block_segments, Slot::Demos) > 0 {
            return Err(invalid("demo_block may not contain ${QUERY} or ${DEMOS}".into()));
        }
        let demos = count(&segments, Slot::Demos);
        if r.with_tm {
            if demos != 1 {
                return Err(invalid("with-TM pattern needs exactly one ${DEMOS}".into()));
            }
            if count(&block_segments, Slot::DemoSrc) == 0 || count(&block_segments, Slot::DemoTgt) == 0 {
                return Err(invalid("demo_block needs ${DEMO_SRC} and ${DEMO_TGT}".into()));
            }
        } else if demos != 0 || !block_segments.is_empty() {
            return Err(invalid("zero-shot template has demo slots".into()));
        }

        Ok(PromptTemplate {
            id: r.id,
            style: r.style,
            with_tm: r.with_tm,
            pattern: r.pattern,
            demo_block: r.demo_block,
            joiner: r.joiner,
            segments,
            block_segments,
        })
    }
}

impl From<PromptTemplate> for TemplateRecord {
    fn from(t: PromptTemplate) -> Self {
        TemplateRecord {
            id: t.id,
            style: t.style,
            with_tm: t.with_tm,
            pattern: t.pattern,
            demo_block: t.demo_block,
            joiner: t.joiner,
        }
    }
}

impl PromptTemplate {
    pub fn from_record(record: TemplateRecord) -> Result<Self, TemplateError> {
        record.try_into()
    }

    /// Number of demonstration slots in a one-shot rendering.
    pub fn demo_slots(&self) -> usize {
        usize::from(self.with_tm)
    }

    pub(crate) fn query_closer(&self) -> Option<char> {
        closing_after(&self.segments, Slot::Query)
    }

    pub(crate) fn demo_closers(&self) -> (Option<char>, Option<char>) {
        (
            closing_after(&self.block_segments, Slot::DemoSrc),
            closing_after(&self.block_segments, Slot::DemoTgt),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    templates: Vec<PromptTemplate>,
}

impl Catalog {
    /// Parses one template record per non-blank line.
    pub fn from_jsonl(text: &str) -> Result<Self, TemplateError> {
        let mut templates = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: TemplateRecord = serde_json::from_str(line)
                .map_err(|e| TemplateError::CatalogFormat { line: i + 1, message: e.to_string() })?;
            if !seen.insert(record.id) {
                return Err(TemplateError::DuplicateTemplate(record.id));
            }
            templates.push(PromptTemplate::from_record(record)?);
        }
        templates.sort_by_key(|t| t.id);
        Ok(Catalog { templates })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TemplateError::Io(path.to_path_buf(), e))?;
        Self::from_jsonl(&text)
    }

    pub fn builtin() -> &'static Catalog {
        static BUILTIN: LazyLock<Catalog> =
            LazyLock::new(|| Catalog::from_jsonl(BUILTIN_CATALOG).expect("built-in catalog is valid"));
        &BUILTIN
    }

    pub fn get(&self, id: u32) -> Result<&PromptTemplate, TemplateError> {
        self.templates
            .iter()
            .find(|t| t.id == id)
            .ok_or(TemplateError::UnknownTemplate(id))
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn to_jsonl(&self) -> String {
        self.templates
            .iter()
            .map(|t| serde_json::to_string(t).expect("template serializes") + "\n")
            .collect()
    }
}

/// All built-in templates, ordered by id.
pub fn catalog() -> Vec<PromptTemplate> {
    Catalog::builtin().templates.clone()
}
