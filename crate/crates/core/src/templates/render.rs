use serde::{Deserialize, Serialize};

use super::catalog::{PromptTemplate, Segment, Slot};
use super::{Demonstration, TemplateError};
use crate::corpus::LangPair;

/// A rendered prompt together with the inputs that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub rendered: String,
    pub template_id: u32,
    pub lang: LangPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<u64>,
    pub query: String,
    pub demos: Vec<Demonstration>,
    pub k: usize,
    /// Byte range of the query inside `rendered`.
    pub query_span: (usize, usize),
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl PromptRequest {
    pub fn with_query_id(mut self, id: u64) -> Self {
        self.query_id = Some(id);
        self
    }
}

fn push_lang(out: &mut String, slot: Slot, lang: &LangPair) -> bool {
    match slot {
        Slot::SrcLang => out.push_str(&lang.src_name),
        Slot::TgtLang => out.push_str(&lang.tgt_name),
        _ => return false,
    }
    true
}

fn render_block(template: &PromptTemplate, lang: &LangPair, demo: &Demonstration, out: &mut String) {
    for seg in &template.block_segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(Slot::DemoSrc) => out.push_str(&demo.source),
            Segment::Slot(Slot::DemoTgt) => out.push_str(&demo.target),
            Segment::Slot(s) => {
                push_lang(out, *s, lang);
            }
        }
    }
}

/// Fills the template. Demonstrations are used in the given order.
pub fn render(
    template: &PromptTemplate,
    lang: &LangPair,
    query: &str,
    demos: &[Demonstration],
) -> Result<PromptRequest, TemplateError> {
    if template.with_tm && demos.is_empty() {
        return Err(TemplateError::DemoCountMismatch { template_id: template.id, expected: "at least 1", got: 0 });
    }
    if !template.with_tm && !demos.is_empty() {
        return Err(TemplateError::DemoCountMismatch { template_id: template.id, expected: "0", got: demos.len() });
    }
    for d in demos {
        d.validate()?;
    }

    let mut warnings = Vec::new();
    if let Some(c) = template.query_closer() {
        if query.contains(c) {
            warnings.push(format!("query contains the closing delimiter '{c}'"));
        }
    }
    let (src_close, tgt_close) = template.demo_closers();
    for (i, d) in demos.iter().enumerate() {
        if src_close.is_some_and(|c| d.source.contains(c)) {
            warnings.push(format!("demo {i} source contains the closing delimiter '{}'", src_close.unwrap()));
        }
        if tgt_close.is_some_and(|c| d.target.contains(c)) {
            warnings.push(format!("demo {i} target contains the closing delimiter '{}'", tgt_close.unwrap()));
        }
    }

    let mut out = String::new();
    let mut query_span = (0, 0);
    for seg in &template.segments {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Slot(Slot::Query) => {
                let start = out.len();
                out.push_str(query);
                query_span = (start, out.len());
            }
            Segment::Slot(Slot::Demos) => {
                for (i, d) in demos.iter().enumerate() {
                    if i > 0 {
                        out.push_str(&template.joiner);
                    }
                    render_block(template, lang, d, &mut out);
                }
            }
            Segment::Slot(s) => {
                push_lang(&mut out, *s, lang);
            }
        }
    }

    Ok(PromptRequest {
        rendered: out,
        template_id: template.id,
        lang: lang.clone(),
        query_id: None,
        query: query.to_string(),
        demos: demos.to_vec(),
        k: demos.len(),
        query_span,
        warnings,
    })
}
