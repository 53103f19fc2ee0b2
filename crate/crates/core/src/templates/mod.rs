//! Prompt templates with and without translation-memory demonstrations.

mod catalog;
mod render;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalHit;

pub use catalog::{
    catalog, Catalog, PromptTemplate, TemplateRecord, TemplateStyle, DEFAULT_TM_TEMPLATE,
    DEFAULT_ZERO_SHOT_TEMPLATE, INSTRUCTION_TM_TEMPLATE, INSTRUCTION_ZERO_SHOT_TEMPLATE,
};
pub use render::{render, PromptRequest};

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("template {id}: {message}")]
    InvalidTemplate { id: u32, message: String },
    #[error("catalog line {line}: {message}")]
    CatalogFormat { line: usize, message: String },
    #[error("duplicate template id {0}")]
    DuplicateTemplate(u32),
    #[error("no template with id {0}")]
    UnknownTemplate(u32),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("template {template_id} takes {expected} demonstrations, got {got}")]
    DemoCountMismatch { template_id: u32, expected: &'static str, got: usize },
    #[error("invalid demonstration: {0}")]
    InvalidDemonstration(String),
    #[error("cannot order demonstrations when only some carry an FMS")]
    MixedFms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Tm,
    Nmt,
    RandomIn,
    RandomOut,
}

/// A source/target pair shown to the model before the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub source: String,
    pub target: String,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<u64>,
}

impl Demonstration {
    pub fn from_hit(hit: &RetrievalHit) -> Self {
        Demonstration {
            source: hit.entry.source.clone(),
            target: hit.entry.target.clone(),
            provenance: Provenance::Tm,
            fms: Some(hit.fms),
            entry_id: Some(hit.entry.id),
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        if self.source.is_empty() || self.target.is_empty() {
            return Err(TemplateError::InvalidDemonstration("empty source or target".into()));
        }
        match (self.provenance, self.fms) {
            (Provenance::Tm, None) => Err(TemplateError::InvalidDemonstration("TM demonstration without FMS".into())),
            (Provenance::Tm, Some(f)) if !(0.0..=1.0).contains(&f) => {
                Err(TemplateError::InvalidDemonstration(format!("FMS {f} outside [0, 1]")))
            }
            (Provenance::Tm, Some(_)) | (_, None) => Ok(()),
            (p, Some(_)) => Err(TemplateError::InvalidDemonstration(format!("{p:?} demonstration with FMS"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoOrder {
    #[serde(alias = "asc")]
    Ascending,
    #[default]
    #[serde(alias = "desc")]
    Descending,
}

impl std::str::FromStr for DemoOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asc" | "ascending" => Ok(DemoOrder::Ascending),
            "desc" | "descending" => Ok(DemoOrder::Descending),
            other => Err(format!("unknown order '{other}' (expected asc or desc)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderedDemos {
    pub demos: Vec<Demonstration>,
    /// False when no demo carried an FMS and the input was passed through.
    pub sorted: bool,
}

/// Stable sort by FMS. Ascending puts the most similar demo last, next to
/// the query; descending puts it first.
pub fn order_demos(demos: Vec<Demonstration>, order: DemoOrder) -> Result<OrderedDemos, TemplateError> {
    let with_fms = demos.iter().filter(|d| d.fms.is_some()).count();
    if with_fms == 0 {
        return Ok(OrderedDemos { demos, sorted: false });
    }
    if with_fms != demos.len() {
        return Err(TemplateError::MixedFms);
    }
    let mut demos = demos;
    let key = |d: &Demonstration| d.fms.unwrap_or_default();
    match order {
        DemoOrder::Ascending => demos.sort_by(|a, b| key(a).total_cmp(&key(b))),
        DemoOrder::Descending => demos.sort_by(|a, b| key(b).total_cmp(&key(a))),
    }
    Ok(OrderedDemos { demos, sorted: true })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tm(fms: f64, tag: &str) -> Demonstration {
        Demonstration {
            source: format!("src {tag}"),
            target: format!("tgt {tag}"),
            provenance: Provenance::Tm,
            fms: Some(fms),
            entry_id: None,
        }
    }

    fn fms_of(o: &OrderedDemos) -> Vec<f64> {
        o.demos.iter().map(|d| d.fms.unwrap()).collect()
    }

    #[test]
    fn sorts_both_ways() {
        let d = vec![tm(0.9, "a"), tm(0.5, "b"), tm(0.7, "c")];
        assert_eq!(fms_of(&order_demos(d.clone(), DemoOrder::Ascending).unwrap()), [0.5, 0.7, 0.9]);
        assert_eq!(fms_of(&order_demos(d, DemoOrder::Descending).unwrap()), [0.9, 0.7, 0.5]);
    }

    #[test]
    fn singleton_unchanged() {
        let d = vec![tm(0.3, "x")];
        for order in [DemoOrder::Ascending, DemoOrder::Descending] {
            assert_eq!(order_demos(d.clone(), order).unwrap().demos, d);
        }
    }

    #[test]
    fn ties_keep_input_order() {
        let d = vec![tm(0.5, "a"), tm(0.9, "b"), tm(0.5, "c")];
        let asc = order_demos(d.clone(), DemoOrder::Ascending).unwrap();
        let tags: Vec<_> = asc.demos.iter().map(|d| d.target.as_str()).collect();
        assert_eq!(tags, ["tgt a", "tgt c", "tgt b"]);
        let desc = order_demos(d, DemoOrder::Descending).unwrap();
        let tags: Vec<_> = desc.demos.iter().map(|d| d.target.as_str()).collect();
        assert_eq!(tags, ["tgt b", "tgt a", "tgt c"]);
    }

    #[test]
    fn passthrough_and_mixed() {
        let mut nmt = tm(0.0, "n");
        nmt.provenance = Provenance::Nmt;
        nmt.fms = None;
        let out = order_demos(vec![nmt.clone(), nmt.clone()], DemoOrder::Ascending).unwrap();
        assert!(!out.sorted);
        assert!(matches!(
            order_demos(vec![tm(0.2, "a"), nmt], DemoOrder::Ascending),
            Err(TemplateError::MixedFms)
        ));
    }

    #[test]
    fn demonstration_invariants() {
        assert!(tm(0.5, "a").validate().is_ok());
        let mut d = tm(0.5, "a");
        d.fms = None;
        assert!(d.validate().is_err());
        let mut d = tm(0.5, "a");
        d.provenance = Provenance::RandomIn;
        assert!(d.validate().is_err());
        let mut d = tm(0.5, "a");
        d.source.clear();
        assert!(d.validate().is_err());
    }

    #[test]
    fn order_parses() {
        assert_eq!("asc".parse::<DemoOrder>().unwrap(), DemoOrder::Ascending);
        assert_eq!("desc".parse::<DemoOrder>().unwrap(), DemoOrder::Descending);
        assert_eq!(DemoOrder::default(), DemoOrder::Descending);
        let o: DemoOrder = serde_json::from_str("\"asc\"").unwrap();
        assert_eq!(o, DemoOrder::Ascending);
    }

    proptest! {
        #[test]
        fn ordering_is_a_permutation(scores in prop::collection::vec(0u32..=10, 0..12), asc in any::<bool>()) {
            let demos: Vec<_> = scores.iter().enumerate().map(|(i, &s)| tm(s as f64 / 10.0, &i.to_string())).collect();
            let order = if asc { DemoOrder::Ascending } else { DemoOrder::Descending };
            let out = order_demos(demos.clone(), order).unwrap().demos;
            let mut a: Vec<_> = demos.iter().map(|d| d.target.clone()).collect();
            let mut b: Vec<_> = out.iter().map(|d| d.target.clone()).collect();
            a.sort();
            b.sort();
            prop_assert_eq!(a, b);
            for w in out.windows(2) {
                let (x, y) = (w[0].fms.unwrap(), w[1].fms.unwrap());
                let ok = if asc { x <= y } else { x >= y };
                prop_assert!(ok);
            }
        }
    }
}
