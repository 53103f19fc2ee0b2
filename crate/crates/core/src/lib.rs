//! Translation-memory prompting for large language model translation.

pub mod backend;
pub mod corpus;
pub mod eval;
pub mod experiment;
pub mod postprocess;
pub mod retrieval;
pub mod routing;
pub mod templates;
