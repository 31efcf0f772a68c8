//! Concept-level retrieval and labeling over oncology clinical notes.
//!
//! The pipeline ingests patient notes, splits them into chunks, ranks chunks
//! per clinical concept by embedding distance to a query set, labels the
//! top-ranked chunks with an LLM, and scores or evaluates concept presence.

pub mod concepts;
pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod error;
pub mod http;
pub mod io;
pub mod labeling;
pub mod llm;
mod parallel;
pub mod scoring;
pub mod synth;
pub mod prompts;
pub mod retrieval;

pub use concepts::{ConceptDef, ConceptId, PerConcept, QuerySet, QuerySets, Registry};
pub use corpus::{Chunk, ChunkingConfig, PatientNote};
pub use error::{Error, ErrorKind, Result};
