//! Educational knowledge graph construction from slide decks.
//!
//! A deck is read from a glyph document ([`layout`]), its keyphrases are
//! ranked ([`keyphrase`]) and linked to knowledge-base concepts
//! ([`linker`]), concepts are weighted against the deck ([`weighting`]),
//! expanded with related concepts and categories ([`expansion`]) and stored
//! as an [`graph::EduKG`]. [`pipelines`] runs the two construction orders,
//! [`hitl`] adds moderated drafts and [`evaluation`] scores the results.

pub mod evaluation;
pub mod expansion;
pub mod graph;
pub mod hitl;
pub mod keyphrase;
pub mod layout;
pub mod linker;
pub mod model;
pub mod pipelines;
pub mod services;
pub mod store;
pub mod transport;
pub mod weighting;

pub use graph::{EduKG, GraphStatus};
pub use model::{Concept, LearningMaterial, MaterialId, PipelineConfig, PipelineMode};
pub use pipelines::{Pipeline, RunReport};
