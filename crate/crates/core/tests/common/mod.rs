#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use edukg::layout::{extract_slides, GlyphDocument};
use edukg::services::{FixtureKnowledgeBase, KnowledgeFixture, ServiceBundle};
use edukg::weighting::{cosine, embed_text, TestEmbedder};
use edukg::LearningMaterial;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn glyphs(name: &str) -> GlyphDocument {
    let text = std::fs::read_to_string(fixtures().join(format!("{name}.glyphs.jsonl"))).unwrap();
    GlyphDocument::parse(&text).unwrap()
}

pub fn deck(name: &str) -> LearningMaterial {
    extract_slides(&glyphs(name)).unwrap()
}

pub fn knowledge() -> KnowledgeFixture {
    KnowledgeFixture::load(&fixtures().join("knowledge.json")).unwrap()
}

pub fn kb() -> Arc<FixtureKnowledgeBase> {
    Arc::new(FixtureKnowledgeBase::new(knowledge()))
}

pub fn bundle() -> ServiceBundle {
    ServiceBundle::fixture(kb())
}

pub fn abstract_of(uri: &str) -> String {
    knowledge()
        .entities
        .into_iter()
        .find(|e| e.uri == uri)
        .and_then(|e| e.abstract_text)
        .unwrap_or_default()
}

/// Cosine of two texts under the test embedder, computed outside any
/// pipeline code path.
pub fn similarity(a: &str, b: &str) -> f64 {
    let e = TestEmbedder;
    cosine(&embed_text(&e, a).unwrap(), &embed_text(&e, b).unwrap()).unwrap()
}

/// Golden file comparison; `EDUKG_BLESS=1` rewrites the file instead.
pub fn assert_golden(name: &str, actual: &str) {
    let path = fixtures().join("golden").join(name);
    if std::env::var("EDUKG_BLESS").is_ok_and(|v| v == "1") {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from the golden document");
}
