//! Semantic weighting of concepts, related concepts and categories by
//! cosine similarity of text embeddings.

mod abstracts;
mod embedder;

pub use abstracts::{
    extract_request, parse_extract_response, title_from_uri, AbstractCache, AbstractSource, CachedAbstract,
    WikipediaAbstracts, WIKIPEDIA_API,
};
pub use embedder::{
    embed_text, embed_texts, CachingEmbedder, EmbedError, Embedder, EmbeddingVector, RemoteEmbedder, TestEmbedder,
    MAX_CHUNK_TOKENS,
};

use crate::model::{Concept, LearningMaterial, Slide};

/// `dot(a, b) / (|a| |b|)`, clamped to `[-1, 1]`. Zero when either vector
/// has zero norm.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dim() != b.dim() {
        return Err(EmbedError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    let denom = a.norm() * b.norm();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / denom).clamp(-1.0, 1.0))
}

/// Per-slide ranking key.
pub fn importance(w_slide: f64, w_lm: f64) -> f64 {
    w_slide + w_lm
}

/// Cosine between the embeddings of two texts.
pub fn text_similarity(embedder: &dyn Embedder, a: &str, b: &str) -> Result<f64, EmbedError> {
    let v = embed_texts(embedder, &[a, b])?;
    cosine(&v[0], &v[1])
}

/// Concept abstract against the whole material text.
pub fn weight_concept_lm(
    concept: &Concept,
    material: &LearningMaterial,
    embedder: &dyn Embedder,
) -> Result<f64, EmbedError> {
    text_similarity(embedder, &concept.abstract_text, material.full_text())
}

/// Concept abstract against one slide's text.
pub fn weight_concept_slide(concept: &Concept, slide: &Slide, embedder: &dyn Embedder) -> Result<f64, EmbedError> {
    text_similarity(embedder, &concept.abstract_text, &slide.text)
}

/// Category name against the whole material text; categories have no
/// article of their own.
pub fn weight_category(
    category_name: &str,
    material: &LearningMaterial,
    embedder: &dyn Embedder,
) -> Result<f64, EmbedError> {
    text_similarity(embedder, category_name, material.full_text())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::material_from_slides;

    fn v(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        let a = v(&[0.3, -2.0, 5.0]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_zero_norm_and_mismatch() {
        assert_eq!(cosine(&v(&[0.0, 0.0]), &v(&[1.0, 2.0])).unwrap(), 0.0);
        assert!(matches!(
            cosine(&v(&[1.0]), &v(&[1.0, 2.0])),
            Err(EmbedError::DimensionMismatch { left: 1, right: 2 })
        ));
    }

    #[test]
    fn importance_is_plain_sum() {
        assert_eq!(importance(0.0, 0.0), 0.0);
        assert_eq!(importance(0.3, 0.5), 0.3 + 0.5);
        assert_eq!(importance(1.0, 1.0), 2.0);
    }

    fn concept_with(abstract_text: &str) -> Concept {
        let mut c = Concept::from_uri("http://dbpedia.org/resource/X");
        c.abstract_text = abstract_text.to_string();
        c
    }

    #[test]
    fn lm_weight_identity_and_empty() {
        let m = material_from_slides(&["graph theory", "planar graph"], "G").unwrap();
        let same = concept_with(m.full_text());
        assert!((weight_concept_lm(&same, &m, &TestEmbedder).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(weight_concept_lm(&concept_with(""), &m, &TestEmbedder).unwrap(), 0.0);
    }

    #[test]
    fn lm_weight_matches_token_oracle() {
        // abstract "graph theory", material "graph": both token vectors are unit,
        // so cos = (1 + g.t) / |g + t|
        let m = material_from_slides(&["graph"], "G").unwrap();
        let g = TestEmbedder::token_vector("graph");
        let t = TestEmbedder::token_vector("theory");
        let gt: f64 = g.values().iter().zip(t.values()).map(|(a, b)| a * b).sum();
        let expected = (1.0 + gt) / (2.0 + 2.0 * gt).sqrt();
        let w = weight_concept_lm(&concept_with("graph theory"), &m, &TestEmbedder).unwrap();
        assert!((w - expected).abs() < 1e-12, "{w} vs {expected}");
    }

    #[test]
    fn slide_weight_identity_and_empty() {
        let m = material_from_slides(&["trees and forests", ""], "T").unwrap();
        let c = concept_with("trees and forests");
        assert!((weight_concept_slide(&c, &m.slides()[0], &TestEmbedder).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(weight_concept_slide(&c, &m.slides()[1], &TestEmbedder).unwrap(), 0.0);
    }

    #[test]
    fn category_weight() {
        let m = material_from_slides(&["Computational linguistics"], "C").unwrap();
        assert!((weight_category("Computational linguistics", &m, &TestEmbedder).unwrap() - 1.0).abs() < 1e-12);
        let empty = material_from_slides(&[""], "E").unwrap();
        assert_eq!(
            weight_category("Computational linguistics", &empty, &TestEmbedder).unwrap(),
            0.0
        );

        // name "computational linguistics" vs text "linguistics": cos = (1 + c.l) / |c + l|
        let m = material_from_slides(&["linguistics"], "L").unwrap();
        let c = TestEmbedder::token_vector("computational");
        let l = TestEmbedder::token_vector("linguistics");
        let cl: f64 = c.values().iter().zip(l.values()).map(|(a, b)| a * b).sum();
        let expected = (1.0 + cl) / (2.0 + 2.0 * cl).sqrt();
        let w = weight_category("Computational linguistics", &m, &TestEmbedder).unwrap();
        assert!((w - expected).abs() < 1e-12);
    }
}
