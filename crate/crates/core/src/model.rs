//! Shared domain types: learning materials, slides, keyphrases, linked
//! concepts and the pipeline configuration.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Separator placed between slide texts when assembling `full_text`.
pub const SLIDE_SEPARATOR: &str = "\n";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("learning material has no slides")]
    EmptyMaterial,
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MaterialId(pub String);

impl MaterialId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for MaterialId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slide {
    pub material_id: MaterialId,
    pub page_index: usize,
    pub text: String,
}

/// One slide deck. Slides are indexed `0..n` in deck order and `full_text`
/// is always their newline-joined concatenation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningMaterial {
    id: MaterialId,
    title: String,
    slides: Vec<Slide>,
    full_text: String,
}

impl LearningMaterial {
    pub fn new<S: AsRef<str>>(id: MaterialId, title: impl Into<String>, slide_texts: &[S]) -> Result<Self, ModelError> {
        if slide_texts.is_empty() {
            return Err(ModelError::EmptyMaterial);
        }
        let slides: Vec<Slide> = slide_texts
            .iter()
            .enumerate()
            .map(|(page_index, text)| Slide {
                material_id: id.clone(),
                page_index,
                text: text.as_ref().to_string(),
            })
            .collect();
        let full_text = slides
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(SLIDE_SEPARATOR);
        Ok(Self {
            id,
            title: title.into(),
            slides,
            full_text,
        })
    }

    pub fn id(&self) -> &MaterialId {
        &self.id
    }

    pub fn title(&self) -> &str {
        &self.title
    }

    pub fn slides(&self) -> &[Slide] {
        &self.slides
    }

    pub fn slide(&self, page_index: usize) -> Option<&Slide> {
        self.slides.get(page_index)
    }

    pub fn num_slides(&self) -> usize {
        self.slides.len()
    }

    pub fn full_text(&self) -> &str {
        &self.full_text
    }
}

/// Builds a material from ordered slide texts. The identifier is derived
/// from the title.
pub fn material_from_slides<S: AsRef<str>>(slide_texts: &[S], title: &str) -> Result<LearningMaterial, ModelError> {
    LearningMaterial::new(MaterialId::new(slug(title)), title, slide_texts)
}

fn slug(title: &str) -> String {
    let mut out = String::new();
    for ch in title.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        "material".to_string()
    } else {
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyphraseOrigin {
    Material,
    Slide(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyphrase {
    pub surface: String,
    pub score: f64,
    pub origin: KeyphraseOrigin,
}

/// A knowledge-base entity linked from one or more keyphrases.
///
/// `importance_per_slide[p]` is kept equal to `slide_weights[p] + w_lm`;
/// mutate weights through [`Concept::set_w_lm`] and
/// [`Concept::set_slide_weight`] to preserve that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub uri: String,
    pub label: String,
    pub abstract_text: String,
    w_lm: f64,
    slide_weights: BTreeMap<usize, f64>,
    importance_per_slide: BTreeMap<usize, f64>,
}

impl Concept {
    pub fn new(uri: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            uri: uri.into(),
            label: label.into(),
            abstract_text: String::new(),
            w_lm: 0.0,
            slide_weights: BTreeMap::new(),
            importance_per_slide: BTreeMap::new(),
        }
    }

    /// Shell concept whose label is the resource's local name.
    pub fn from_uri(uri: impl Into<String>) -> Self {
        let uri = uri.into();
        let label = label_from_uri(&uri);
        Self::new(uri, label)
    }

    pub fn w_lm(&self) -> f64 {
        self.w_lm
    }

    pub fn slide_weights(&self) -> &BTreeMap<usize, f64> {
        &self.slide_weights
    }

    pub fn importance_per_slide(&self) -> &BTreeMap<usize, f64> {
        &self.importance_per_slide
    }

    pub fn importance(&self, page_index: usize) -> Option<f64> {
        self.importance_per_slide.get(&page_index).copied()
    }

    pub fn set_w_lm(&mut self, w_lm: f64) {
        self.w_lm = w_lm;
        for (page, w_slide) in &self.slide_weights {
            self.importance_per_slide
                .insert(*page, crate::weighting::importance(*w_slide, w_lm));
        }
    }

    pub fn set_slide_weight(&mut self, page_index: usize, w_slide: f64) {
        self.slide_weights.insert(page_index, w_slide);
        self.importance_per_slide
            .insert(page_index, crate::weighting::importance(w_slide, self.w_lm));
    }

    pub fn remove_slide(&mut self, page_index: usize) {
        self.slide_weights.remove(&page_index);
        self.importance_per_slide.remove(&page_index);
    }

    /// Folds another occurrence of the same resource into this one. Slide
    /// weights from `other` win for pages present in both.
    pub fn merge(&mut self, other: &Concept) {
        debug_assert_eq!(self.uri, other.uri);
        if self.abstract_text.is_empty() {
            self.abstract_text = other.abstract_text.clone();
        }
        for (page, w_slide) in &other.slide_weights {
            self.set_slide_weight(*page, *w_slide);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelatedConcept {
    pub uri: String,
    pub label: String,
    pub weight: f64,
    pub source_concept_uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub uri: String,
    pub name: String,
    pub weight: f64,
}

/// Inserts `concept` into `set`, merging with an existing entry of the same uri.
pub fn upsert_concept(set: &mut BTreeMap<String, Concept>, concept: Concept) {
    match set.get_mut(&concept.uri) {
        Some(existing) => existing.merge(&concept),
        None => {
            set.insert(concept.uri.clone(), concept);
        }
    }
}

/// Human-readable label from a resource identifier: the percent-decoded
/// local name with underscores turned into spaces and any `Category:`
/// prefix dropped.
pub fn label_from_uri(uri: &str) -> String {
    let local = uri.rsplit(['/', '#']).next().unwrap_or(uri);
    let decoded = percent_encoding::percent_decode_str(local).decode_utf8_lossy();
    let name = decoded.strip_prefix("Category:").unwrap_or(&decoded);
    name.replace('_', " ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineMode {
    TopDown,
    BottomUp,
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineMode::TopDown => f.write_str("top-down"),
            PipelineMode::BottomUp => f.write_str("bottom-up"),
        }
    }
}

impl std::str::FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "top-down" | "topdown" => Ok(PipelineMode::TopDown),
            "bottom-up" | "bottomup" => Ok(PipelineMode::BottomUp),
            other => Err(format!("unknown pipeline mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: PipelineMode,
    pub per_slide_budget: usize,
    pub material_budget_factor: usize,
    pub linker_support: u32,
    pub linker_confidence: f64,
    /// Minimum weight for a related concept to survive expansion.
    pub related_weight_floor: f64,
    /// Minimum weight for a category to survive expansion.
    pub category_weight_floor: f64,
    pub related_cap_per_concept: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: PipelineMode::BottomUp,
            per_slide_budget: 15,
            material_budget_factor: 15,
            linker_support: 5,
            linker_confidence: 0.35,
            related_weight_floor: 0.40,
            category_weight_floor: 0.30,
            related_cap_per_concept: 10,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidConfig(msg.to_string()));
        if self.per_slide_budget == 0 || self.material_budget_factor == 0 {
            return bad("keyphrase budgets must be positive");
        }
        if self.related_cap_per_concept == 0 {
            return bad("related_cap_per_concept must be positive");
        }
        if !(self.linker_confidence > 0.0 && self.linker_confidence < 1.0) {
            return bad("linker_confidence must lie in (0, 1)");
        }
        for floor in [self.related_weight_floor, self.category_weight_floor] {
            if !(-1.0..=1.0).contains(&floor) {
                return bad("weight floors must lie in [-1, 1]");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_text_joins_slides_with_newline() {
        let m = material_from_slides(&["a", "b"], "Deck").unwrap();
        assert_eq!(m.full_text(), "a\nb");
        assert_eq!(m.num_slides(), 2);
        assert_eq!(m.slides()[1].page_index, 1);
    }

    #[test]
    fn single_empty_slide_is_allowed() {
        let m = material_from_slides(&[""], "Empty").unwrap();
        assert_eq!(m.num_slides(), 1);
        assert_eq!(m.full_text(), "");
    }

    #[test]
    fn empty_slide_list_is_rejected() {
        let none: [&str; 0] = [];
        assert_eq!(material_from_slides(&none, "x").unwrap_err(), ModelError::EmptyMaterial);
    }

    #[test]
    fn ten_slides_give_top_down_budget_150() {
        let texts: Vec<String> = (0..10).map(|i| format!("slide {i}")).collect();
        let m = material_from_slides(&texts, "Ten").unwrap();
        let budget = crate::keyphrase::keyphrase_budget(m.num_slides(), PipelineMode::TopDown).unwrap();
        assert_eq!(budget, 150);
    }

    #[test]
    fn importance_tracks_weight_updates() {
        let mut c = Concept::from_uri("http://dbpedia.org/resource/Graph_theory");
        assert_eq!(c.label, "Graph theory");
        c.set_slide_weight(0, 0.3);
        c.set_w_lm(0.5);
        c.set_slide_weight(2, -0.25);
        for (page, imp) in c.importance_per_slide() {
            assert_eq!(*imp, c.slide_weights()[page] + c.w_lm());
        }
    }

    #[test]
    fn upsert_merges_slide_weights() {
        let mut set = BTreeMap::new();
        let mut a = Concept::from_uri("u");
        a.set_slide_weight(0, 0.1);
        let mut b = Concept::from_uri("u");
        b.set_slide_weight(1, 0.2);
        upsert_concept(&mut set, a);
        upsert_concept(&mut set, b);
        assert_eq!(set.len(), 1);
        assert_eq!(set["u"].slide_weights().len(), 2);
    }

    #[test]
    fn category_label_drops_prefix() {
        assert_eq!(
            label_from_uri("http://dbpedia.org/resource/Category:Computational_linguistics"),
            "Computational linguistics"
        );
        assert_eq!(label_from_uri("http://x/resource/Caf%C3%A9"), "Café");
    }

    #[test]
    fn default_config_is_valid() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.linker_support, 5);
        assert_eq!(cfg.linker_confidence, 0.35);
        let bad = PipelineConfig {
            linker_confidence: 1.0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
