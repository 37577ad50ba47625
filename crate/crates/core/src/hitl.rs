//! Moderated construction: a draft is built without expansion, reviewed and
//! edited by a moderator, then expanded and published for learners.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expansion::expand_graph;
use crate::graph::{material_node_id, EdgeKind, EduKG, GraphStatus, NodeKind, RankedConcept};
use crate::model::{Concept, LearningMaterial, MaterialId, PipelineConfig, PipelineMode};
use crate::pipelines::Pipeline;
use crate::services::ServiceBundle;
use crate::store::{GraphStore, Revision, StoreError};
use crate::weighting::{weight_concept_lm, weight_concept_slide};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HitlError {
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("material `{0}` already exists")]
    DuplicateMaterial(String),
    #[error("unknown draft `{0}`")]
    UnknownDraft(String),
    #[error("material `{material}` already has active draft `{draft}`")]
    ConflictActiveDraft { material: String, draft: String },
    #[error("draft is {0:?}, not ready")]
    NotReady(DraftState),
    #[error("expected version {expected}, draft is at {actual}")]
    VersionConflict { expected: u64, actual: u64 },
    #[error("concept `{0}` is not in the draft")]
    UnknownConcept(String),
    #[error("draft is published and can no longer change")]
    DraftImmutable,
    #[error("`{0}` did not resolve to a concept")]
    Unresolvable(String),
    #[error("slide {index} is outside the material's {slides} slides")]
    BadSlideIndex { index: usize, slides: usize },
    #[error("pipeline failed: {0}")]
    PipelineFailed(String),
    #[error("material `{0}` has no published graph")]
    NotPublished(String),
    #[error("knowledge service failed: {0}")]
    Service(String),
    #[error("store: {0}")]
    Store(String),
}

impl HitlError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            HitlError::UnknownMaterial(_) => "UNKNOWN_MATERIAL",
            HitlError::DuplicateMaterial(_) => "DUPLICATE_MATERIAL",
            HitlError::UnknownDraft(_) => "UNKNOWN_DRAFT",
            HitlError::ConflictActiveDraft { .. } => "CONFLICT_ACTIVE_DRAFT",
            HitlError::NotReady(_) => "NOT_READY",
            HitlError::VersionConflict { .. } => "VERSION_CONFLICT",
            HitlError::UnknownConcept(_) => "UNKNOWN_CONCEPT",
            HitlError::DraftImmutable => "DRAFT_IMMUTABLE",
            HitlError::Unresolvable(_) => "UNRESOLVABLE",
            HitlError::BadSlideIndex { .. } => "BAD_SLIDE_INDEX",
            HitlError::PipelineFailed(_) => "PIPELINE_FAILED",
            HitlError::NotPublished(_) => "NOT_PUBLISHED",
            HitlError::Service(_) => "SERVICE_FAILURE",
            HitlError::Store(_) => "STORE_FAILURE",
        }
    }
}

impl From<StoreError> for HitlError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownMaterial(m) => HitlError::UnknownMaterial(m),
            StoreError::DuplicateMaterial(m) => HitlError::DuplicateMaterial(m),
            StoreError::UnpublishedMaterial(m) => HitlError::NotPublished(m),
            other => HitlError::Store(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DraftState {
    Building,
    Ready,
    Published,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlideLink {
    pub slide: usize,
    pub w_slide: f64,
    pub importance: f64,
}

/// A row of the concept review table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConceptEntry {
    pub uri: String,
    pub label: String,
    pub w_lm: f64,
    pub slides: Vec<SlideLink>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DraftView {
    pub id: String,
    pub material_id: String,
    pub mode: PipelineMode,
    pub state: DraftState,
    pub version: u64,
    pub concepts: usize,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Publication {
    pub material_id: String,
    pub revision: Revision,
    pub nodes: usize,
    pub edges: usize,
}

/// What a moderator typed into the add-concept form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConceptQuery {
    Uri { uri: String },
    Text { text: String },
}

impl ConceptQuery {
    /// Treats anything that looks like an absolute http(s) identifier as a
    /// uri and everything else as free text.
    pub fn parse(input: &str) -> Self {
        let input = input.trim();
        if input.starts_with("http://") || input.starts_with("https://") {
            ConceptQuery::Uri { uri: input.to_string() }
        } else {
            ConceptQuery::Text {
                text: input.to_string(),
            }
        }
    }
}

struct Draft {
    id: String,
    material: Arc<LearningMaterial>,
    mode: PipelineMode,
    state: DraftState,
    version: u64,
    concepts: BTreeMap<String, Concept>,
    /// Uris a reviewer removed; kept out of the expansion too.
    rejected: BTreeSet<String>,
    warnings: Vec<String>,
    error: Option<String>,
}

impl Draft {
    fn view(&self) -> DraftView {
        DraftView {
            id: self.id.clone(),
            material_id: self.material.id().0.clone(),
            mode: self.mode,
            state: self.state,
            version: self.version,
            concepts: self.concepts.len(),
            warnings: self.warnings.clone(),
            error: self.error.clone(),
        }
    }

    fn is_active(&self) -> bool {
        matches!(self.state, DraftState::Building | DraftState::Ready)
    }

    /// Gate for every edit: published drafts are frozen, unfinished ones are
    /// not editable yet, and the caller must hold the current version.
    fn check_editable(&self, expected: u64) -> Result<(), HitlError> {
        match self.state {
            DraftState::Published => return Err(HitlError::DraftImmutable),
            DraftState::Building | DraftState::Failed => return Err(HitlError::NotReady(self.state)),
            DraftState::Ready => {}
        }
        if expected != self.version {
            return Err(HitlError::VersionConflict {
                expected,
                actual: self.version,
            });
        }
        Ok(())
    }

    fn graph(&self) -> EduKG {
        let mut g = EduKG::new();
        g.ensure_material(&self.material);
        let id = self.material.id();
        for index in 0..self.material.num_slides() {
            g.ensure_slide(id, index);
        }
        for concept in self.concepts.values() {
            g.link_material_concept(id, concept);
            for &index in concept.slide_weights().keys() {
                g.link_slide_concept(id, index, concept);
            }
        }
        g
    }
}

/// Rebuilds concept working copies from a draft graph.
fn concepts_from_graph(graph: &EduKG, material: &MaterialId) -> BTreeMap<String, Concept> {
    let material_node = material_node_id(material);
    let mut concepts = BTreeMap::new();
    for e in graph.edges_of(EdgeKind::Contains).filter(|e| e.src == material_node) {
        let label = graph.node(&e.dst).map(|n| n.label.clone()).unwrap_or_default();
        let mut c = Concept::new(&e.dst, label);
        c.set_w_lm(e.weight.unwrap_or(0.0));
        concepts.insert(e.dst.clone(), c);
    }
    let prefix = format!("slide:{material}:");
    for e in graph.edges_of(EdgeKind::Contains) {
        let Some(index) = e.src.strip_prefix(&prefix).and_then(|i| i.parse::<usize>().ok()) else {
            continue;
        };
        if let Some(c) = concepts.get_mut(&e.dst) {
            c.set_slide_weight(index, e.weight.unwrap_or(0.0));
        }
    }
    concepts
}

struct Inner {
    services: Arc<ServiceBundle>,
    config: PipelineConfig,
    published: GraphStore,
    drafts: Mutex<BTreeMap<String, Arc<Mutex<Draft>>>>,
    next_id: Mutex<u64>,
    changed: Condvar,
    changed_lock: Mutex<()>,
}

/// Thread-safe handle; clones share state.
#[derive(Clone)]
pub struct HitlService {
    inner: Arc<Inner>,
}

impl HitlService {
    pub fn new(services: Arc<ServiceBundle>, config: PipelineConfig) -> Self {
        Self::with_store(services, config, GraphStore::new())
    }

    /// Service publishing into `store` (for instance one with a journal).
    pub fn with_store(services: Arc<ServiceBundle>, config: PipelineConfig, store: GraphStore) -> Self {
        Self {
            inner: Arc::new(Inner {
                services,
                config,
                published: store,
                drafts: Mutex::new(BTreeMap::new()),
                next_id: Mutex::new(0),
                changed: Condvar::new(),
                changed_lock: Mutex::new(()),
            }),
        }
    }

    pub fn store(&self) -> &GraphStore {
        &self.inner.published
    }

    pub fn ingest(&self, material: LearningMaterial) -> Result<MaterialId, HitlError> {
        let id = material.id().clone();
        self.inner.published.register(material)?;
        Ok(id)
    }

    fn draft(&self, id: &str) -> Result<Arc<Mutex<Draft>>, HitlError> {
        self.inner
            .drafts
            .lock()
            .expect("drafts")
            .get(id)
            .cloned()
            .ok_or_else(|| HitlError::UnknownDraft(id.to_string()))
    }

    fn notify(&self) {
        let _g = self.inner.changed_lock.lock().expect("notify");
        self.inner.changed.notify_all();
    }

    /// Starts a background run of `mode` without expansion. The draft is
    /// `Building` until the run finishes.
    pub fn create_draft(&self, material_id: &MaterialId, mode: PipelineMode) -> Result<String, HitlError> {
        let material = self.inner.published.material(material_id)?;
        if material.full_text().trim().is_empty() {
            return Err(HitlError::PipelineFailed(
                crate::model::ModelError::EmptyMaterial.to_string(),
            ));
        }
        let draft = {
            let mut drafts = self.inner.drafts.lock().expect("drafts");
            if let Some(active) = drafts.values().find(|d| {
                let d = d.lock().expect("draft");
                d.material.id() == material_id && d.is_active()
            }) {
                return Err(HitlError::ConflictActiveDraft {
                    material: material_id.0.clone(),
                    draft: active.lock().expect("draft").id.clone(),
                });
            }
            let mut next = self.inner.next_id.lock().expect("ids");
            *next += 1;
            let id = format!("d{}", *next);
            let draft = Arc::new(Mutex::new(Draft {
                id: id.clone(),
                material: material.clone(),
                mode,
                state: DraftState::Building,
                version: 1,
                concepts: BTreeMap::new(),
                rejected: BTreeSet::new(),
                warnings: Vec::new(),
                error: None,
            }));
            drafts.insert(id, draft.clone());
            draft
        };
        let id = draft.lock().expect("draft").id.clone();
        let service = self.clone();
        std::thread::spawn(move || {
            let result = {
                let bundle = &service.inner.services;
                let store = GraphStore::new();
                store
                    .register((*material).clone())
                    .map_err(|e| e.to_string())
                    .and_then(|_| {
                        Pipeline::new(bundle.services(), service.inner.config.clone())
                            .with_expansion(false)
                            .run_in(&store, material.id(), mode, &mut |_| {})
                            .map_err(|e| e.to_string())
                    })
            };
            {
                let mut d = draft.lock().expect("draft");
                match result {
                    Ok(report) => {
                        d.concepts = concepts_from_graph(&report.graph, material.id());
                        d.warnings = report.warnings;
                        d.state = DraftState::Ready;
                    }
                    Err(e) => {
                        tracing::warn!("draft {} failed: {e}", d.id);
                        d.error = Some(e);
                        d.state = DraftState::Failed;
                    }
                }
            }
            service.notify();
        });
        Ok(id)
    }

    pub fn get_draft(&self, id: &str) -> Result<DraftView, HitlError> {
        Ok(self.draft(id)?.lock().expect("draft").view())
    }

    /// Blocks until the draft leaves `Building` or `timeout` passes.
    pub fn wait_ready(&self, id: &str, timeout: Duration) -> Result<DraftView, HitlError> {
        let draft = self.draft(id)?;
        let deadline = std::time::Instant::now() + timeout;
        let mut guard = self.inner.changed_lock.lock().expect("notify");
        loop {
            let view = draft.lock().expect("draft").view();
            let now = std::time::Instant::now();
            if view.state != DraftState::Building || now >= deadline {
                return Ok(view);
            }
            guard = self
                .inner
                .changed
                .wait_timeout(guard, (deadline - now).min(Duration::from_millis(50)))
                .expect("notify")
                .0;
        }
    }

    /// Working concept set, highest `w_lm` first, ties by uri.
    pub fn list_concepts(&self, id: &str) -> Result<Vec<ConceptEntry>, HitlError> {
        let draft = self.draft(id)?;
        let d = draft.lock().expect("draft");
        if matches!(d.state, DraftState::Building | DraftState::Failed) {
            return Err(HitlError::NotReady(d.state));
        }
        let mut rows: Vec<ConceptEntry> = d
            .concepts
            .values()
            .map(|c| ConceptEntry {
                uri: c.uri.clone(),
                label: c.label.clone(),
                w_lm: c.w_lm(),
                slides: c
                    .slide_weights()
                    .iter()
                    .map(|(&slide, &w_slide)| SlideLink {
                        slide,
                        w_slide,
                        importance: c.importance(slide).unwrap_or(w_slide + c.w_lm()),
                    })
                    .collect(),
            })
            .collect();
        rows.sort_by(|a, b| b.w_lm.total_cmp(&a.w_lm).then_with(|| a.uri.cmp(&b.uri)));
        Ok(rows)
    }

    /// Draft preview graph (never expanded).
    pub fn draft_graph(&self, id: &str) -> Result<EduKG, HitlError> {
        let draft = self.draft(id)?;
        let d = draft.lock().expect("draft");
        if matches!(d.state, DraftState::Building | DraftState::Failed) {
            return Err(HitlError::NotReady(d.state));
        }
        Ok(d.graph())
    }

    pub fn remove_concept(&self, id: &str, uri: &str, expected_version: u64) -> Result<u64, HitlError> {
        let draft = self.draft(id)?;
        let mut d = draft.lock().expect("draft");
        d.check_editable(expected_version)?;
        if d.concepts.remove(uri).is_none() {
            return Err(HitlError::UnknownConcept(uri.to_string()));
        }
        d.rejected.insert(uri.to_string());
        d.version += 1;
        Ok(d.version)
    }

    /// Resolves `query`, weighs it against the material and the given
    /// slides, and adds it. Adding a uri already in the draft links it to
    /// the extra slides.
    pub fn add_concept(
        &self,
        id: &str,
        query: &ConceptQuery,
        slides: &[usize],
        expected_version: u64,
    ) -> Result<u64, HitlError> {
        let draft = self.draft(id)?;
        let mut d = draft.lock().expect("draft");
        d.check_editable(expected_version)?;
        let num_slides = d.material.num_slides();
        if let Some(&index) = slides.iter().find(|&&i| i >= num_slides) {
            return Err(HitlError::BadSlideIndex {
                index,
                slides: num_slides,
            });
        }
        let bundle = &self.inner.services;
        let config = &self.inner.config;
        let uri = match query {
            ConceptQuery::Uri { uri } if !uri.trim().is_empty() => uri.trim().to_string(),
            ConceptQuery::Uri { uri } => return Err(HitlError::Unresolvable(uri.clone())),
            ConceptQuery::Text { text } => {
                if text.trim().is_empty() {
                    return Err(HitlError::Unresolvable(text.clone()));
                }
                let hits = bundle
                    .linker
                    .annotate(text, config.linker_confidence, config.linker_support)
                    .map_err(|e| HitlError::Service(e.to_string()))?;
                hits.into_iter()
                    .next()
                    .map(|h| h.uri)
                    .ok_or_else(|| HitlError::Unresolvable(text.clone()))?
            }
        };

        let services = bundle.services();
        let mut concept = Concept::from_uri(&uri);
        concept.abstract_text = services
            .abstracts
            .fetch_abstract(&uri)
            .map_err(|e| HitlError::Service(e.to_string()))?;
        let material = d.material.clone();
        let w_lm =
            weight_concept_lm(&concept, &material, services.embedder).map_err(|e| HitlError::Service(e.to_string()))?;
        concept.set_w_lm(w_lm);
        for &index in slides {
            let w_slide = weight_concept_slide(&concept, &material.slides()[index], services.embedder)
                .map_err(|e| HitlError::Service(e.to_string()))?;
            concept.set_slide_weight(index, w_slide);
        }
        match d.concepts.get_mut(&uri) {
            Some(existing) => {
                existing.abstract_text = concept.abstract_text.clone();
                existing.set_w_lm(w_lm);
                existing.merge(&concept);
            }
            None => {
                d.rejected.remove(&uri);
                d.concepts.insert(uri, concept);
            }
        }
        d.version += 1;
        Ok(d.version)
    }

    /// Expands the edited concept set and publishes it for learners.
    pub fn finalize(&self, id: &str, expected_version: u64) -> Result<Publication, HitlError> {
        let draft = self.draft(id)?;
        let mut d = draft.lock().expect("draft");
        d.check_editable(expected_version)?;
        let bundle = &self.inner.services;
        let outcome = expand_graph(
            &d.graph(),
            &d.material,
            &self.inner.config,
            bundle.services().expansion(),
        )
        .map_err(|e| HitlError::Service(e.to_string()))?;
        let mut graph = outcome.graph;
        for uri in &d.rejected {
            if graph.node(uri).is_some_and(|n| n.kind != NodeKind::Concept) {
                graph.remove_node(uri);
            }
        }
        graph.status = GraphStatus::Published;
        let material_id = d.material.id().clone();
        let revision = self.inner.published.replace_graph(&material_id, graph)?;
        let published = self.inner.published.graph(&material_id)?;
        d.warnings.extend(outcome.warnings);
        d.state = DraftState::Published;
        d.version += 1;
        Ok(Publication {
            material_id: material_id.0,
            revision,
            nodes: published.node_count(),
            edges: published.edge_count(),
        })
    }

    pub fn published_graph(&self, material_id: &MaterialId) -> Result<Arc<EduKG>, HitlError> {
        let graph = self.inner.published.graph(material_id)?;
        if graph.status != GraphStatus::Published {
            return Err(HitlError::NotPublished(material_id.0.clone()));
        }
        Ok(graph)
    }

    /// Top-`k` concepts of a slide of the published graph.
    pub fn slide_concepts(
        &self,
        material_id: &MaterialId,
        slide: usize,
        k: usize,
    ) -> Result<Vec<RankedConcept>, HitlError> {
        let material = self.inner.published.material(material_id)?;
        if slide >= material.num_slides() {
            return Err(HitlError::BadSlideIndex {
                index: slide,
                slides: material.num_slides(),
            });
        }
        self.published_graph(material_id)?;
        Ok(self.inner.published.slide_edukg(material_id, slide, k)?)
    }
}
