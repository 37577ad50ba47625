//! In-memory EduKG store. Each material owns a snapshot that readers clone
//! cheaply; writers build the next graph off to the side and swap it in as a
//! new revision, so a reader never sees half of a slide subgraph.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeKind, EduKG, GraphError, GraphStatus, RankedConcept};
use crate::model::{Concept, LearningMaterial, MaterialId};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown material `{0}`")]
    UnknownMaterial(String),
    #[error("material `{0}` is already registered")]
    DuplicateMaterial(String),
    #[error("material `{material}` has no slide {slide}")]
    UnknownSlide { material: String, slide: usize },
    #[error("material `{0}` has no published graph")]
    UnpublishedMaterial(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Revision(pub u64);

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub revision: Revision,
    pub graph: Arc<EduKG>,
}

struct Slot {
    material: Arc<LearningMaterial>,
    writer: Mutex<()>,
    current: RwLock<Snapshot>,
}

impl Slot {
    fn snapshot(&self) -> Snapshot {
        self.current.read().expect("snapshot lock").clone()
    }
}

#[derive(Default)]
pub struct GraphStore {
    slots: RwLock<BTreeMap<MaterialId, Arc<Slot>>>,
    journal: Option<PathBuf>,
}

impl GraphStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Store that writes every revision to `{dir}/{material}.json` before
    /// making it visible, and restores from there on [`GraphStore::register`].
    pub fn with_journal(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            slots: RwLock::default(),
            journal: Some(dir),
        })
    }

    fn journal_path(dir: &Path, id: &MaterialId) -> PathBuf {
        let safe: String = id
            .as_str()
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        dir.join(format!("{safe}.json"))
    }

    fn write_journal(&self, id: &MaterialId, graph: &EduKG) -> std::io::Result<()> {
        let Some(dir) = &self.journal else {
            return Ok(());
        };
        let path = Self::journal_path(dir, id);
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, graph.to_document())?;
        std::fs::rename(&tmp, &path)
    }

    /// Adds a material with a graph holding only its material node (or the
    /// journaled graph, when one exists).
    pub fn register(&self, material: LearningMaterial) -> Result<Revision, StoreError> {
        let id = material.id().clone();
        let mut slots = self.slots.write().expect("store lock");
        if slots.contains_key(&id) {
            return Err(StoreError::DuplicateMaterial(id.0));
        }
        let graph = match &self.journal {
            Some(dir) if Self::journal_path(dir, &id).exists() => {
                let text = std::fs::read_to_string(Self::journal_path(dir, &id))?;
                EduKG::from_document(&text)?
            }
            _ => {
                let mut g = EduKG::new();
                g.ensure_material(&material);
                self.write_journal(&id, &g)?;
                g
            }
        };
        slots.insert(
            id,
            Arc::new(Slot {
                material: Arc::new(material),
                writer: Mutex::new(()),
                current: RwLock::new(Snapshot {
                    revision: Revision(1),
                    graph: Arc::new(graph),
                }),
            }),
        );
        Ok(Revision(1))
    }

    fn slot(&self, id: &MaterialId) -> Result<Arc<Slot>, StoreError> {
        self.slots
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownMaterial(id.0.clone()))
    }

    pub fn contains(&self, id: &MaterialId) -> bool {
        self.slots.read().expect("store lock").contains_key(id)
    }

    pub fn material_ids(&self) -> Vec<MaterialId> {
        self.slots.read().expect("store lock").keys().cloned().collect()
    }

    pub fn material(&self, id: &MaterialId) -> Result<Arc<LearningMaterial>, StoreError> {
        Ok(self.slot(id)?.material.clone())
    }

    pub fn snapshot(&self, id: &MaterialId) -> Result<Snapshot, StoreError> {
        Ok(self.slot(id)?.snapshot())
    }

    pub fn graph(&self, id: &MaterialId) -> Result<Arc<EduKG>, StoreError> {
        Ok(self.snapshot(id)?.graph)
    }

    /// Applies `edit` to a private copy of the current graph and publishes
    /// it as the next revision. An edit that changes nothing keeps the
    /// current revision; an edit that breaks a graph invariant is rejected.
    pub fn commit(&self, id: &MaterialId, edit: impl FnOnce(&mut EduKG)) -> Result<Revision, StoreError> {
        let slot = self.slot(id)?;
        let _writer = slot.writer.lock().expect("writer lock");
        let current = slot.snapshot();
        let mut next = (*current.graph).clone();
        edit(&mut next);
        if next == *current.graph {
            return Ok(current.revision);
        }
        next.validate()?;
        self.write_journal(id, &next)?;
        let revision = Revision(current.revision.0 + 1);
        *slot.current.write().expect("snapshot lock") = Snapshot {
            revision,
            graph: Arc::new(next),
        };
        Ok(revision)
    }

    /// Makes `concepts` the exact concept set of one slide: slide node,
    /// concept nodes, weighted slide-level edges and the material-level edges
    /// they imply, all in one revision.
    pub fn upsert_slide_subgraph(
        &self,
        id: &MaterialId,
        slide_index: usize,
        concepts: &[Concept],
    ) -> Result<Revision, StoreError> {
        let slot = self.slot(id)?;
        if slide_index >= slot.material.num_slides() {
            return Err(StoreError::UnknownSlide {
                material: id.0.clone(),
                slide: slide_index,
            });
        }
        self.commit(id, |g| {
            let slide = g.ensure_slide(id, slide_index);
            let stale: Vec<String> = g
                .edges_of(EdgeKind::Contains)
                .filter(|e| e.src == slide && !concepts.iter().any(|c| c.uri == e.dst))
                .map(|e| e.dst.clone())
                .collect();
            for uri in stale {
                g.remove_edge(&slide, EdgeKind::Contains, &uri);
            }
            for concept in concepts {
                g.link_slide_concept(id, slide_index, concept);
            }
        })
    }

    /// Material-level `CONTAINS` edges for `concepts`, one revision.
    pub fn upsert_material_concepts(&self, id: &MaterialId, concepts: &[Concept]) -> Result<Revision, StoreError> {
        self.commit(id, |g| {
            for concept in concepts {
                g.link_material_concept(id, concept);
            }
        })
    }

    /// Replaces the whole graph of a material.
    pub fn replace_graph(&self, id: &MaterialId, graph: EduKG) -> Result<Revision, StoreError> {
        self.commit(id, |g| *g = graph)
    }

    pub fn publish(&self, id: &MaterialId) -> Result<Revision, StoreError> {
        self.commit(id, |g| g.status = GraphStatus::Published)
    }

    pub fn is_published(&self, id: &MaterialId) -> Result<bool, StoreError> {
        Ok(self.graph(id)?.status == GraphStatus::Published)
    }

    /// Top-`k` concepts of one slide by importance, ties by uri.
    pub fn slide_edukg(&self, id: &MaterialId, slide_index: usize, k: usize) -> Result<Vec<RankedConcept>, StoreError> {
        let slot = self.slot(id)?;
        if slide_index >= slot.material.num_slides() {
            return Err(StoreError::UnknownSlide {
                material: id.0.clone(),
                slide: slide_index,
            });
        }
        let graph = slot.snapshot().graph;
        let mut ranked = graph.ranked_slide_concepts(id, slide_index);
        ranked.truncate(k);
        Ok(ranked)
    }

    /// Union of published material graphs; concept nodes merge by uri.
    pub fn aggregate_course_edukg(&self, ids: &[MaterialId]) -> Result<EduKG, StoreError> {
        let mut graphs = Vec::with_capacity(ids.len());
        for id in ids {
            let graph = self.graph(id)?;
            if graph.status != GraphStatus::Published {
                return Err(StoreError::UnpublishedMaterial(id.0.clone()));
            }
            graphs.push(graph);
        }
        let mut course = EduKG::union(graphs.iter().map(|g| g.as_ref()));
        course.status = GraphStatus::Published;
        Ok(course)
    }
}
