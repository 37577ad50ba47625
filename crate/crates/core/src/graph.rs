//! The EduKG property graph: typed nodes, typed weighted edges, the portable
//! JSON document and the Cypher statement export.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Concept, LearningMaterial, MaterialId};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge {src} -[{kind:?}]-> {dst} references missing node {missing}")]
    DanglingEdge {
        src: String,
        dst: String,
        kind: EdgeKind,
        missing: String,
    },
    #[error("slide {slide} contains {concept} but its material does not")]
    CarryOverViolated { slide: String, concept: String },
    #[error("edge {src} -[{kind:?}]-> {dst} has out-of-range weight {weight}")]
    WeightOutOfRange {
        src: String,
        dst: String,
        kind: EdgeKind,
        weight: f64,
    },
    #[error("invalid graph document: {0}")]
    Document(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Material,
    Slide,
    Concept,
    RelatedConcept,
    Category,
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Material => "Material",
            NodeKind::Slide => "Slide",
            NodeKind::Concept => "Concept",
            NodeKind::RelatedConcept => "RelatedConcept",
            NodeKind::Category => "Category",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EdgeKind {
    HasSlide,
    Contains,
    RelatedTo,
    BelongsTo,
}

impl EdgeKind {
    pub fn label(&self) -> &'static str {
        match self {
            EdgeKind::HasSlide => "HAS_SLIDE",
            EdgeKind::Contains => "CONTAINS",
            EdgeKind::RelatedTo => "RELATED_TO",
            EdgeKind::BelongsTo => "BELONGS_TO",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum GraphStatus {
    #[default]
    Draft,
    Published,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub properties: BTreeMap<String, serde_json::Value>,
}

impl Node {
    pub fn new(id: impl Into<String>, kind: NodeKind, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            label: label.into(),
            properties: BTreeMap::new(),
        }
    }

    pub fn with_property(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.properties.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    /// Per-slide ranking key, present on slide-level `CONTAINS` edges.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub importance: Option<f64>,
}

impl Edge {
    pub fn new(src: impl Into<String>, kind: EdgeKind, dst: impl Into<String>) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            kind,
            weight: None,
            importance: None,
        }
    }

    pub fn weighted(mut self, weight: f64) -> Self {
        self.weight = Some(weight);
        self
    }

    pub fn with_importance(mut self, importance: f64) -> Self {
        self.importance = Some(importance);
        self
    }

    pub fn key(&self) -> EdgeKey {
        (self.src.clone(), self.kind, self.dst.clone())
    }
}

pub type EdgeKey = (String, EdgeKind, String);

pub fn material_node_id(material: &MaterialId) -> String {
    format!("material:{material}")
}

pub fn slide_node_id(material: &MaterialId, page_index: usize) -> String {
    format!("slide:{material}:{page_index}")
}

/// A (subject, CONTAINS, concept) triple, the unit of accuracy sampling.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TripleId {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl std::fmt::Display for TripleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

/// Concept as seen from one slide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub uri: String,
    pub label: String,
    pub w_slide: f64,
    pub w_lm: f64,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EduKG {
    pub status: GraphStatus,
    nodes: BTreeMap<String, Node>,
    edges: BTreeMap<EdgeKey, Edge>,
}

#[derive(Serialize, Deserialize)]
struct GraphDocument {
    status: GraphStatus,
    nodes: Vec<Node>,
    edges: Vec<Edge>,
}

impl EduKG {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn contains_node(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.values()
    }

    pub fn edge(&self, src: &str, kind: EdgeKind, dst: &str) -> Option<&Edge> {
        self.edges.get(&(src.to_string(), kind, dst.to_string()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = &Node> {
        self.nodes.values().filter(move |n| n.kind == kind)
    }

    pub fn edges_of(&self, kind: EdgeKind) -> impl Iterator<Item = &Edge> {
        self.edges.values().filter(move |e| e.kind == kind)
    }

    /// Inserts a node; an existing node with the same id is kept as is.
    /// Returns whether the node was new.
    pub fn add_node(&mut self, node: Node) -> bool {
        if self.nodes.contains_key(&node.id) {
            return false;
        }
        self.nodes.insert(node.id.clone(), node);
        true
    }

    /// Inserts or replaces a node.
    pub fn put_node(&mut self, node: Node) {
        self.nodes.insert(node.id.clone(), node);
    }

    /// Inserts an edge, replacing any edge with the same (src, kind, dst).
    pub fn put_edge(&mut self, edge: Edge) {
        self.edges.insert(edge.key(), edge);
    }

    /// Inserts an edge only if none with the same key exists.
    pub fn add_edge(&mut self, edge: Edge) -> bool {
        let key = edge.key();
        if self.edges.contains_key(&key) {
            return false;
        }
        self.edges.insert(key, edge);
        true
    }

    pub fn remove_edge(&mut self, src: &str, kind: EdgeKind, dst: &str) -> Option<Edge> {
        self.edges.remove(&(src.to_string(), kind, dst.to_string()))
    }

    pub fn remove_node(&mut self, id: &str) {
        self.nodes.remove(id);
        self.edges.retain(|(src, _, dst), _| src != id && dst != id);
    }

    pub fn ensure_material(&mut self, material: &LearningMaterial) {
        let id = material_node_id(material.id());
        self.add_node(
            Node::new(&id, NodeKind::Material, material.title())
                .with_property("material_id", material.id().as_str())
                .with_property("slide_count", material.num_slides()),
        );
    }

    pub fn ensure_slide(&mut self, material: &MaterialId, page_index: usize) -> String {
        let id = slide_node_id(material, page_index);
        self.add_node(
            Node::new(&id, NodeKind::Slide, format!("Slide {}", page_index + 1))
                .with_property("material_id", material.as_str())
                .with_property("page_index", page_index),
        );
        self.add_edge(Edge::new(material_node_id(material), EdgeKind::HasSlide, &id));
        id
    }

    pub fn ensure_concept(&mut self, concept: &Concept) {
        self.add_node(Node::new(&concept.uri, NodeKind::Concept, &concept.label));
    }

    /// Material-level `CONTAINS` edge carrying `w_lm`.
    pub fn link_material_concept(&mut self, material: &MaterialId, concept: &Concept) {
        self.ensure_concept(concept);
        self.put_edge(Edge::new(material_node_id(material), EdgeKind::Contains, &concept.uri).weighted(concept.w_lm()));
    }

    /// Slide-level `CONTAINS` edge carrying `w_slide` and importance, plus
    /// the material-level edge it implies.
    pub fn link_slide_concept(&mut self, material: &MaterialId, page_index: usize, concept: &Concept) {
        let Some(w_slide) = concept.slide_weights().get(&page_index).copied() else {
            return;
        };
        let importance = concept.importance(page_index).expect("importance tracks slide weight");
        let slide = self.ensure_slide(material, page_index);
        self.link_material_concept(material, concept);
        self.put_edge(
            Edge::new(slide, EdgeKind::Contains, &concept.uri)
                .weighted(w_slide)
                .with_importance(importance),
        );
    }

    /// Uris of main concepts attached to the material node.
    pub fn material_concepts(&self, material: &MaterialId) -> BTreeSet<String> {
        let src = material_node_id(material);
        self.edges
            .values()
            .filter(|e| e.kind == EdgeKind::Contains && e.src == src)
            .map(|e| e.dst.clone())
            .collect()
    }

    /// Uris of concepts attached to any slide of the material.
    pub fn slide_concepts(&self, material: &MaterialId) -> BTreeSet<String> {
        let prefix = format!("slide:{material}:");
        self.edges
            .values()
            .filter(|e| e.kind == EdgeKind::Contains && e.src.starts_with(&prefix))
            .map(|e| e.dst.clone())
            .collect()
    }

    /// Concepts on one slide ordered by importance (descending), ties by uri.
    pub fn ranked_slide_concepts(&self, material: &MaterialId, page_index: usize) -> Vec<RankedConcept> {
        let slide = slide_node_id(material, page_index);
        let material_node = material_node_id(material);
        let mut ranked: Vec<RankedConcept> = self
            .edges
            .values()
            .filter(|e| e.kind == EdgeKind::Contains && e.src == slide)
            .map(|e| {
                let w_lm = self
                    .edge(&material_node, EdgeKind::Contains, &e.dst)
                    .and_then(|m| m.weight)
                    .unwrap_or(0.0);
                let w_slide = e.weight.unwrap_or(0.0);
                RankedConcept {
                    uri: e.dst.clone(),
                    label: self.nodes.get(&e.dst).map(|n| n.label.clone()).unwrap_or_default(),
                    w_slide,
                    w_lm,
                    importance: e.importance.unwrap_or(w_slide + w_lm),
                }
            })
            .collect();
        ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance).then_with(|| a.uri.cmp(&b.uri)));
        ranked
    }

    /// All (Slide|LM, contains, MC) triples, sorted.
    pub fn contains_triples(&self) -> Vec<TripleId> {
        self.edges
            .values()
            .filter(|e| e.kind == EdgeKind::Contains)
            .filter(|e| {
                matches!(
                    self.nodes.get(&e.src).map(|n| n.kind),
                    Some(NodeKind::Slide | NodeKind::Material)
                )
            })
            .map(|e| TripleId {
                subject: e.src.clone(),
                predicate: "contains".to_string(),
                object: e.dst.clone(),
            })
            .collect()
    }

    /// Checks endpoint existence, the slide-to-material carry-over rule and
    /// weight ranges.
    pub fn validate(&self) -> Result<(), GraphError> {
        for e in self.edges.values() {
            for end in [&e.src, &e.dst] {
                if !self.nodes.contains_key(end) {
                    return Err(GraphError::DanglingEdge {
                        src: e.src.clone(),
                        dst: e.dst.clone(),
                        kind: e.kind,
                        missing: end.clone(),
                    });
                }
            }
            let out_of_range = |v: Option<f64>, bound: f64| v.is_some_and(|w| !w.is_finite() || w.abs() > bound);
            if out_of_range(e.weight, 1.0) || out_of_range(e.importance, 2.0) {
                return Err(GraphError::WeightOutOfRange {
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                    kind: e.kind,
                    weight: e.weight.unwrap_or(f64::NAN),
                });
            }
            if e.kind == EdgeKind::Contains {
                if let Some(slide) = self.nodes.get(&e.src).filter(|n| n.kind == NodeKind::Slide) {
                    let material = slide
                        .properties
                        .get("material_id")
                        .and_then(|v| v.as_str())
                        .unwrap_or_default();
                    let owner = material_node_id(&MaterialId::new(material));
                    if !self.edges.contains_key(&(owner, EdgeKind::Contains, e.dst.clone())) {
                        return Err(GraphError::CarryOverViolated {
                            slide: e.src.clone(),
                            concept: e.dst.clone(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Portable graph document (pretty JSON, nodes and edges sorted).
    pub fn to_document(&self) -> String {
        let doc = GraphDocument {
            status: self.status,
            nodes: self.nodes.values().cloned().collect(),
            edges: self.edges.values().cloned().collect(),
        };
        let mut out = serde_json::to_string_pretty(&doc).expect("graph document serializes");
        out.push('\n');
        out
    }

    pub fn from_document(text: &str) -> Result<Self, GraphError> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        let mut graph = EduKG {
            status: doc.status,
            ..EduKG::default()
        };
        for n in doc.nodes {
            graph.put_node(n);
        }
        for e in doc.edges {
            graph.put_edge(e);
        }
        Ok(graph)
    }

    /// One idempotent `MERGE` statement per node, then one per edge.
    pub fn to_cypher(&self) -> String {
        let mut out = String::new();
        for n in self.nodes.values() {
            let _ = write!(
                out,
                "MERGE (n:{} {{id: {}}}) SET n.label = {}",
                n.kind.label(),
                quote(&n.id),
                quote(&n.label)
            );
            for (k, v) in &n.properties {
                let _ = write!(out, ", n.{} = {}", ident(k), cypher_value(v));
            }
            out.push_str(";\n");
        }
        for e in self.edges.values() {
            let _ = write!(
                out,
                "MATCH (a {{id: {}}}), (b {{id: {}}}) MERGE (a)-[r:{}]->(b)",
                quote(&e.src),
                quote(&e.dst),
                e.kind.label()
            );
            let mut sets = Vec::new();
            if let Some(w) = e.weight {
                sets.push(format!("r.weight = {}", float(w)));
            }
            if let Some(i) = e.importance {
                sets.push(format!("r.importance = {}", float(i)));
            }
            if !sets.is_empty() {
                let _ = write!(out, " SET {}", sets.join(", "));
            }
            out.push_str(";\n");
        }
        out
    }

    /// Union of graphs: nodes merged by id, edges by (src, kind, dst); on
    /// conflict the earlier graph wins.
    pub fn union<'a>(graphs: impl IntoIterator<Item = &'a EduKG>) -> EduKG {
        let mut out = EduKG::new();
        for g in graphs {
            for n in g.nodes.values() {
                out.add_node(n.clone());
            }
            for e in g.edges.values() {
                out.add_edge(e.clone());
            }
        }
        out
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

fn ident(s: &str) -> String {
    if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        s.to_string()
    } else {
        format!("`{}`", s.replace('`', "``"))
    }
}

fn float(v: f64) -> String {
    // `{:?}` keeps a decimal point and round-trips
    format!("{v:?}")
}

fn cypher_value(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::Null => "null".into(),
        serde_json::Value::Bool(b) => b.to_string(),
        serde_json::Value::Number(n) => n.to_string(),
        serde_json::Value::String(s) => quote(s),
        serde_json::Value::Array(items) => {
            format!("[{}]", items.iter().map(cypher_value).collect::<Vec<_>>().join(", "))
        }
        serde_json::Value::Object(_) => quote(&v.to_string()),
    }
}
