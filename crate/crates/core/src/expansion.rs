//! One-hop concept expansion over a linked-data query endpoint: related
//! resources through wiki page links and categories through subjects, each
//! weighted against the material and pruned by a floor.

use std::collections::{BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::graph::{Edge, EdgeKind, EduKG, Node, NodeKind};
use crate::model::{label_from_uri, LearningMaterial, PipelineConfig};
use crate::transport::{HttpRequest, ServiceClient, ServiceError, Transport};
use crate::weighting::{cosine, embed_texts, AbstractSource, EmbedError, Embedder};

pub const DBPEDIA_SPARQL: &str = "https://dbpedia.org/sparql";
pub const WIKI_PAGE_LINK: &str = "http://dbpedia.org/ontology/wikiPageWikiLink";
pub const SUBJECT: &str = "http://purl.org/dc/terms/subject";
const RESULTS_JSON: &str = "application/sparql-results+json";

pub const DEFAULT_EXPANSION_WORKERS: usize = 4;

pub fn related_query(uri: &str, cap: usize) -> String {
    format!("SELECT ?o WHERE {{ <{uri}> <{WIKI_PAGE_LINK}> ?o }} LIMIT {cap}")
}

pub fn categories_query(uri: &str) -> String {
    format!("SELECT ?c WHERE {{ <{uri}> <{SUBJECT}> ?c }}")
}

pub fn sparql_request(endpoint: &str, query: &str) -> HttpRequest {
    HttpRequest::get(endpoint)
        .query("query", query)
        .query("format", RESULTS_JSON)
        .accept(RESULTS_JSON)
}

/// Values bound to `var` in a JSON results document, uri bindings only, in
/// the order returned.
pub fn parse_sparql_results(body: &str, var: &str) -> Result<Vec<String>, ServiceError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ServiceError::MalformedResponse(e.to_string()))?;
    let bindings = value
        .pointer("/results/bindings")
        .and_then(|b| b.as_array())
        .ok_or_else(|| ServiceError::MalformedResponse("missing results.bindings".into()))?;
    Ok(bindings
        .iter()
        .filter_map(|b| b.get(var))
        .filter(|v| v.get("type").and_then(|t| t.as_str()) == Some("uri"))
        .filter_map(|v| v.get("value").and_then(|s| s.as_str()))
        .map(str::to_string)
        .collect())
}

pub trait LinkedData: Send + Sync {
    fn fetch_related(&self, uri: &str, cap: usize) -> Result<Vec<String>, ServiceError>;
    fn fetch_categories(&self, uri: &str) -> Result<Vec<String>, ServiceError>;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedQuery {
    query: String,
    values: Vec<String>,
    fetched_at: u64,
}

/// Query results keyed by query text, optionally persisted as JSON lines.
#[derive(Debug, Default)]
pub struct QueryCache {
    entries: RwLock<HashMap<String, Vec<String>>>,
    file: Option<Mutex<PathBuf>>,
}

impl QueryCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(path)?.lines().filter(|l| !l.trim().is_empty()) {
                let record: CachedQuery =
                    serde_json::from_str(line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                entries.insert(record.query, record.values);
            }
        }
        Ok(Self {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(path.to_path_buf())),
        })
    }

    pub fn get(&self, query: &str) -> Option<Vec<String>> {
        self.entries.read().expect("query cache").get(query).cloned()
    }

    pub fn put(&self, query: &str, values: &[String]) -> std::io::Result<()> {
        if let Some(file) = &self.file {
            let path = file.lock().expect("query cache file");
            let record = CachedQuery {
                query: query.to_string(),
                values: values.to_vec(),
                fetched_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            };
            let mut f = OpenOptions::new().create(true).append(true).open(&*path)?;
            writeln!(
                f,
                "{}",
                serde_json::to_string(&record).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?
            )?;
        }
        self.entries
            .write()
            .expect("query cache")
            .insert(query.to_string(), values.to_vec());
        Ok(())
    }
}

pub struct SparqlClient {
    client: ServiceClient,
    endpoint: String,
    cache: Arc<QueryCache>,
}

impl SparqlClient {
    pub fn new(transport: Arc<dyn Transport>, endpoint: &str, cache: Arc<QueryCache>) -> Self {
        Self::with_client(ServiceClient::new(transport), endpoint, cache)
    }

    pub fn with_client(client: ServiceClient, endpoint: &str, cache: Arc<QueryCache>) -> Self {
        Self {
            client,
            endpoint: endpoint.to_string(),
            cache,
        }
    }

    fn select(&self, query: &str, var: &str) -> Result<Vec<String>, ServiceError> {
        if let Some(hit) = self.cache.get(query) {
            return Ok(hit);
        }
        let response = self.client.send(&sparql_request(&self.endpoint, query))?;
        let values = parse_sparql_results(&response.body, var)?;
        if let Err(e) = self.cache.put(query, &values) {
            tracing::warn!("failed to persist query result: {e}");
        }
        Ok(values)
    }
}

impl LinkedData for SparqlClient {
    fn fetch_related(&self, uri: &str, cap: usize) -> Result<Vec<String>, ServiceError> {
        let cap = cap.max(1);
        let mut values = self.select(&related_query(uri, cap), "o")?;
        values.truncate(cap);
        Ok(values)
    }

    fn fetch_categories(&self, uri: &str) -> Result<Vec<String>, ServiceError> {
        self.select(&categories_query(uri), "c")
    }
}

/// Collaborators needed by [`expand_graph`].
#[derive(Clone, Copy)]
pub struct ExpansionServices<'a> {
    pub linked_data: &'a dyn LinkedData,
    pub abstracts: &'a dyn AbstractSource,
    pub embedder: &'a dyn Embedder,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionOutcome {
    pub graph: EduKG,
    pub added_related: usize,
    pub added_categories: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Default)]
struct ConceptExpansion {
    related: Vec<(String, f64)>,
    categories: Vec<(String, f64)>,
    warnings: Vec<String>,
}

fn expand_one(
    concept: &str,
    material_vec: &crate::weighting::EmbeddingVector,
    config: &PipelineConfig,
    services: ExpansionServices<'_>,
) -> ConceptExpansion {
    let mut out = ConceptExpansion::default();
    let mut warn = |msg: String| {
        tracing::warn!("{msg}");
        out.warnings.push(msg);
    };

    let related = services
        .linked_data
        .fetch_related(concept, config.related_cap_per_concept)
        .unwrap_or_else(|e| {
            warn(format!("related concepts of {concept} skipped: {e}"));
            Vec::new()
        });
    let mut abstracts = Vec::with_capacity(related.len());
    for uri in &related {
        abstracts.push(services.abstracts.fetch_abstract(uri).unwrap_or_else(|e| {
            warn(format!("abstract of {uri} unavailable, weighted as empty: {e}"));
            String::new()
        }));
    }

    let categories = services.linked_data.fetch_categories(concept).unwrap_or_else(|e| {
        warn(format!("categories of {concept} skipped: {e}"));
        Vec::new()
    });
    let names: Vec<String> = categories.iter().map(|c| label_from_uri(c)).collect();

    let texts: Vec<&str> = abstracts.iter().chain(&names).map(String::as_str).collect();
    let weights: Result<Vec<f64>, EmbedError> = embed_texts(services.embedder, &texts)
        .and_then(|vectors| vectors.iter().map(|v| cosine(v, material_vec)).collect());
    let weights = match weights {
        Ok(w) => w,
        Err(e) => {
            warn(format!("expansion of {concept} skipped: {e}"));
            return out;
        }
    };
    let (related_w, category_w) = weights.split_at(related.len());
    out.related = related.into_iter().zip(related_w.iter().copied()).collect();
    out.categories = categories.into_iter().zip(category_w.iter().copied()).collect();
    out
}

/// Adds weighted related-concept and category nodes for every main concept
/// of `material`. Existing nodes and edges are never touched; a resource
/// already in the graph gains no further edge, so every added node hangs
/// off exactly one new edge and re-running adds nothing.
pub fn expand_graph(
    graph: &EduKG,
    material: &LearningMaterial,
    config: &PipelineConfig,
    services: ExpansionServices<'_>,
) -> Result<ExpansionOutcome, EmbedError> {
    expand_graph_with_workers(graph, material, config, services, DEFAULT_EXPANSION_WORKERS)
}

pub fn expand_graph_with_workers(
    graph: &EduKG,
    material: &LearningMaterial,
    config: &PipelineConfig,
    services: ExpansionServices<'_>,
    workers: usize,
) -> Result<ExpansionOutcome, EmbedError> {
    let main: Vec<String> = graph
        .material_concepts(material.id())
        .into_iter()
        .filter(|uri| graph.node(uri).is_some_and(|n| n.kind == NodeKind::Concept))
        .collect();
    let mut outcome = ExpansionOutcome {
        graph: graph.clone(),
        added_related: 0,
        added_categories: 0,
        warnings: Vec::new(),
    };
    if main.is_empty() {
        return Ok(outcome);
    }
    let material_vec = embed_texts(services.embedder, &[material.full_text()])?.remove(0);

    let workers = workers.clamp(1, main.len());
    let mut results: Vec<(usize, ConceptExpansion)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let main = &main;
                let material_vec = &material_vec;
                scope.spawn(move || {
                    main.iter()
                        .enumerate()
                        .skip(w)
                        .step_by(workers)
                        .map(|(i, uri)| (i, expand_one(uri, material_vec, config, services)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("expansion worker panicked"))
            .collect()
    });
    results.sort_by_key(|(i, _)| *i);

    let main_set: BTreeSet<&str> = main.iter().map(String::as_str).collect();
    let g = &mut outcome.graph;
    for (i, expansion) in results {
        let source = &main[i];
        outcome.warnings.extend(expansion.warnings);
        for (uri, weight) in expansion.related {
            if weight < config.related_weight_floor || main_set.contains(uri.as_str()) || g.contains_node(&uri) {
                continue;
            }
            g.add_node(
                Node::new(&uri, NodeKind::RelatedConcept, label_from_uri(&uri))
                    .with_property("source_concept_uri", source.as_str()),
            );
            g.add_edge(Edge::new(source, EdgeKind::RelatedTo, &uri).weighted(weight));
            outcome.added_related += 1;
        }
        for (uri, weight) in expansion.categories {
            if weight < config.category_weight_floor || g.contains_node(&uri) {
                continue;
            }
            g.add_node(Node::new(&uri, NodeKind::Category, label_from_uri(&uri)));
            g.add_edge(Edge::new(source, EdgeKind::BelongsTo, &uri).weighted(weight));
            outcome.added_categories += 1;
        }
    }
    Ok(outcome)
}
