//! Service wiring: endpoint configuration, the bundle of clients a pipeline
//! run needs, and a fixture knowledge base that answers the annotation,
//! article-extract and linked-data protocols from a declarative file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::expansion::{LinkedData, QueryCache, SparqlClient, DBPEDIA_SPARQL, SUBJECT, WIKI_PAGE_LINK};
use crate::keyphrase::{EmbeddingRanker, KeyphraseRanker};
use crate::linker::{Linker, DBPEDIA_SPOTLIGHT};
use crate::pipelines::Services;
use crate::transport::{HttpRequest, HttpResponse, Method, RetryPolicy, ServiceClient, Transport, TransportError};
use crate::weighting::{
    title_from_uri, AbstractCache, AbstractSource, Embedder, TestEmbedder, WikipediaAbstracts, WIKIPEDIA_API,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Endpoints {
    pub annotate: String,
    pub extracts: String,
    pub sparql: String,
    /// Base URL of a remote embedding provider; the deterministic test
    /// embedder is used when unset.
    pub embed: Option<String>,
    pub embed_model: String,
}

impl Default for Endpoints {
    fn default() -> Self {
        Self {
            annotate: DBPEDIA_SPOTLIGHT.to_string(),
            extracts: WIKIPEDIA_API.to_string(),
            sparql: DBPEDIA_SPARQL.to_string(),
            embed: None,
            embed_model: "all-MiniLM-L6-v2".to_string(),
        }
    }
}

impl Endpoints {
    /// Applies `EDUKG_ANNOTATE_URL`, `EDUKG_EXTRACTS_URL`, `EDUKG_SPARQL_URL`,
    /// `EDUKG_EMBED_URL` and `EDUKG_EMBED_MODEL` overrides.
    pub fn with_env_overrides(mut self) -> Self {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.trim().is_empty());
        if let Some(v) = var("EDUKG_ANNOTATE_URL") {
            self.annotate = v;
        }
        if let Some(v) = var("EDUKG_EXTRACTS_URL") {
            self.extracts = v;
        }
        if let Some(v) = var("EDUKG_SPARQL_URL") {
            self.sparql = v;
        }
        if let Some(v) = var("EDUKG_EMBED_URL") {
            self.embed = Some(v);
        }
        if let Some(v) = var("EDUKG_EMBED_MODEL") {
            self.embed_model = v;
        }
        self
    }
}

/// Everything a pipeline run talks to, owned.
pub struct ServiceBundle {
    pub linker: Linker,
    pub abstracts: WikipediaAbstracts,
    pub linked_data: SparqlClient,
    pub embedder: Arc<dyn Embedder>,
    ranker: EmbeddingRanker<Arc<dyn Embedder>>,
}

impl ServiceBundle {
    pub fn new(
        transport: Arc<dyn Transport>,
        endpoints: &Endpoints,
        embedder: Arc<dyn Embedder>,
        abstract_cache: Arc<AbstractCache>,
        query_cache: Arc<QueryCache>,
        retry: RetryPolicy,
    ) -> Self {
        let client = || ServiceClient::with_policy(transport.clone(), retry, ServiceClient::DEFAULT_MAX_IN_FLIGHT);
        Self {
            linker: Linker::with_client(client(), &endpoints.annotate),
            abstracts: WikipediaAbstracts::with_client(client(), &endpoints.extracts, abstract_cache),
            linked_data: SparqlClient::with_client(client(), &endpoints.sparql, query_cache),
            ranker: EmbeddingRanker::new(embedder.clone()),
            embedder,
        }
    }

    /// Hermetic bundle: fixture knowledge base, test embedder, in-memory
    /// caches, no retry back-off.
    pub fn fixture(kb: Arc<FixtureKnowledgeBase>) -> Self {
        let endpoints = kb.endpoints().clone();
        Self::new(
            kb,
            &endpoints,
            Arc::new(TestEmbedder),
            Arc::new(AbstractCache::in_memory()),
            Arc::new(QueryCache::in_memory()),
            RetryPolicy::immediate(),
        )
    }

    pub fn services(&self) -> Services<'_> {
        Services {
            ranker: &self.ranker as &dyn KeyphraseRanker,
            linker: &self.linker,
            abstracts: &self.abstracts as &dyn AbstractSource,
            linked_data: &self.linked_data as &dyn LinkedData,
            embedder: self.embedder.as_ref(),
        }
    }
}

/// One resource of a fixture knowledge base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntity {
    pub uri: String,
    /// Phrases the annotation service resolves to this resource.
    #[serde(default)]
    pub surface_forms: Vec<String>,
    #[serde(default = "default_similarity")]
    pub similarity: f64,
    #[serde(default = "default_support")]
    pub support: u64,
    #[serde(default, rename = "abstract")]
    pub abstract_text: Option<String>,
    #[serde(default)]
    pub related: Vec<String>,
    #[serde(default)]
    pub categories: Vec<String>,
}

fn default_similarity() -> f64 {
    0.99
}

fn default_support() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeFixture {
    pub entities: Vec<FixtureEntity>,
}

impl KnowledgeFixture {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureService {
    Annotate,
    Extracts,
    Sparql,
}

/// In-process stand-in for the three knowledge services. Answers in the
/// same wire formats as the live services, so every client-side parser and
/// filter runs unchanged.
pub struct FixtureKnowledgeBase {
    endpoints: Endpoints,
    entities: BTreeMap<String, FixtureEntity>,
    log: Mutex<Vec<(FixtureService, HttpRequest)>>,
}

impl FixtureKnowledgeBase {
    pub const ANNOTATE: &'static str = "fixture://annotate";
    pub const EXTRACTS: &'static str = "fixture://extracts";
    pub const SPARQL: &'static str = "fixture://sparql";

    pub fn new(fixture: KnowledgeFixture) -> Self {
        Self {
            endpoints: Endpoints {
                annotate: Self::ANNOTATE.into(),
                extracts: Self::EXTRACTS.into(),
                sparql: Self::SPARQL.into(),
                embed: None,
                embed_model: String::new(),
            },
            entities: fixture.entities.into_iter().map(|e| (e.uri.clone(), e)).collect(),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn endpoints(&self) -> &Endpoints {
        &self.endpoints
    }

    /// Requests served so far, in arrival order.
    pub fn requests(&self) -> Vec<(FixtureService, HttpRequest)> {
        self.log.lock().expect("fixture log").clone()
    }

    pub fn count(&self, service: FixtureService) -> usize {
        self.log
            .lock()
            .expect("fixture log")
            .iter()
            .filter(|(s, _)| *s == service)
            .count()
    }

    fn annotate(&self, request: &HttpRequest) -> HttpResponse {
        let text = request.form_param("text").unwrap_or_default();
        let confidence: f64 = request
            .form_param("confidence")
            .and_then(|v| v.parse().ok())
            .unwrap_or(0.0);
        let support: u64 = request.form_param("support").and_then(|v| v.parse().ok()).unwrap_or(0);
        let lowered: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
        let original: Vec<char> = text.chars().collect();
        // lowercasing may change lengths for exotic characters; fall back to the lowered text then
        let source = if lowered.len() == original.len() {
            &original
        } else {
            &lowered
        };

        // (offset, length, entity)
        let mut matches: Vec<(usize, usize, &FixtureEntity)> = Vec::new();
        for entity in self.entities.values() {
            if entity.similarity < confidence || entity.support < support {
                continue;
            }
            for form in &entity.surface_forms {
                let needle: Vec<char> = form.chars().flat_map(char::to_lowercase).collect();
                if needle.is_empty() || needle.len() > lowered.len() {
                    continue;
                }
                for start in 0..=lowered.len() - needle.len() {
                    let end = start + needle.len();
                    let boundary_before = start == 0 || !lowered[start - 1].is_alphanumeric();
                    let boundary_after = end == lowered.len() || !lowered[end].is_alphanumeric();
                    if boundary_before && boundary_after && lowered[start..end] == needle[..] {
                        matches.push((start, needle.len(), entity));
                    }
                }
            }
        }
        // longest match first at each offset, then drop overlaps left to right
        matches.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then_with(|| a.2.uri.cmp(&b.2.uri)));
        let mut resources = Vec::new();
        let mut covered_until = 0;
        for (start, len, entity) in matches {
            if start < covered_until {
                continue;
            }
            covered_until = start + len;
            resources.push(serde_json::json!({
                "@URI": entity.uri,
                "@support": entity.support.to_string(),
                "@types": "",
                "@surfaceForm": source[start..start + len].iter().collect::<String>(),
                "@offset": start.to_string(),
                "@similarityScore": entity.similarity.to_string(),
                "@percentageOfSecondRank": "0.0",
            }));
        }
        let mut body = serde_json::json!({
            "@text": text,
            "@confidence": request.form_param("confidence").unwrap_or_default(),
            "@support": request.form_param("support").unwrap_or_default(),
            "@types": "",
            "@sparql": "",
            "@policy": "whitelist",
        });
        if !resources.is_empty() {
            body["Resources"] = serde_json::Value::Array(resources);
        }
        HttpResponse::ok(body.to_string())
    }

    fn extracts(&self, request: &HttpRequest) -> HttpResponse {
        let title = request.query_param("titles").unwrap_or_default().replace(' ', "_");
        let entity = self
            .entities
            .values()
            .find(|e| title_from_uri(&e.uri) == title && e.abstract_text.is_some());
        let display = title.replace('_', " ");
        let page = match entity {
            Some(e) => serde_json::json!({
                "pageid": 1,
                "ns": 0,
                "title": display,
                "extract": e.abstract_text.clone().unwrap_or_default(),
            }),
            None => serde_json::json!({ "ns": 0, "title": display, "missing": "" }),
        };
        let key = if entity.is_some() { "1" } else { "-1" };
        HttpResponse::ok(serde_json::json!({ "batchcomplete": "", "query": { "pages": { key: page } } }).to_string())
    }

    fn sparql(&self, request: &HttpRequest) -> HttpResponse {
        let query = request.query_param("query").unwrap_or_default();
        let iris: Vec<&str> = query
            .split('<')
            .skip(1)
            .filter_map(|s| s.split_once('>').map(|(iri, _)| iri))
            .collect();
        let (Some(subject), Some(predicate)) = (iris.first(), iris.get(1)) else {
            return HttpResponse {
                status: 400,
                body: "unsupported query".into(),
            };
        };
        let limit = query
            .split_whitespace()
            .skip_while(|t| !t.eq_ignore_ascii_case("LIMIT"))
            .nth(1)
            .and_then(|n| n.parse::<usize>().ok())
            .unwrap_or(usize::MAX);
        let entity = self.entities.get(*subject);
        let (var, values): (&str, Vec<String>) = match *predicate {
            WIKI_PAGE_LINK => ("o", entity.map(|e| e.related.clone()).unwrap_or_default()),
            SUBJECT => ("c", entity.map(|e| e.categories.clone()).unwrap_or_default()),
            _ => {
                return HttpResponse {
                    status: 400,
                    body: "unsupported predicate".into(),
                }
            }
        };
        let rows: Vec<serde_json::Value> = values
            .iter()
            .take(limit)
            .map(|v| serde_json::json!({ var: { "type": "uri", "value": v } }))
            .collect();
        HttpResponse::ok(
            serde_json::json!({ "head": { "link": [], "vars": [var] }, "results": { "distinct": false, "ordered": true, "bindings": rows } })
                .to_string(),
        )
    }
}

impl Transport for FixtureKnowledgeBase {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let service = match (request.method, request.url.as_str()) {
            (Method::Post, u) if u == self.endpoints.annotate => FixtureService::Annotate,
            (Method::Get, u) if u == self.endpoints.extracts => FixtureService::Extracts,
            (_, u) if u == self.endpoints.sparql => FixtureService::Sparql,
            _ => {
                return Ok(HttpResponse {
                    status: 404,
                    body: format!("no fixture service at {}", request.url),
                })
            }
        };
        self.log.lock().expect("fixture log").push((service, request.clone()));
        Ok(match service {
            FixtureService::Annotate => self.annotate(request),
            FixtureService::Extracts => self.extracts(request),
            FixtureService::Sparql => self.sparql(request),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::{categories_query, related_query};

    fn kb() -> Arc<FixtureKnowledgeBase> {
        Arc::new(FixtureKnowledgeBase::new(KnowledgeFixture {
            entities: vec![
                FixtureEntity {
                    uri: "http://dbpedia.org/resource/Natural_language_processing".into(),
                    surface_forms: vec!["natural language processing".into(), "nlp".into()],
                    similarity: 0.99,
                    support: 4000,
                    abstract_text: Some("Natural language processing is a subfield of linguistics.".into()),
                    related: vec!["http://dbpedia.org/resource/Natural_language_understanding".into()],
                    categories: vec!["http://dbpedia.org/resource/Category:Computational_linguistics".into()],
                },
                FixtureEntity {
                    uri: "http://dbpedia.org/resource/Language".into(),
                    surface_forms: vec!["language".into()],
                    similarity: 0.5,
                    support: 9000,
                    abstract_text: None,
                    related: vec![],
                    categories: vec![],
                },
                FixtureEntity {
                    uri: "http://dbpedia.org/resource/Obscure".into(),
                    surface_forms: vec!["obscure".into()],
                    similarity: 0.2,
                    support: 9000,
                    abstract_text: None,
                    related: vec![],
                    categories: vec![],
                },
            ],
        }))
    }

    #[test]
    fn annotation_prefers_longest_match() {
        let bundle = ServiceBundle::fixture(kb());
        let hits = bundle
            .linker
            .annotate("Natural language processing and language", 0.35, 5)
            .unwrap();
        let uris: Vec<&str> = hits.iter().map(|h| h.uri.as_str()).collect();
        assert_eq!(
            uris,
            vec![
                "http://dbpedia.org/resource/Natural_language_processing",
                "http://dbpedia.org/resource/Language"
            ]
        );
        assert_eq!(hits[0].surface_form, "Natural language processing");
        assert_eq!(hits[1].offset, 32);
    }

    #[test]
    fn annotation_honours_confidence() {
        let bundle = ServiceBundle::fixture(kb());
        assert!(bundle.linker.annotate("obscure", 0.35, 5).unwrap().is_empty());
        assert_eq!(bundle.linker.annotate("obscure", 0.1, 5).unwrap().len(), 1);
    }

    #[test]
    fn extracts_and_queries_follow_wire_formats() {
        let kb = kb();
        let bundle = ServiceBundle::fixture(kb.clone());
        let nlp = "http://dbpedia.org/resource/Natural_language_processing";
        assert!(bundle
            .abstracts
            .fetch_abstract(nlp)
            .unwrap()
            .starts_with("Natural language"));
        assert_eq!(
            bundle
                .abstracts
                .fetch_abstract("http://dbpedia.org/resource/Language")
                .unwrap(),
            ""
        );
        assert_eq!(
            bundle.linked_data.fetch_related(nlp, 10).unwrap(),
            vec!["http://dbpedia.org/resource/Natural_language_understanding"]
        );
        assert_eq!(bundle.linked_data.fetch_categories(nlp).unwrap().len(), 1);
        assert_eq!(kb.count(FixtureService::Sparql), 2);
        // direct protocol check on LIMIT handling
        let resp = kb
            .execute(&crate::expansion::sparql_request(
                FixtureKnowledgeBase::SPARQL,
                &related_query(nlp, 1),
            ))
            .unwrap();
        assert!(resp.body.contains("Natural_language_understanding"));
        let resp = kb
            .execute(&crate::expansion::sparql_request(
                FixtureKnowledgeBase::SPARQL,
                &categories_query("http://nowhere"),
            ))
            .unwrap();
        assert!(resp.body.contains("\"bindings\":[]"));
    }

    #[test]
    fn unknown_endpoint_is_404() {
        let resp = kb().execute(&HttpRequest::get("http://elsewhere")).unwrap();
        assert_eq!(resp.status, 404);
    }
}
