//! Keyphrase to knowledge-base concept linking through an entity-annotation
//! service (spotting, candidate selection and disambiguation happen
//! server-side).

use std::collections::HashSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Concept, Keyphrase, PipelineConfig};
use crate::transport::{HttpRequest, ServiceClient, ServiceError, Transport};

pub const DBPEDIA_SPOTLIGHT: &str = "https://api.dbpedia-spotlight.org/en/annotate";
pub const DEFAULT_CONFIDENCE: f64 = 0.35;
pub const DEFAULT_SUPPORT: u32 = 5;

#[derive(Debug, Error, Clone)]
pub enum LinkError {
    #[error("cannot annotate empty text")]
    EmptyText,
    #[error(transparent)]
    Service(#[from] ServiceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationHit {
    pub uri: String,
    pub surface_form: String,
    pub similarity_score: f64,
    pub offset: usize,
    pub support: u64,
}

/// Builds the annotate request: form fields `text`, `confidence`, `support`,
/// JSON response negotiated through `Accept`.
pub fn annotate_request(endpoint: &str, text: &str, confidence: f64, support: u32) -> HttpRequest {
    HttpRequest::post(endpoint)
        .form("text", text)
        .form("confidence", confidence.to_string())
        .form("support", support.to_string())
        .accept("application/json")
}

#[derive(Deserialize)]
struct RawAnnotation {
    #[serde(rename = "Resources", default)]
    resources: Option<Vec<RawResource>>,
}

#[derive(Deserialize)]
struct RawResource {
    #[serde(rename = "@URI")]
    uri: String,
    #[serde(rename = "@surfaceForm")]
    surface_form: serde_json::Value,
    #[serde(rename = "@similarityScore")]
    similarity_score: serde_json::Value,
    #[serde(rename = "@offset")]
    offset: serde_json::Value,
    #[serde(rename = "@support", default)]
    support: Option<serde_json::Value>,
}

// The service encodes every attribute as a string; accept bare numbers too.
fn number(value: &serde_json::Value, field: &str) -> Result<f64, ServiceError> {
    match value {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
    .filter(|v: &f64| v.is_finite())
    .ok_or_else(|| ServiceError::MalformedResponse(format!("bad numeric field {field}: {value}")))
}

fn text(value: &serde_json::Value) -> String {
    match value {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Parses an annotation response; hits keep the service's order.
pub fn parse_annotation_response(body: &str) -> Result<Vec<AnnotationHit>, ServiceError> {
    let raw: RawAnnotation = serde_json::from_str(body).map_err(|e| ServiceError::MalformedResponse(e.to_string()))?;
    raw.resources
        .unwrap_or_default()
        .into_iter()
        .map(|r| {
            Ok(AnnotationHit {
                similarity_score: number(&r.similarity_score, "@similarityScore")?,
                offset: number(&r.offset, "@offset")? as usize,
                support: match &r.support {
                    Some(v) => number(v, "@support")? as u64,
                    None => 0,
                },
                surface_form: text(&r.surface_form),
                uri: r.uri,
            })
        })
        .collect()
}

/// Result of linking a keyphrase list: deduplicated concept shells plus the
/// warnings of batches that failed and were skipped.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkOutcome {
    pub concepts: Vec<Concept>,
    pub warnings: Vec<String>,
}

impl LinkOutcome {
    pub fn uris(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.uri.as_str()).collect()
    }
}

pub struct Linker {
    client: ServiceClient,
    endpoint: String,
    batch_size: usize,
}

impl Linker {
    pub const DEFAULT_BATCH_SIZE: usize = 15;

    pub fn new(transport: Arc<dyn Transport>, endpoint: &str) -> Self {
        Self::with_client(ServiceClient::new(transport), endpoint)
    }

    pub fn with_client(client: ServiceClient, endpoint: &str) -> Self {
        Self {
            client,
            endpoint: endpoint.to_string(),
            batch_size: Self::DEFAULT_BATCH_SIZE,
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Annotates `text`; hits below `confidence` or `support` are dropped.
    pub fn annotate(&self, text: &str, confidence: f64, support: u32) -> Result<Vec<AnnotationHit>, LinkError> {
        if text.trim().is_empty() {
            return Err(LinkError::EmptyText);
        }
        let request = annotate_request(&self.endpoint, text, confidence, support);
        let response = self.client.send(&request)?;
        let hits = parse_annotation_response(&response.body)?;
        Ok(hits
            .into_iter()
            .filter(|h| h.similarity_score >= confidence && h.support >= u64::from(support))
            .collect())
    }

    /// Annotates keyphrase surfaces in newline-joined batches and folds the
    /// hits into concept shells, first occurrence of each uri wins. A failed
    /// batch is skipped with a warning.
    pub fn link_keyphrases(&self, keyphrases: &[Keyphrase], config: &PipelineConfig) -> LinkOutcome {
        let batches: Vec<String> = keyphrases
            .chunks(self.batch_size)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|k| k.surface.trim())
                    .filter(|s| !s.is_empty())
                    .collect::<Vec<_>>()
                    .join("\n")
            })
            .filter(|b| !b.is_empty())
            .collect();

        let results: Vec<Result<Vec<AnnotationHit>, LinkError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batches
                .iter()
                .map(|batch| scope.spawn(move || self.annotate(batch, config.linker_confidence, config.linker_support)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("annotation worker panicked"))
                .collect()
        });

        let mut outcome = LinkOutcome::default();
        let mut seen = HashSet::new();
        for (index, result) in results.into_iter().enumerate() {
            match result {
                Ok(hits) => {
                    for hit in hits {
                        if seen.insert(hit.uri.clone()) {
                            outcome.concepts.push(Concept::from_uri(hit.uri));
                        }
                    }
                }
                Err(e) => {
                    let warning = format!("annotation batch {index} skipped: {e}");
                    tracing::warn!("{warning}");
                    outcome.warnings.push(warning);
                }
            }
        }
        outcome
    }
}
