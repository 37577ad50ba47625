//! Article-extract retrieval with a persistent per-uri cache.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::transport::{HttpRequest, ServiceClient, ServiceError, Transport};

pub const WIKIPEDIA_API: &str = "https://en.wikipedia.org/w/api.php";

pub trait AbstractSource: Send + Sync {
    /// Plain-text article extract for a resource; empty when no article exists.
    fn fetch_abstract(&self, uri: &str) -> Result<String, ServiceError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedAbstract {
    pub uri: String,
    pub extract: String,
    pub fetched_at: u64,
}

/// In-memory map backed by an append-only JSON-lines file. Readers share
/// the map; writes are serialized.
#[derive(Debug, Default)]
pub struct AbstractCache {
    entries: RwLock<HashMap<String, CachedAbstract>>,
    file: Option<Mutex<PathBuf>>,
}

impl AbstractCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates on first write) a cache file. Later records for the
    /// same uri override earlier ones.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            for line in std::fs::read_to_string(path)?.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: CachedAbstract =
                    serde_json::from_str(line).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
                entries.insert(record.uri.clone(), record);
            }
        }
        Ok(Self {
            entries: RwLock::new(entries),
            file: Some(Mutex::new(path.to_path_buf())),
        })
    }

    pub fn get(&self, uri: &str) -> Option<String> {
        self.entries
            .read()
            .expect("abstract cache")
            .get(uri)
            .map(|r| r.extract.clone())
    }

    pub fn put(&self, uri: &str, extract: &str) -> std::io::Result<()> {
        let record = CachedAbstract {
            uri: uri.to_string(),
            extract: extract.to_string(),
            fetched_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        if let Some(file) = &self.file {
            let path = file.lock().expect("abstract cache file");
            let mut f = OpenOptions::new().create(true).append(true).open(&*path)?;
            let line =
                serde_json::to_string(&record).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            writeln!(f, "{line}")?;
        }
        self.entries
            .write()
            .expect("abstract cache")
            .insert(record.uri.clone(), record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("abstract cache").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Article title addressed by a resource uri: its percent-decoded local name.
pub fn title_from_uri(uri: &str) -> String {
    let local = uri.rsplit('/').next().unwrap_or(uri);
    percent_encoding::percent_decode_str(local)
        .decode_utf8_lossy()
        .into_owned()
}

/// Builds the extract query for an article title (intro section, plain text).
pub fn extract_request(endpoint: &str, title: &str) -> HttpRequest {
    HttpRequest::get(endpoint)
        .query("action", "query")
        .query("prop", "extracts")
        .query("exintro", "1")
        .query("explaintext", "1")
        .query("redirects", "1")
        .query("format", "json")
        .query("titles", title)
}

/// Pulls the first page's extract out of an extracts query response.
pub fn parse_extract_response(body: &str) -> Result<String, ServiceError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| ServiceError::MalformedResponse(e.to_string()))?;
    let pages = value
        .pointer("/query/pages")
        .and_then(|p| p.as_object())
        .ok_or_else(|| ServiceError::MalformedResponse("missing query.pages".into()))?;
    let Some(page) = pages.values().next() else {
        return Ok(String::new());
    };
    if page.get("missing").is_some() || page.get("invalid").is_some() {
        return Ok(String::new());
    }
    Ok(page
        .get("extract")
        .and_then(|e| e.as_str())
        .unwrap_or_default()
        .to_string())
}

pub struct WikipediaAbstracts {
    client: ServiceClient,
    endpoint: String,
    cache: Arc<AbstractCache>,
}

impl WikipediaAbstracts {
    pub fn new(transport: Arc<dyn Transport>, endpoint: &str, cache: Arc<AbstractCache>) -> Self {
        Self::with_client(ServiceClient::new(transport), endpoint, cache)
    }

    pub fn with_client(client: ServiceClient, endpoint: &str, cache: Arc<AbstractCache>) -> Self {
        Self {
            client,
            endpoint: endpoint.to_string(),
            cache,
        }
    }

    pub fn cache(&self) -> &AbstractCache {
        &self.cache
    }
}

impl AbstractSource for WikipediaAbstracts {
    fn fetch_abstract(&self, uri: &str) -> Result<String, ServiceError> {
        if let Some(hit) = self.cache.get(uri) {
            return Ok(hit);
        }
        let request = extract_request(&self.endpoint, &title_from_uri(uri));
        let extract = parse_extract_response(&self.client.send(&request)?.body)?;
        if let Err(e) = self.cache.put(uri, &extract) {
            tracing::warn!(uri, "failed to persist abstract: {e}");
        }
        Ok(extract)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{HttpResponse, ReplayTransport, RetryPolicy};
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Counting<T> {
        inner: T,
        calls: AtomicUsize,
    }

    impl<T: Transport> Transport for Counting<T> {
        fn execute(&self, r: &HttpRequest) -> Result<crate::transport::HttpResponse, crate::transport::TransportError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.execute(r)
        }
    }

    const NLP_BODY: &str = r#"{"batchcomplete":"","query":{"pages":{"21652":{"pageid":21652,"ns":0,"title":"Natural language processing","extract":"Natural language processing (NLP) is a subfield of computer science."}}}}"#;
    const MISSING_BODY: &str =
        r#"{"batchcomplete":"","query":{"pages":{"-1":{"ns":0,"title":"Zqxv brmwl","missing":""}}}}"#;

    fn source(cache: Arc<AbstractCache>) -> (Arc<Counting<ReplayTransport>>, WikipediaAbstracts) {
        let replay = ReplayTransport::new()
            .with(
                &extract_request(WIKIPEDIA_API, "Natural_language_processing"),
                HttpResponse::ok(NLP_BODY),
            )
            .with(
                &extract_request(WIKIPEDIA_API, "Zqxv_brmwl"),
                HttpResponse::ok(MISSING_BODY),
            );
        let counting = Arc::new(Counting {
            inner: replay,
            calls: AtomicUsize::new(0),
        });
        let client = ServiceClient::with_policy(counting.clone(), RetryPolicy::immediate(), 4);
        (counting, WikipediaAbstracts::with_client(client, WIKIPEDIA_API, cache))
    }

    #[test]
    fn known_article_has_extract() {
        let (_, src) = source(Arc::new(AbstractCache::in_memory()));
        let text = src
            .fetch_abstract("http://dbpedia.org/resource/Natural_language_processing")
            .unwrap();
        assert!(text.starts_with("Natural language processing"));
    }

    #[test]
    fn missing_article_is_empty() {
        let (_, src) = source(Arc::new(AbstractCache::in_memory()));
        assert_eq!(
            src.fetch_abstract("http://dbpedia.org/resource/Zqxv_brmwl").unwrap(),
            ""
        );
    }

    #[test]
    fn second_fetch_is_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("abstracts.jsonl");
        let uri = "http://dbpedia.org/resource/Natural_language_processing";
        {
            let (calls, src) = source(Arc::new(AbstractCache::open(&path).unwrap()));
            src.fetch_abstract(uri).unwrap();
            src.fetch_abstract(uri).unwrap();
            assert_eq!(calls.calls.load(Ordering::SeqCst), 1);
        }
        // persisted across instances
        let (calls, src) = source(Arc::new(AbstractCache::open(&path).unwrap()));
        assert!(!src.fetch_abstract(uri).unwrap().is_empty());
        assert_eq!(calls.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn malformed_body_is_reported() {
        assert!(matches!(
            parse_extract_response("{}"),
            Err(ServiceError::MalformedResponse(_))
        ));
        assert_eq!(title_from_uri("http://dbpedia.org/resource/Caf%C3%A9"), "Café");
    }
}
