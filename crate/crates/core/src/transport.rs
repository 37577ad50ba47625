//! HTTP transport abstraction shared by the annotation, article-extract,
//! linked-data and embedding clients.
//!
//! Requests are plain values with a canonical form, so a recorded response
//! can be replayed by the SHA-256 fingerprint of that form.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpRequest {
    pub method: Method,
    pub url: String,
    #[serde(default)]
    pub query: Vec<(String, String)>,
    #[serde(default)]
    pub form: Vec<(String, String)>,
    #[serde(default)]
    pub json: Option<serde_json::Value>,
    #[serde(default)]
    pub accept: Option<String>,
}

impl HttpRequest {
    pub fn get(url: impl Into<String>) -> Self {
        Self {
            method: Method::Get,
            url: url.into(),
            query: Vec::new(),
            form: Vec::new(),
            json: None,
            accept: None,
        }
    }

    pub fn post(url: impl Into<String>) -> Self {
        Self {
            method: Method::Post,
            ..Self::get(url)
        }
    }

    pub fn query(mut self, key: &str, value: impl Into<String>) -> Self {
        self.query.push((key.to_string(), value.into()));
        self
    }

    pub fn form(mut self, key: &str, value: impl Into<String>) -> Self {
        self.form.push((key.to_string(), value.into()));
        self
    }

    pub fn json(mut self, body: serde_json::Value) -> Self {
        self.json = Some(body);
        self
    }

    pub fn accept(mut self, mime: &str) -> Self {
        self.accept = Some(mime.to_string());
        self
    }

    pub fn query_param(&self, key: &str) -> Option<&str> {
        lookup(&self.query, key)
    }

    pub fn form_param(&self, key: &str) -> Option<&str> {
        lookup(&self.form, key)
    }

    /// Method, url with sorted query, sorted form fields and JSON body
    /// (object keys sorted), one per line.
    pub fn canonical(&self) -> String {
        let encode = |pairs: &[(String, String)]| {
            let mut sorted = pairs.to_vec();
            sorted.sort();
            form_urlencoded::Serializer::new(String::new())
                .extend_pairs(sorted)
                .finish()
        };
        let method = match self.method {
            Method::Get => "GET",
            Method::Post => "POST",
        };
        let body = self.json.as_ref().map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{method} {}?{}\n{}\n{body}",
            self.url,
            encode(&self.query),
            encode(&self.form)
        )
    }

    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn lookup<'a>(pairs: &'a [(String, String)], key: &str) -> Option<&'a str> {
    pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
        }
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Error, Clone)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("no recorded fixture for request {fingerprint}:\n{canonical}")]
    NoFixture { fingerprint: String, canonical: String },
}

pub trait Transport: Send + Sync {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        (**self).execute(request)
    }
}

/// Live transport over blocking HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new()
                .timeout(timeout)
                .user_agent(concat!("edukg/", env!("CARGO_PKG_VERSION")))
                .build(),
        }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for HttpTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let method = match request.method {
            Method::Get => "GET",
            Method::Post => "POST",
        };
        let mut req = self.agent.request(method, &request.url);
        for (k, v) in &request.query {
            req = req.query(k, v);
        }
        if let Some(accept) = &request.accept {
            req = req.set("Accept", accept);
        }
        let result = if let Some(body) = &request.json {
            req.send_json(body.clone())
        } else if !request.form.is_empty() {
            let pairs: Vec<(&str, &str)> = request.form.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
            req.send_form(&pairs)
        } else {
            req.call()
        };
        match result {
            Ok(resp) => {
                let status = resp.status();
                let body = resp
                    .into_string()
                    .map_err(|e| TransportError::Connection(e.to_string()))?;
                Ok(HttpResponse { status, body })
            }
            Err(ureq::Error::Status(status, resp)) => Ok(HttpResponse {
                status,
                body: resp.into_string().unwrap_or_default(),
            }),
            Err(e) => Err(TransportError::Connection(e.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub fingerprint: String,
    /// Canonical request text, kept for readers of the fixture file.
    pub request: String,
    pub response: HttpResponse,
}

/// Serves recorded responses keyed by request fingerprint.
#[derive(Debug, Default)]
pub struct ReplayTransport {
    entries: HashMap<String, HttpResponse>,
}

impl ReplayTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, request: &HttpRequest, response: HttpResponse) -> Self {
        self.insert(request, response);
        self
    }

    pub fn insert(&mut self, request: &HttpRequest, response: HttpResponse) {
        self.entries.insert(request.fingerprint(), response);
    }

    pub fn from_entries(entries: impl IntoIterator<Item = FixtureEntry>) -> Self {
        Self {
            entries: entries.into_iter().map(|e| (e.fingerprint, e.response)).collect(),
        }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<FixtureEntry> =
            serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::from_entries(entries))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Transport for ReplayTransport {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let fingerprint = request.fingerprint();
        self.entries
            .get(&fingerprint)
            .cloned()
            .ok_or_else(|| TransportError::NoFixture {
                fingerprint,
                canonical: request.canonical(),
            })
    }
}

/// Passes requests through and keeps every exchange for later replay.
pub struct RecordingTransport<T> {
    inner: T,
    recorded: Mutex<Vec<FixtureEntry>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Vec::new()),
        }
    }

    pub fn entries(&self) -> Vec<FixtureEntry> {
        self.recorded.lock().expect("recording lock").clone()
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(&self.entries())
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        std::fs::write(path, json + "\n")
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn execute(&self, request: &HttpRequest) -> Result<HttpResponse, TransportError> {
        let response = self.inner.execute(request)?;
        self.recorded.lock().expect("recording lock").push(FixtureEntry {
            fingerprint: request.fingerprint(),
            request: request.canonical(),
            response: response.clone(),
        });
        Ok(response)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            initial_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Same attempt count, no sleeping. For fixture transports and tests.
    pub fn immediate() -> Self {
        Self {
            initial_backoff: Duration::ZERO,
            ..Self::default()
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        self.initial_backoff * 2u32.saturating_pow(attempt)
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub struct InFlightLimit {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

pub struct InFlightGuard<'a> {
    limit: &'a InFlightLimit,
}

impl InFlightLimit {
    pub fn new(max: usize) -> Self {
        Self {
            max: max.max(1),
            current: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> InFlightGuard<'_> {
        let mut current = self.current.lock().expect("in-flight lock");
        while *current >= self.max {
            current = self.freed.wait(current).expect("in-flight lock");
        }
        *current += 1;
        InFlightGuard { limit: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.current.lock().expect("in-flight lock")
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut current = self.limit.current.lock().expect("in-flight lock");
        *current -= 1;
        self.limit.freed.notify_one();
    }
}

#[derive(Debug, Error, Clone)]
pub enum ServiceError {
    #[error("service unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("service rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed service response: {0}")]
    MalformedResponse(String),
}

/// A transport plus retry policy and concurrency bound.
pub struct ServiceClient {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    limit: InFlightLimit,
}

impl ServiceClient {
    pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;

    pub fn new(transport: Arc<dyn Transport>) -> Self {
        Self::with_policy(transport, RetryPolicy::default(), Self::DEFAULT_MAX_IN_FLIGHT)
    }

    pub fn with_policy(transport: Arc<dyn Transport>, retry: RetryPolicy, max_in_flight: usize) -> Self {
        Self {
            transport,
            retry,
            limit: InFlightLimit::new(max_in_flight),
        }
    }

    pub fn in_flight(&self) -> usize {
        self.limit.in_flight()
    }

    /// Sends `request`, retrying connection failures, 429 and 5xx answers.
    /// Missing fixtures are not retried.
    pub fn send(&self, request: &HttpRequest) -> Result<HttpResponse, ServiceError> {
        let attempts = self.retry.attempts.max(1);
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let pause = self.retry.backoff(attempt - 1);
                if !pause.is_zero() {
                    std::thread::sleep(pause);
                }
            }
            let outcome = {
                let _guard = self.limit.acquire();
                self.transport.execute(request)
            };
            match outcome {
                Ok(resp) if resp.is_success() => return Ok(resp),
                Ok(resp) if resp.status == 429 || resp.status >= 500 => {
                    last = format!("status {}", resp.status);
                }
                Ok(resp) => {
                    return Err(ServiceError::Rejected {
                        status: resp.status,
                        body: resp.body,
                    })
                }
                Err(e @ TransportError::NoFixture { .. }) => {
                    return Err(ServiceError::Unavailable {
                        attempts: attempt + 1,
                        last: e.to_string(),
                    })
                }
                Err(e) => last = e.to_string(),
            }
            tracing::debug!(url = %request.url, attempt, "request failed: {last}");
        }
        Err(ServiceError::Unavailable { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Flaky {
        failures: usize,
        calls: AtomicUsize,
    }

    impl Transport for Flaky {
        fn execute(&self, _: &HttpRequest) -> Result<HttpResponse, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(TransportError::Connection("reset".into()))
            } else {
                Ok(HttpResponse::ok("fine"))
            }
        }
    }

    #[test]
    fn fingerprint_ignores_parameter_order() {
        let a = HttpRequest::post("http://x/annotate")
            .form("text", "t")
            .form("support", "5");
        let b = HttpRequest::post("http://x/annotate")
            .form("support", "5")
            .form("text", "t");
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = HttpRequest::get("http://x/annotate")
            .form("support", "5")
            .form("text", "t");
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn replay_serves_recorded_response() {
        let req = HttpRequest::get("http://x/q").query("a", "1");
        let replay = ReplayTransport::new().with(&req, HttpResponse::ok("body"));
        assert_eq!(replay.execute(&req).unwrap().body, "body");
        let other = HttpRequest::get("http://x/q").query("a", "2");
        assert!(matches!(replay.execute(&other), Err(TransportError::NoFixture { .. })));
    }

    #[test]
    fn recording_round_trips_through_replay() {
        let req = HttpRequest::get("http://x/q");
        let recorder = RecordingTransport::new(ReplayTransport::new().with(&req, HttpResponse::ok("r")));
        recorder.execute(&req).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        recorder.save(&path).unwrap();
        let replay = ReplayTransport::load(&path).unwrap();
        assert_eq!(replay.execute(&req).unwrap().body, "r");
    }

    #[test]
    fn retries_until_success_within_budget() {
        let flaky = Arc::new(Flaky {
            failures: 2,
            calls: AtomicUsize::new(0),
        });
        let client = ServiceClient::with_policy(flaky.clone(), RetryPolicy::immediate(), 4);
        assert_eq!(client.send(&HttpRequest::get("http://x")).unwrap().body, "fine");
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_three_attempts() {
        let flaky = Arc::new(Flaky {
            failures: 10,
            calls: AtomicUsize::new(0),
        });
        let client = ServiceClient::with_policy(flaky.clone(), RetryPolicy::immediate(), 4);
        let err = client.send(&HttpRequest::get("http://x")).unwrap_err();
        assert!(matches!(err, ServiceError::Unavailable { attempts: 3, .. }));
        assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(0), Duration::from_millis(500));
        assert_eq!(p.backoff(1), Duration::from_millis(1000));
    }

    #[test]
    fn in_flight_limit_bounds_concurrency() {
        struct Slow {
            peak: AtomicUsize,
            now: AtomicUsize,
        }
        impl Transport for Slow {
            fn execute(&self, _: &HttpRequest) -> Result<HttpResponse, TransportError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(5));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok(HttpResponse::ok(""))
            }
        }
        let slow = Arc::new(Slow {
            peak: AtomicUsize::new(0),
            now: AtomicUsize::new(0),
        });
        let client = ServiceClient::with_policy(slow.clone(), RetryPolicy::immediate(), 4);
        std::thread::scope(|s| {
            for _ in 0..16 {
                s.spawn(|| client.send(&HttpRequest::get("http://x")).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 4);
        assert_eq!(client.in_flight(), 0);
    }
}
