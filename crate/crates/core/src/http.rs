//! Blocking HTTP access shared by the catalogue client and the COG reader:
//! connection reuse, retry with exponential backoff, an optional URL-signing
//! hook, and a transfer ledger recording every request.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;

/// What a request was for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferKind {
    Search,
    Header,
    Tile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferRecord {
    pub kind: TransferKind,
    pub method: &'static str,
    pub url: String,
    pub host: String,
    /// Inclusive byte range requested.
    pub range: Option<(u64, u64)>,
    pub status: u16,
    pub bytes: u64,
}

/// Internally synchronized log of every request issued through a client.
#[derive(Debug, Default)]
pub struct TransferLedger {
    records: Mutex<Vec<TransferRecord>>,
}

impl TransferLedger {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn push(&self, r: TransferRecord) {
        self.records.lock().expect("ledger poisoned").push(r);
    }

    pub fn records(&self) -> Vec<TransferRecord> {
        self.records.lock().expect("ledger poisoned").clone()
    }

    pub fn bytes(&self, kind: TransferKind) -> u64 {
        self.records().iter().filter(|r| r.kind == kind).map(|r| r.bytes).sum()
    }

    pub fn count(&self, kind: TransferKind) -> usize {
        self.records().iter().filter(|r| r.kind == kind).count()
    }

    pub fn hosts(&self) -> BTreeSet<String> {
        self.records().into_iter().map(|r| r.host).collect()
    }

    pub fn clear(&self) {
        self.records.lock().expect("ledger poisoned").clear();
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HttpError {
    #[error("{url}: HTTP {status}: {excerpt}")]
    Status { url: String, status: u16, excerpt: String },
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    #[error("{url}: server ignored the Range header (HTTP {status}, expected 206)")]
    RangeNotSupported { url: String, status: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_retries: 3, base_delay: Duration::from_millis(500) }
    }
}

/// Rewrites asset URLs before they are fetched (e.g. to append a SAS token).
pub type UrlSigner = Arc<dyn Fn(&str) -> String + Send + Sync>;

pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn excerpt(&self) -> String {
        let text = String::from_utf8_lossy(&self.body);
        text.chars().take(200).collect()
    }
}

const MAX_BODY: u64 = 512 * 1024 * 1024;

pub struct HttpClient {
    agent: ureq::Agent,
    ledger: Arc<TransferLedger>,
    retry: RetryPolicy,
    signer: Option<UrlSigner>,
}

impl Default for HttpClient {
    fn default() -> Self {
        Self::new(TransferLedger::new())
    }
}

fn host_of(url: &str) -> String {
    url::Url::parse(url)
        .ok()
        .map(|u| match (u.host_str(), u.port()) {
            (Some(h), Some(p)) => format!("{h}:{p}"),
            (Some(h), None) => h.to_string(),
            _ => String::new(),
        })
        .unwrap_or_default()
}

impl HttpClient {
    pub fn new(ledger: Arc<TransferLedger>) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .max_idle_connections_per_host(16)
            .build();
        HttpClient { agent: ureq::Agent::new_with_config(config), ledger, retry: RetryPolicy::default(), signer: None }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_signer(mut self, signer: UrlSigner) -> Self {
        self.signer = Some(signer);
        self
    }

    pub fn ledger(&self) -> &Arc<TransferLedger> {
        &self.ledger
    }

    fn with_retries(
        &self,
        kind: TransferKind,
        method: &'static str,
        url: &str,
        range: Option<(u64, u64)>,
        send: impl Fn() -> Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<HttpResponse, HttpError> {
        let mut attempt = 0;
        loop {
            let outcome = send().and_then(|resp| {
                let status = resp.status().as_u16();
                let body = resp.into_body().into_with_config().limit(MAX_BODY).read_to_vec()?;
                Ok(HttpResponse { status, body })
            });
            let retryable = match &outcome {
                Ok(r) => r.status == 429 || r.status >= 500,
                Err(e) => matches!(e, ureq::Error::Timeout(_) | ureq::Error::Io(_) | ureq::Error::ConnectionFailed),
            };
            if let Ok(r) = &outcome {
                self.ledger.push(TransferRecord {
                    kind,
                    method,
                    url: url.to_string(),
                    host: host_of(url),
                    range,
                    status: r.status,
                    bytes: r.body.len() as u64,
                });
            }
            if retryable && attempt < self.retry.max_retries {
                let delay = self.retry.base_delay * 2u32.pow(attempt);
                log::debug!("retrying {method} {url} in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
                continue;
            }
            return outcome.map_err(|e| HttpError::Transport { url: url.to_string(), message: e.to_string() });
        }
    }

    /// GET returning the response whatever its status.
    pub fn get(&self, kind: TransferKind, url: &str) -> Result<HttpResponse, HttpError> {
        self.with_retries(kind, "GET", url, None, || self.agent.get(url).header("Accept", "application/json").call())
    }

    /// POST a JSON document, returning the response whatever its status.
    pub fn post_json(
        &self,
        kind: TransferKind,
        url: &str,
        body: &serde_json::Value,
    ) -> Result<HttpResponse, HttpError> {
        let payload = body.to_string();
        self.with_retries(kind, "POST", url, None, || {
            self.agent
                .post(url)
                .header("Content-Type", "application/json")
                .header("Accept", "application/geo+json, application/json")
                .send(payload.as_bytes())
        })
    }

    /// Fetch bytes `start..=end`. Requires `206 Partial Content`; the body may
    /// be shorter than requested at end of file.
    pub fn get_range(&self, kind: TransferKind, url: &str, start: u64, end: u64) -> Result<Vec<u8>, HttpError> {
        let signed = match &self.signer {
            Some(sign) => sign(url),
            None => url.to_string(),
        };
        let header = format!("bytes={start}-{end}");
        let resp = self.with_retries(kind, "GET", &signed, Some((start, end)), || {
            self.agent.get(&signed).header("Range", &header).call()
        })?;
        match resp.status {
            206 => Ok(resp.body),
            200 => Err(HttpError::RangeNotSupported { url: url.to_string(), status: 200 }),
            status => Err(HttpError::Status { url: url.to_string(), status, excerpt: resp.excerpt() }),
        }
    }
}
