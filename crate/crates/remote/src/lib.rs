//! Client for an external embedding service.
//!
//! Wire protocol: `POST {endpoint}/embed` with `{"texts": [...]}`, answered by
//! `{"vectors": [[...], ...], "dim": d}`. Vectors are renormalized on arrival,
//! transient failures are retried with exponential backoff, and the number of
//! requests in flight is bounded per client.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use mechkb_core::embed::{EmbedError, EmbeddingProvider, EmbeddingVector};
use mechkb_core::Scalar;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PROVIDER_NAME: &str = "remote";
pub const DEFAULT_MAX_IN_FLIGHT: usize = 4;
pub const DEFAULT_ATTEMPTS: u32 = 3;
pub const DEFAULT_BATCH: usize = 64;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub endpoint: String,
    /// Expected vector dimension. `None` asks the service once at connect time.
    pub dim: Option<usize>,
    /// Name recorded in index manifests; must match between build and serve.
    pub name: String,
    pub max_in_flight: usize,
    pub attempts: u32,
    pub initial_backoff: Duration,
    pub timeout: Duration,
    pub batch_size: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            dim: None,
            name: DEFAULT_PROVIDER_NAME.to_string(),
            max_in_flight: DEFAULT_MAX_IN_FLIGHT,
            attempts: DEFAULT_ATTEMPTS,
            initial_backoff: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
            batch_size: DEFAULT_BATCH,
        }
    }

    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn with_backoff(mut self, initial: Duration) -> Self {
        self.initial_backoff = initial;
        self
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Transient(String),
    Fatal(EmbedError),
}

pub struct RemoteEmbedder {
    config: RemoteConfig,
    dim: usize,
    url: String,
    agent: ureq::Agent,
    slots: Slots,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("url", &self.url)
            .field("dim", &self.dim)
            .field("name", &self.config.name)
            .finish()
    }
}

impl RemoteEmbedder {
    /// Build a client. Without a configured dimension the service is probed
    /// once, so an unreachable endpoint fails here with `ProviderUnavailable`.
    pub fn connect(config: RemoteConfig) -> Result<Self, EmbedError> {
        if config.endpoint.trim().is_empty() {
            return Err(EmbedError::ProviderUnavailable("empty endpoint URL".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/embed", config.endpoint.trim_end_matches('/'));
        let mut client = Self {
            dim: config.dim.unwrap_or(0),
            slots: Slots::new(config.max_in_flight),
            config,
            url,
            agent,
        };
        if client.config.dim.is_none() {
            let probe = client.request(&["probe".to_string()])?;
            client.dim = probe.dim;
        }
        if client.dim == 0 {
            return Err(EmbedError::ProviderProtocolError("service declared dim 0".into()));
        }
        Ok(client)
    }

    pub fn endpoint(&self) -> &str {
        &self.config.endpoint
    }

    fn attempt(&self, texts: &[String]) -> Result<EmbedResponse, Attempt> {
        let _slot = self.slots.acquire();
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { texts })
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if status != 200 {
            return Err(Attempt::Fatal(EmbedError::ProviderProtocolError(format!(
                "HTTP {status} from {}",
                self.url
            ))));
        }
        response
            .body_mut()
            .read_json::<EmbedResponse>()
            .map_err(|e| Attempt::Fatal(EmbedError::ProviderProtocolError(e.to_string())))
    }

    fn request(&self, texts: &[String]) -> Result<EmbedResponse, EmbedError> {
        let attempts = self.config.attempts.max(1);
        let mut delay = self.config.initial_backoff;
        let mut last = String::new();
        for n in 0..attempts {
            if n > 0 {
                thread::sleep(delay);
                delay = delay.saturating_mul(2);
            }
            match self.attempt(texts) {
                Ok(r) => return Ok(r),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Transient(msg)) => last = msg,
            }
        }
        Err(EmbedError::ProviderUnavailable(format!(
            "{} after {attempts} attempts: {last}",
            self.url
        )))
    }

    fn embed_chunk<S: Scalar>(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        let response = self.request(texts)?;
        if response.dim != self.dim {
            return Err(EmbedError::ProviderProtocolError(format!(
                "service declared dim {} but {} was expected",
                response.dim, self.dim
            )));
        }
        if response.vectors.len() != texts.len() {
            return Err(EmbedError::ProviderProtocolError(format!(
                "{} vectors returned for {} texts",
                response.vectors.len(),
                texts.len()
            )));
        }
        response
            .vectors
            .into_iter()
            .map(|v| {
                if v.len() != self.dim {
                    return Err(EmbedError::ProviderProtocolError(format!(
                        "vector of length {} in a dim {} response",
                        v.len(),
                        self.dim
                    )));
                }
                EmbeddingVector::normalized(v.into_iter().map(S::of).collect())
            })
            .collect()
    }
}

/// One-shot helper: embed `texts` against `endpoint` with default settings.
pub fn remote_embed_batch<S: Scalar>(
    texts: &[String],
    endpoint: &str,
) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
    RemoteEmbedder::connect(RemoteConfig::new(endpoint))?.embed_batch(texts)
}

impl<S: Scalar> EmbeddingProvider<S> for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.config.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector<S>>, EmbedError> {
        if texts.iter().any(|t| t.is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.embed_chunk(chunk)?);
        }
        Ok(out)
    }
}
