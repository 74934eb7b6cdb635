//! JSON-over-HTTP client shared by the remote embedder and remote scorer.
//!
//! Requests are split into fixed-size batches, at most `max_in_flight` of
//! which run at once. Transient failures (connection errors, timeouts, 5xx,
//! 429) are retried up to `max_attempts` times; results are reassembled in
//! batch order regardless of completion order.

use std::ops::Range;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum TransportError {
    /// Worth retrying.
    Transient(String),
    Fatal(String),
}

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TransportError::Transient(m) => write!(f, "transient: {m}"),
            TransportError::Fatal(m) => f.write_str(m),
        }
    }
}

/// Sends one JSON request and returns the parsed JSON response.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, body: &Value) -> std::result::Result<Value, TransportError>;
}

/// Blocking HTTP transport.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder().timeout_global(Some(timeout)).build();
        Self { agent: ureq::Agent::new_with_config(config) }
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, body: &Value) -> std::result::Result<Value, TransportError> {
        let mut response = self.agent.post(url).send_json(body).map_err(classify)?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| TransportError::Fatal(format!("invalid JSON response: {e}")))
    }
}

fn classify(e: ureq::Error) -> TransportError {
    use ureq::Error as E;
    match e {
        E::StatusCode(code) if code >= 500 || code == 429 => {
            TransportError::Transient(format!("HTTP status {code}"))
        }
        E::StatusCode(code) => TransportError::Fatal(format!("HTTP status {code}")),
        E::Io(_) | E::Timeout(_) | E::HostNotFound | E::ConnectionFailed | E::BodyStalled => {
            TransportError::Transient(e.to_string())
        }
        other => TransportError::Fatal(other.to_string()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub url: String,
    pub timeout: Duration,
    pub batch_size: usize,
    pub max_attempts: usize,
    pub max_in_flight: usize,
    /// Sleep before retry `i` is `backoff * i`.
    pub backoff: Duration,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            timeout: Duration::from_secs(30),
            batch_size: 64,
            max_attempts: 3,
            max_in_flight: 4,
            backoff: Duration::from_millis(200),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_attempts == 0 || self.max_in_flight == 0 {
            return Err(Error::Parameter(
                "remote batch_size, max_attempts and max_in_flight must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent requests across all callers of
/// one client.
#[derive(Debug)]
struct Limiter {
    free: Mutex<usize>,
    released: Condvar,
}

impl Limiter {
    fn new(permits: usize) -> Self {
        Self { free: Mutex::new(permits), released: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        let mut free = self.free.lock().expect("limiter poisoned");
        while *free == 0 {
            free = self.released.wait(free).expect("limiter poisoned");
        }
        *free -= 1;
        drop(free);
        let out = f();
        *self.free.lock().expect("limiter poisoned") += 1;
        self.released.notify_one();
        out
    }
}

/// A configured endpoint with retry, batching and a shared in-flight limit.
#[derive(Clone)]
pub struct RemoteClient {
    config: RemoteConfig,
    transport: Arc<dyn Transport>,
    limiter: Arc<Limiter>,
}

impl RemoteClient {
    pub fn new(config: RemoteConfig, transport: Arc<dyn Transport>) -> Result<Self> {
        config.validate()?;
        let limiter = Arc::new(Limiter::new(config.max_in_flight));
        Ok(Self { config, transport, limiter })
    }

    /// Client over [`HttpTransport`] with the configured timeout.
    pub fn http(config: RemoteConfig) -> Result<Self> {
        let transport = Arc::new(HttpTransport::new(config.timeout));
        Self::new(config, transport)
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn post(&self, body: &Value) -> Result<Value> {
        self.limiter.run(|| post_with_retry(&*self.transport, &self.config, body))
    }

    pub(crate) fn batched<T, F>(&self, n: usize, call: F) -> Vec<(Range<usize>, Result<Vec<T>>)>
    where
        T: Send,
        F: Fn(Range<usize>) -> Result<Vec<T>> + Sync,
    {
        run_batched(n, &self.config, call)
    }
}

/// Posts `body`, retrying transient failures.
fn post_with_retry(transport: &dyn Transport, cfg: &RemoteConfig, body: &Value) -> Result<Value> {
    let mut attempt = 0;
    loop {
        attempt += 1;
        match transport.post_json(&cfg.url, body) {
            Ok(v) => return Ok(v),
            Err(TransportError::Transient(m)) if attempt < cfg.max_attempts => {
                log::warn!("{}: attempt {attempt} failed ({m}), retrying", cfg.url);
                std::thread::sleep(cfg.backoff * attempt as u32);
            }
            Err(e) => return Err(Error::Remote { attempts: attempt, message: e.to_string() }),
        }
    }
}

/// Runs `call` over consecutive batches of `0..n`, at most `max_in_flight`
/// concurrently. Output is in batch order.
fn run_batched<T, F>(n: usize, cfg: &RemoteConfig, call: F) -> Vec<(Range<usize>, Result<Vec<T>>)>
where
    T: Send,
    F: Fn(Range<usize>) -> Result<Vec<T>> + Sync,
{
    let ranges: Vec<Range<usize>> = (0..n)
        .step_by(cfg.batch_size)
        .map(|start| start..(start + cfg.batch_size).min(n))
        .collect();
    let mut out = Vec::with_capacity(ranges.len());
    for group in ranges.chunks(cfg.max_in_flight) {
        if group.len() == 1 {
            out.push((group[0].clone(), call(group[0].clone())));
            continue;
        }
        let call = &call;
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = group.iter().map(|r| s.spawn(move || call(r.clone()))).collect();
            handles.into_iter().map(|h| h.join().expect("remote batch thread panicked")).collect()
        });
        out.extend(group.iter().cloned().zip(results));
    }
    out
}
