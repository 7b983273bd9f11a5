//! Shared plumbing for the local HTTP backends.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

/// Counting semaphore bounding in-flight requests to one backend.
#[derive(Debug)]
pub struct ParallelismLimiter {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a ParallelismLimiter,
}

impl ParallelismLimiter {
    pub fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit { limiter: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self
            .limiter
            .in_flight
            .lock()
            .unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.limiter.freed.notify_one();
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("backend at {endpoint} unavailable: {message}")]
    Unavailable { endpoint: String, message: String },
    #[error("request to {endpoint} timed out")]
    Timeout { endpoint: String },
    #[error("backend at {endpoint} returned HTTP {status}: {body}")]
    Status {
        endpoint: String,
        status: u16,
        body: String,
    },
    #[error("malformed response from {endpoint}: {message}")]
    Decode { endpoint: String, message: String },
}

impl TransportError {
    /// Connection failures, timeouts and 5xx responses may succeed on retry.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Unavailable { .. } | TransportError::Timeout { .. } => true,
            TransportError::Status { status, .. } => *status >= 500,
            TransportError::Decode { .. } => false,
        }
    }
}

/// Blocking JSON-over-HTTP client for one local backend.
#[derive(Debug)]
pub struct JsonClient {
    base: String,
    http: reqwest::blocking::Client,
    limiter: ParallelismLimiter,
}

impl JsonClient {
    pub fn new(base: &str, timeout: Duration, parallelism: usize) -> Result<Self, TransportError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .no_proxy()
            .build()
            .map_err(|e| TransportError::Unavailable {
                endpoint: base.to_string(),
                message: e.to_string(),
            })?;
        Ok(Self {
            base: base.trim_end_matches('/').to_string(),
            http,
            limiter: ParallelismLimiter::new(parallelism),
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn parallelism(&self) -> usize {
        self.limiter.limit()
    }

    pub fn post<Req, Resp>(&self, path: &str, body: &Req) -> Result<Resp, TransportError>
    where
        Req: serde::Serialize + ?Sized,
        Resp: serde::de::DeserializeOwned,
    {
        let endpoint = format!("{}{}", self.base, path);
        let _permit = self.limiter.acquire();
        let resp = self
            .http
            .post(&endpoint)
            .json(body)
            .send()
            .map_err(|e| classify(&endpoint, e))?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(TransportError::Status {
                endpoint,
                status: status.as_u16(),
                body,
            });
        }
        let bytes = resp.bytes().map_err(|e| classify(&endpoint, e))?;
        serde_json::from_slice(&bytes).map_err(|e| TransportError::Decode {
            endpoint,
            message: e.to_string(),
        })
    }

    /// Cheap reachability probe: a TCP connect to the backend's host and port.
    pub fn reachable(&self, timeout: Duration) -> bool {
        let Ok(url) = reqwest::Url::parse(&self.base) else {
            return false;
        };
        let Ok(addrs) = url.socket_addrs(|| Some(80)) else {
            return false;
        };
        addrs
            .iter()
            .any(|a| std::net::TcpStream::connect_timeout(a, timeout).is_ok())
    }
}

fn classify(endpoint: &str, e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout {
            endpoint: endpoint.to_string(),
        }
    } else if e.is_decode() {
        TransportError::Decode {
            endpoint: endpoint.to_string(),
            message: e.to_string(),
        }
    } else {
        TransportError::Unavailable {
            endpoint: endpoint.to_string(),
            message: e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn limiter_bounds_concurrency() {
        let limiter = Arc::new(ParallelismLimiter::new(2));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let (limiter, current, peak) = (&limiter, &current, &peak);
                s.spawn(move || {
                    let _p = limiter.acquire();
                    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    current.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert!(peak.load(Ordering::SeqCst) >= 1);
    }

    #[test]
    fn zero_limit_is_one() {
        assert_eq!(ParallelismLimiter::new(0).limit(), 1);
    }

    #[test]
    fn refused_connection_is_retryable() {
        // Port 9 (discard) on loopback is not expected to be listening.
        let client = JsonClient::new("http://127.0.0.1:9", Duration::from_millis(500), 1).unwrap();
        let err = client
            .post::<_, serde_json::Value>("/x", &serde_json::json!({}))
            .unwrap_err();
        assert!(err.is_retryable(), "{err}");
    }
}
