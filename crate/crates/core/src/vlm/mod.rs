//! Large-VLM querying: request/response types, reply parsing, and backends.

mod http;
mod oracle;

pub use self::http::{HttpVlmBackend, VlmAdapter};
pub use oracle::{oracle_select, OracleVlmBackend};

use std::collections::BTreeSet;
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::Arc;
use std::time::{Duration, Instant};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::BehaviorRule;
use crate::marking::MarkerSet;
use crate::world::SemanticWorld;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VlmError {
    #[error("VLM request timed out after {0:.1} s")]
    Timeout(f64),
    #[error("VLM transport error: {0}")]
    Transport(String),
    #[error("VLM reply contained no valid marker: {0:?}")]
    EmptyAfterParse(String),
    #[error("no marker satisfies the requested behavior")]
    NoQualifyingMarker,
    #[error("invalid VLM request: {0}")]
    InvalidRequest(String),
}

/// Ground truth handed to oracle backends; live backends ignore it.
#[derive(Debug, Clone)]
pub struct OracleHint {
    pub world: Arc<SemanticWorld>,
    pub markers: MarkerSet,
    pub rule: BehaviorRule,
}

#[derive(Debug, Clone)]
pub struct VlmRequest {
    pub marked_image: RgbImage,
    pub prompt: String,
    pub valid_labels: BTreeSet<u32>,
    pub timeout_s: f64,
    pub request_id: u64,
    pub oracle_hint: Option<OracleHint>,
}

impl VlmRequest {
    pub fn validate(&self) -> Result<(), VlmError> {
        if self.valid_labels.is_empty() {
            return Err(VlmError::InvalidRequest("no valid labels".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(VlmError::InvalidRequest("timeout must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub raw_text: String,
    pub markers: Vec<u32>,
    /// Simulated latency for deterministic backends, wall latency otherwise.
    pub latency_s: f64,
    pub wall_latency_s: f64,
    pub backend_id: String,
}

pub trait VlmBackend: Send + Sync {
    fn id(&self) -> &str;

    /// Produces the raw reply text for a request.
    fn complete(&self, req: &VlmRequest) -> Result<String, VlmError>;

    /// Fixed simulated response time for deterministic backends. `None` means
    /// the reply is used as soon as it arrives.
    fn simulated_latency(&self) -> Option<f64> {
        None
    }
}

/// Extracts integer tokens in order, keeps those in `valid`, drops repeats.
pub fn parse_marker_list(raw: &str, valid: &BTreeSet<u32>) -> Result<Vec<u32>, VlmError> {
    let mut out: Vec<u32> = Vec::new();
    let bytes = raw.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() {
            let start = i;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            // part of a decimal number like "2.5": skip the fractional part too
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                continue;
            }
            if let Ok(n) = raw[start..i].parse::<u32>() {
                if valid.contains(&n) && !out.contains(&n) {
                    out.push(n);
                }
            }
        } else {
            i += 1;
        }
    }
    if out.is_empty() {
        Err(VlmError::EmptyAfterParse(raw.to_string()))
    } else {
        Ok(out)
    }
}

/// Sends a request (one retry on transport errors) and parses the reply.
pub fn query_reference(backend: &dyn VlmBackend, req: &VlmRequest) -> Result<VlmResponse, VlmError> {
    req.validate()?;
    let start = Instant::now();
    let raw = match backend.complete(req) {
        Err(VlmError::Transport(e)) => {
            log::warn!("VLM transport error, retrying once: {e}");
            backend.complete(req)?
        }
        other => other?,
    };
    let wall = start.elapsed().as_secs_f64();
    if backend.simulated_latency().is_none() && wall > req.timeout_s {
        return Err(VlmError::Timeout(req.timeout_s));
    }
    let markers = parse_marker_list(&raw, &req.valid_labels)?;
    Ok(VlmResponse {
        raw_text: raw,
        markers,
        latency_s: backend.simulated_latency().unwrap_or(wall),
        wall_latency_s: wall,
        backend_id: backend.id().to_string(),
    })
}

/// A request running on a worker thread.
pub struct PendingQuery {
    pub request_id: u64,
    pub issued_at: f64,
    pub issued_wall: Instant,
    rx: Receiver<Result<VlmResponse, VlmError>>,
}

pub enum Poll {
    Ready(Result<VlmResponse, VlmError>),
    Pending,
}

impl PendingQuery {
    /// Starts `req` on its own thread; never blocks the caller.
    pub fn spawn(backend: Arc<dyn VlmBackend>, req: VlmRequest, now: f64) -> Self {
        let (tx, rx) = mpsc::channel();
        let request_id = req.request_id;
        std::thread::Builder::new()
            .name(format!("vlm-query-{request_id}"))
            .spawn(move || {
                let _ = tx.send(query_reference(backend.as_ref(), &req));
            })
            .expect("spawn VLM worker");
        Self {
            request_id,
            issued_at: now,
            issued_wall: Instant::now(),
            rx,
        }
    }

    pub fn try_poll(&self) -> Poll {
        match self.rx.try_recv() {
            Ok(r) => Poll::Ready(r),
            Err(TryRecvError::Empty) => Poll::Pending,
            Err(TryRecvError::Disconnected) => {
                Poll::Ready(Err(VlmError::Transport("worker exited without a reply".into())))
            }
        }
    }

    /// Blocks until the worker replies.
    pub fn block(&self) -> Result<VlmResponse, VlmError> {
        self.rx
            .recv()
            .unwrap_or_else(|_| Err(VlmError::Transport("worker exited without a reply".into())))
    }

    /// Waits up to `limit` for the reply.
    pub fn wait(&self, limit: Duration) -> Poll {
        match self.rx.recv_timeout(limit) {
            Ok(r) => Poll::Ready(r),
            Err(mpsc::RecvTimeoutError::Timeout) => Poll::Pending,
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Poll::Ready(Err(VlmError::Transport("worker exited without a reply".into())))
            }
        }
    }
}

/// Wraps a backend with an artificial wall-clock delay.
pub struct DelayedBackend<B> {
    pub inner: B,
    pub delay: Duration,
}

impl<B: VlmBackend> VlmBackend for DelayedBackend<B> {
    fn id(&self) -> &str {
        "delayed"
    }

    fn complete(&self, req: &VlmRequest) -> Result<String, VlmError> {
        std::thread::sleep(self.delay);
        self.inner.complete(req)
    }
}

/// Replies with canned texts in order, then repeats the last one.
pub struct ScriptedBackend {
    replies: Vec<String>,
    next: std::sync::atomic::AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(replies: Vec<String>) -> Self {
        Self {
            replies,
            next: std::sync::atomic::AtomicUsize::new(0),
        }
    }
}

impl VlmBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, _req: &VlmRequest) -> Result<String, VlmError> {
        let i = self.next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        self.replies
            .get(i.min(self.replies.len().saturating_sub(1)))
            .cloned()
            .ok_or_else(|| VlmError::Transport("no scripted replies".into()))
    }

    fn simulated_latency(&self) -> Option<f64> {
        Some(0.0)
    }
}
