//! Access to ML-derived values: captions, embeddings, aesthetic scores and
//! OCR boxes. Precomputed score files answer first; live sidecars answer the
//! rest.

mod protocol;
mod score_file;
mod sidecar;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use thiserror::Error;

pub use protocol::{Capabilities, ErrorBody, Payload, ScoreOp, ScoreRequest, ScoreResponse, ScoreValue, PROTOCOL_VERSION};
pub use score_file::ScoreFile;
pub use sidecar::Sidecar;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HandshakeError {
    #[error("could not start sidecar: {0}")]
    Spawn(String),
    #[error("sidecar exited before advertising capabilities")]
    ExitedEarly,
    #[error("sidecar did not advertise capabilities in time")]
    Timeout,
    #[error("malformed capability advertisement ({reason}): {line}")]
    Malformed { line: String, reason: String },
    #[error("sidecar speaks {found:?}, expected {PROTOCOL_VERSION:?}")]
    VersionMismatch { found: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScorerError {
    #[error("no provider for {op} (video {video_id:?})")]
    Unsupported { op: ScoreOp, video_id: String },
    #[error("{op} for {video_id:?} timed out after {after:?}")]
    Timeout {
        op: ScoreOp,
        video_id: String,
        after: Duration,
    },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("provider error {code}: {message}")]
    Provider { code: String, message: String },
    #[error("sidecar crashed: {0}")]
    Crashed(String),
    #[error("handshake with `{command}` failed: {source}")]
    Handshake {
        command: String,
        #[source]
        source: HandshakeError,
    },
    #[error("score file: {0}")]
    ScoreFile(String),
    #[error("bad payload: {0}")]
    BadPayload(String),
}

impl ScorerError {
    pub fn code(&self) -> &'static str {
        match self {
            ScorerError::Unsupported { .. } => "unsupported_op",
            ScorerError::Timeout { .. } => "timeout",
            ScorerError::ProtocolViolation(_) => "protocol_violation",
            ScorerError::Provider { .. } => "provider_error",
            ScorerError::Crashed(_) => "sidecar_crashed",
            ScorerError::Handshake { .. } => "handshake",
            ScorerError::ScoreFile(_) => "score_file",
            ScorerError::BadPayload(_) => "bad_payload",
        }
    }
}

/// Failure of [`ScorerGateway::request_with`]: either the payload could not
/// be built or the provider failed.
#[derive(Debug)]
pub enum RequestFailure<E> {
    Payload(E),
    Scorer(ScorerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    ScoreFile,
    Sidecar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestLogEntry {
    pub op: ScoreOp,
    pub video_id: String,
    pub source: Source,
}

pub struct ScorerGateway {
    score_file: ScoreFile,
    sidecars: Vec<Sidecar>,
    next_id: AtomicU64,
    log: Mutex<Vec<RequestLogEntry>>,
}

impl ScorerGateway {
    pub fn new(score_file: ScoreFile, sidecars: Vec<Sidecar>) -> Self {
        ScorerGateway {
            score_file,
            sidecars,
            next_id: AtomicU64::new(1),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Loads score files and launches sidecar commands.
    pub fn launch(score_files: &[PathBuf], commands: &[String], timeout: Duration) -> Result<Self, ScorerError> {
        let mut file = ScoreFile::new();
        for path in score_files {
            file.merge_path(path)?;
        }
        let sidecars = commands
            .iter()
            .map(|cmd| {
                Sidecar::launch(cmd, timeout).map_err(|source| ScorerError::Handshake {
                    command: cmd.clone(),
                    source,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ScorerGateway::new(file, sidecars))
    }

    pub fn score_file(&self) -> &ScoreFile {
        &self.score_file
    }

    pub fn sidecars(&self) -> &[Sidecar] {
        &self.sidecars
    }

    /// True when some sidecar advertised `op`.
    pub fn advertised(&self, op: ScoreOp) -> bool {
        self.sidecars.iter().any(|s| s.capabilities().ops.contains(&op))
    }

    pub fn lookup(&self, op: ScoreOp, video_id: &str) -> Option<&ScoreValue> {
        self.score_file.get(video_id, op)
    }

    fn note(&self, op: ScoreOp, video_id: &str, source: Source) {
        self.log.lock().unwrap().push(RequestLogEntry {
            op,
            video_id: video_id.to_string(),
            source,
        });
    }

    /// Every answered or attempted request so far, in completion order.
    pub fn request_log(&self) -> Vec<RequestLogEntry> {
        self.log.lock().unwrap().clone()
    }

    pub fn request(&self, op: ScoreOp, video_id: &str, payload: &Payload) -> Result<ScoreValue, ScorerError> {
        match self.request_with(op, video_id, || Ok::<_, ScorerError>(payload.clone())) {
            Ok(v) => Ok(v),
            Err(RequestFailure::Scorer(e)) | Err(RequestFailure::Payload(e)) => Err(e),
        }
    }

    /// Like [`request`](Self::request) but only builds the payload when a
    /// sidecar actually has to be asked.
    pub fn request_with<E>(
        &self,
        op: ScoreOp,
        video_id: &str,
        payload: impl FnOnce() -> Result<Payload, E>,
    ) -> Result<ScoreValue, RequestFailure<E>> {
        if let Some(v) = self.score_file.get(video_id, op) {
            self.note(op, video_id, Source::ScoreFile);
            return Ok(v.clone());
        }
        let Some(sidecar) = self.sidecars.iter().find(|s| s.capabilities().ops.contains(&op)) else {
            return Err(RequestFailure::Scorer(ScorerError::Unsupported {
                op,
                video_id: video_id.to_string(),
            }));
        };
        let payload = payload().map_err(RequestFailure::Payload)?;
        payload
            .check_shape(op)
            .map_err(|m| RequestFailure::Scorer(ScorerError::BadPayload(m)))?;
        let frames = (!payload.frames.is_empty() && op != ScoreOp::Caption).then_some(payload.frames.len());
        let request = ScoreRequest {
            request_id: format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed)),
            op,
            video_id: video_id.to_string(),
            payload,
        };
        self.note(op, video_id, Source::Sidecar);
        let raw = sidecar.call(&request).map_err(RequestFailure::Scorer)?;
        ScoreValue::decode(op, &raw, frames).map_err(|m| RequestFailure::Scorer(ScorerError::ProtocolViolation(m)))
    }
}
