//! Sidecar subprocesses speaking the scorer protocol over stdio.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::Value;

use super::protocol::{Capabilities, ErrorBody, ScoreRequest, ScoreResponse, PROTOCOL_VERSION};
use super::{HandshakeError, ScorerError};

enum Reply {
    Result(Value),
    Error(ErrorBody),
    Violation(String),
    Closed,
}

type Pending = Arc<Mutex<HashMap<String, Sender<Reply>>>>;

struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.cv.wait(free).unwrap();
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
    }
}

/// One running sidecar process.
struct Process {
    child: Mutex<Child>,
    stdin: Mutex<Option<ChildStdin>>,
    pending: Pending,
    alive: Arc<AtomicBool>,
    caps: Capabilities,
    permits: Permits,
}

fn shell(command: &str) -> Command {
    let mut cmd = if cfg!(windows) {
        let mut c = Command::new("cmd");
        c.arg("/C");
        c
    } else {
        let mut c = Command::new("sh");
        c.arg("-c");
        c
    };
    cmd.arg(command);
    cmd
}

/// Reads the `request_id` string out of a line that is not valid JSON as a
/// whole, e.g. a truncated response.
fn salvage_request_id(line: &str) -> Option<String> {
    let at = line.find("\"request_id\"")? + "\"request_id\"".len();
    let rest = line[at..].trim_start().strip_prefix(':')?;
    serde_json::Deserializer::from_str(rest).into_iter::<String>().next()?.ok()
}

fn dispatch(line: &str, pending: &Pending) {
    let resp: ScoreResponse = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            // an id we can still read lets us fail that request precisely
            let id = salvage_request_id(line);
            match id.and_then(|id| pending.lock().unwrap().remove(&id)) {
                Some(tx) => {
                    let _ = tx.send(Reply::Violation(format!("unparseable response: {e}")));
                }
                None => log::warn!("sidecar wrote an unattributable line: {line}"),
            }
            return;
        }
    };
    let Some(tx) = pending.lock().unwrap().remove(&resp.request_id) else {
        log::warn!("sidecar answered unknown request {}", resp.request_id);
        return;
    };
    let reply = match (resp.result, resp.error) {
        (Some(v), None) => Reply::Result(v),
        (None, Some(e)) => Reply::Error(e),
        _ => Reply::Violation("response must carry exactly one of result or error".into()),
    };
    let _ = tx.send(reply);
}

impl Process {
    fn spawn(command: &str, handshake_timeout: Duration) -> Result<Process, HandshakeError> {
        let mut child = shell(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| HandshakeError::Spawn(format!("{command}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let pending: Pending = Arc::new(Mutex::new(HashMap::new()));
        let alive = Arc::new(AtomicBool::new(true));
        let (adv_tx, adv_rx) = mpsc::channel::<Option<String>>();

        {
            let pending = Arc::clone(&pending);
            let alive = Arc::clone(&alive);
            thread::spawn(move || {
                let mut lines = BufReader::new(stdout).lines();
                let first = lines.next().and_then(Result::ok);
                let got_first = first.is_some();
                let _ = adv_tx.send(first);
                if got_first {
                    for line in lines {
                        let Ok(line) = line else { break };
                        if !line.trim().is_empty() {
                            dispatch(&line, &pending);
                        }
                    }
                }
                alive.store(false, Ordering::SeqCst);
                for (_, tx) in pending.lock().unwrap().drain() {
                    let _ = tx.send(Reply::Closed);
                }
            });
        }

        let kill = |mut child: Child| {
            let _ = child.kill();
            let _ = child.wait();
        };
        let line = match adv_rx.recv_timeout(handshake_timeout) {
            Ok(Some(line)) => line,
            Ok(None) | Err(RecvTimeoutError::Disconnected) => {
                kill(child);
                return Err(HandshakeError::ExitedEarly);
            }
            Err(RecvTimeoutError::Timeout) => {
                kill(child);
                return Err(HandshakeError::Timeout);
            }
        };
        let caps = match Capabilities::parse(&line) {
            Ok(c) => c,
            Err(reason) => {
                kill(child);
                return Err(HandshakeError::Malformed { line, reason });
            }
        };
        if caps.protocol != PROTOCOL_VERSION {
            kill(child);
            return Err(HandshakeError::VersionMismatch { found: caps.protocol });
        }
        let permits = Permits {
            free: Mutex::new(caps.concurrency),
            cv: Condvar::new(),
        };
        Ok(Process {
            child: Mutex::new(child),
            stdin: Mutex::new(Some(stdin)),
            pending,
            alive,
            caps,
            permits,
        })
    }

    fn call(&self, request: &ScoreRequest, timeout: Duration) -> Result<Value, ScorerError> {
        self.permits.acquire();
        let out = self.call_inner(request, timeout);
        self.permits.release();
        out
    }

    fn call_inner(&self, request: &ScoreRequest, timeout: Duration) -> Result<Value, ScorerError> {
        if !self.alive.load(Ordering::SeqCst) {
            return Err(ScorerError::Crashed("sidecar is not running".into()));
        }
        let (tx, rx) = mpsc::channel();
        self.pending.lock().unwrap().insert(request.request_id.clone(), tx);
        let mut line = serde_json::to_string(request).expect("requests serialize");
        line.push('\n');
        let written = {
            let mut stdin = self.stdin.lock().unwrap();
            match stdin.as_mut() {
                Some(s) => s.write_all(line.as_bytes()).and_then(|_| s.flush()),
                None => Err(std::io::ErrorKind::BrokenPipe.into()),
            }
        };
        if let Err(e) = written {
            self.pending.lock().unwrap().remove(&request.request_id);
            return Err(ScorerError::Crashed(format!("write failed: {e}")));
        }
        match rx.recv_timeout(timeout) {
            Ok(Reply::Result(v)) => Ok(v),
            Ok(Reply::Error(e)) => Err(ScorerError::Provider {
                code: e.code,
                message: e.message,
            }),
            Ok(Reply::Violation(m)) => Err(ScorerError::ProtocolViolation(m)),
            Ok(Reply::Closed) | Err(RecvTimeoutError::Disconnected) => {
                Err(ScorerError::Crashed("sidecar exited with the request in flight".into()))
            }
            Err(RecvTimeoutError::Timeout) => {
                self.pending.lock().unwrap().remove(&request.request_id);
                Err(ScorerError::Timeout {
                    op: request.op,
                    video_id: request.video_id.clone(),
                    after: timeout,
                })
            }
        }
    }
}

impl Drop for Process {
    fn drop(&mut self) {
        // closing stdin is the shutdown signal
        self.stdin.lock().unwrap().take();
        let mut child = self.child.lock().unwrap();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = child.kill();
        let _ = child.wait();
    }
}

struct SlotState {
    process: Option<Arc<Process>>,
    restarts_left: u32,
}

/// A sidecar command with restart-once supervision.
pub struct Sidecar {
    command: String,
    caps: Capabilities,
    timeout: Duration,
    state: Mutex<SlotState>,
}

impl Sidecar {
    /// Launches `command` through the shell and completes the handshake.
    pub fn launch(command: &str, timeout: Duration) -> Result<Sidecar, HandshakeError> {
        let process = Process::spawn(command, timeout)?;
        Ok(Sidecar {
            command: command.to_string(),
            caps: process.caps.clone(),
            timeout,
            state: Mutex::new(SlotState {
                process: Some(Arc::new(process)),
                restarts_left: 1,
            }),
        })
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn capabilities(&self) -> &Capabilities {
        &self.caps
    }

    fn current(&self) -> Result<Arc<Process>, ScorerError> {
        self.state
            .lock()
            .unwrap()
            .process
            .clone()
            .ok_or_else(|| ScorerError::Crashed(format!("sidecar `{}` failed permanently", self.command)))
    }

    /// Replaces `failed` with a fresh process, at most once per sidecar.
    fn restart(&self, failed: &Arc<Process>) -> Result<Arc<Process>, ScorerError> {
        let mut state = self.state.lock().unwrap();
        match &state.process {
            Some(p) if !Arc::ptr_eq(p, failed) => return Ok(Arc::clone(p)),
            None => return Err(ScorerError::Crashed(format!("sidecar `{}` failed permanently", self.command))),
            Some(_) => {}
        }
        state.process = None;
        if state.restarts_left == 0 {
            return Err(ScorerError::Crashed(format!("sidecar `{}` crashed again", self.command)));
        }
        state.restarts_left -= 1;
        log::warn!("restarting sidecar `{}`", self.command);
        let fresh = Process::spawn(&self.command, self.timeout)
            .map_err(|e| ScorerError::Crashed(format!("restart of `{}` failed: {e}", self.command)))?;
        let fresh = Arc::new(fresh);
        state.process = Some(Arc::clone(&fresh));
        Ok(fresh)
    }

    pub fn call(&self, request: &ScoreRequest) -> Result<Value, ScorerError> {
        let process = self.current()?;
        match process.call(request, self.timeout) {
            Err(ScorerError::Crashed(_)) => {
                let fresh = self.restart(&process)?;
                let out = fresh.call(request, self.timeout);
                if let Err(ScorerError::Crashed(reason)) = &out {
                    let mut state = self.state.lock().unwrap();
                    if state.process.as_ref().is_some_and(|p| Arc::ptr_eq(p, &fresh)) {
                        state.process = None;
                    }
                    return Err(ScorerError::Crashed(format!("{reason}; no restarts left")));
                }
                out
            }
            other => other,
        }
    }
}
