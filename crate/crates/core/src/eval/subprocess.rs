//! External evaluator speaking newline-delimited JSON over stdin/stdout.
//!
//! Handshake: the engine writes `{"hello":{"protocol":1}}` and the evaluator
//! answers `{"ready":{"constraints":M}}`. Afterwards every request line
//! `{"id","z","theta_int","theta_cont"}` receives exactly one response line
//! `{"id","loss","constraints",["error"]}`. One request is in flight per
//! process.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::Deserialize;
use serde_json::json;

use super::{Backend, CandidateConfig, EvalError, EvalReply, EvalRequest};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct SubprocessConfig {
    /// Program followed by its arguments.
    pub command: Vec<String>,
    /// Per-request reply deadline.
    pub timeout: Duration,
    /// Deadline for the handshake reply after launch.
    pub startup_timeout: Duration,
}

impl SubprocessConfig {
    pub fn new(command: Vec<String>) -> Self {
        Self {
            command,
            timeout: Duration::from_secs(300),
            startup_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Deserialize)]
struct ReadyMessage {
    ready: ReadyBody,
}

#[derive(Debug, Deserialize)]
struct ReadyBody {
    constraints: usize,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    id: u64,
    #[serde(default)]
    loss: Option<f64>,
    #[serde(default)]
    constraints: Vec<f64>,
    #[serde(default)]
    error: Option<String>,
}

enum ReadError {
    Timeout,
    Closed,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Running {
    fn launch(config: &SubprocessConfig) -> Result<Self, EvalError> {
        let (program, args) = config
            .command
            .split_first()
            .ok_or_else(|| EvalError::EvaluatorDown("empty evaluator command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EvalError::EvaluatorDown(format!("cannot launch `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("stdin is piped");
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                match line {
                    Ok(l) => {
                        if tx.send(l).is_err() {
                            break;
                        }
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(Self { child, stdin, lines: rx })
    }

    fn send(&mut self, line: &str) -> std::io::Result<()> {
        self.stdin.write_all(line.as_bytes())?;
        self.stdin.write_all(b"\n")?;
        self.stdin.flush()
    }

    fn recv(&self, timeout: Duration) -> Result<String, ReadError> {
        loop {
            match self.lines.recv_timeout(timeout) {
                Ok(l) if l.trim().is_empty() => continue,
                Ok(l) => return Ok(l),
                Err(RecvTimeoutError::Timeout) => return Err(ReadError::Timeout),
                Err(RecvTimeoutError::Disconnected) => return Err(ReadError::Closed),
            }
        }
    }

    fn exit_description(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => format!("evaluator exited with {status}"),
            _ => "evaluator closed its output".to_string(),
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A single evaluator process.
pub struct SubprocessBackend {
    config: SubprocessConfig,
    running: Option<Running>,
    constraints: usize,
}

impl SubprocessBackend {
    /// Launches the evaluator and completes the handshake.
    pub fn spawn(config: SubprocessConfig) -> Result<Self, EvalError> {
        let (running, constraints) = Self::start(&config)?;
        Ok(Self { config, running: Some(running), constraints })
    }

    fn start(config: &SubprocessConfig) -> Result<(Running, usize), EvalError> {
        let mut running = Running::launch(config)?;
        let hello = json!({ "hello": { "protocol": PROTOCOL_VERSION } }).to_string();
        running
            .send(&hello)
            .map_err(|e| EvalError::EvaluatorDown(format!("handshake write failed: {e}")))?;
        let line = match running.recv(config.startup_timeout) {
            Ok(l) => l,
            Err(ReadError::Timeout) => return Err(EvalError::Timeout(config.startup_timeout)),
            Err(ReadError::Closed) => {
                return Err(EvalError::EvaluatorDown(running.exit_description()))
            }
        };
        let ready: ReadyMessage = serde_json::from_str(&line).map_err(|e| EvalError::Protocol {
            message: format!("bad handshake reply: {e}"),
            raw: line.clone(),
        })?;
        debug!("evaluator ready with {} constraints", ready.ready.constraints);
        Ok((running, ready.ready.constraints))
    }

    fn restart(&mut self) -> Result<(), EvalError> {
        self.running = None;
        let (running, constraints) = Self::start(&self.config)?;
        if constraints != self.constraints {
            return Err(EvalError::Protocol {
                message: format!(
                    "restarted evaluator declares {constraints} constraints, expected {}",
                    self.constraints
                ),
                raw: String::new(),
            });
        }
        self.running = Some(running);
        Ok(())
    }

    fn round_trip(&mut self, line: &str, id: u64) -> Result<Attempt, EvalError> {
        let running = match self.running.as_mut() {
            Some(r) => r,
            None => return Ok(Attempt::Down("evaluator not running".into())),
        };
        let started = Instant::now();
        if let Err(e) = running.send(line) {
            let why = format!("request write failed: {e}");
            return Ok(Attempt::Down(why));
        }
        let reply = match running.recv(self.config.timeout) {
            Ok(l) => l,
            Err(ReadError::Timeout) => {
                // The process may still answer later; drop it so the next
                // request starts from a clean stream.
                self.running = None;
                return Err(EvalError::Timeout(self.config.timeout));
            }
            Err(ReadError::Closed) => return Ok(Attempt::Down(running.exit_description())),
        };
        let wall_time = started.elapsed();
        let resp: WireResponse =
            serde_json::from_str(&reply).map_err(|e| EvalError::Protocol {
                message: format!("malformed response: {e}"),
                raw: reply.clone(),
            })?;
        if resp.id != id {
            return Err(EvalError::Protocol {
                message: format!("response id {} does not match request id {id}", resp.id),
                raw: reply,
            });
        }
        if let Some(err) = resp.error {
            return Err(EvalError::Reported(err));
        }
        let loss = match resp.loss {
            Some(l) if l.is_finite() => l,
            _ => {
                return Err(EvalError::Protocol {
                    message: "missing or non-finite loss".into(),
                    raw: reply,
                })
            }
        };
        if resp.constraints.len() != self.constraints {
            return Err(EvalError::Protocol {
                message: format!(
                    "expected {} constraint values, got {}",
                    self.constraints,
                    resp.constraints.len()
                ),
                raw: reply,
            });
        }
        if resp.constraints.iter().any(|g| !g.is_finite()) {
            return Err(EvalError::Protocol {
                message: "non-finite constraint value".into(),
                raw: reply,
            });
        }
        Ok(Attempt::Done(EvalReply { loss, constraints: resp.constraints, wall_time }))
    }
}

enum Attempt {
    Done(EvalReply),
    Down(String),
}

impl Backend for SubprocessBackend {
    fn constraint_count(&self) -> usize {
        self.constraints
    }

    fn evaluate(
        &mut self,
        request: &EvalRequest,
        _candidate: &CandidateConfig,
    ) -> Result<EvalReply, EvalError> {
        let line = serde_json::to_string(request).expect("request serializes");
        match self.round_trip(&line, request.id)? {
            Attempt::Done(r) => Ok(r),
            Attempt::Down(why) => {
                warn!("{why}; restarting evaluator once");
                self.restart()?;
                match self.round_trip(&line, request.id)? {
                    Attempt::Done(r) => Ok(r),
                    Attempt::Down(why) => {
                        self.running = None;
                        Err(EvalError::EvaluatorDown(why))
                    }
                }
            }
        }
    }
}

/// Several single-flight evaluator processes; batches are spread across them.
pub struct SubprocessPool {
    workers: Vec<SubprocessBackend>,
    next: usize,
}

impl SubprocessPool {
    pub fn spawn(config: SubprocessConfig, size: usize) -> Result<Self, EvalError> {
        let workers = (0..size.max(1))
            .map(|_| SubprocessBackend::spawn(config.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        let m = workers[0].constraints;
        if workers.iter().any(|w| w.constraints != m) {
            return Err(EvalError::Protocol {
                message: "pool workers disagree on constraint count".into(),
                raw: String::new(),
            });
        }
        Ok(Self { workers, next: 0 })
    }

    pub fn len(&self) -> usize {
        self.workers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.workers.is_empty()
    }
}

impl Backend for SubprocessPool {
    fn constraint_count(&self) -> usize {
        self.workers[0].constraints
    }

    fn evaluate(
        &mut self,
        request: &EvalRequest,
        candidate: &CandidateConfig,
    ) -> Result<EvalReply, EvalError> {
        let i = self.next % self.workers.len();
        self.next = self.next.wrapping_add(1);
        self.workers[i].evaluate(request, candidate)
    }

    fn evaluate_batch(
        &mut self,
        batch: &[(EvalRequest, CandidateConfig)],
    ) -> Vec<Result<EvalReply, EvalError>> {
        let n = self.workers.len();
        let mut slots: Vec<Option<Result<EvalReply, EvalError>>> =
            (0..batch.len()).map(|_| None).collect();
        thread::scope(|scope| {
            let handles: Vec<_> = self
                .workers
                .iter_mut()
                .enumerate()
                .map(|(w, worker)| {
                    scope.spawn(move || {
                        batch
                            .iter()
                            .enumerate()
                            .skip(w)
                            .step_by(n)
                            .map(|(i, (r, c))| (i, worker.evaluate(r, c)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("evaluator worker panicked") {
                    slots[i] = Some(r);
                }
            }
        });
        slots.into_iter().map(|r| r.expect("every request dispatched")).collect()
    }
}
