use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::error::{Error, Result};
use crate::window::Window;

pub const DEFAULT_TIMEOUT_SECS: f64 = 30.0;

#[derive(Serialize)]
struct Request<'a> {
    id: u64,
    windows: &'a [Vec<Vec<f64>>],
}

#[derive(Deserialize)]
struct Reply {
    id: u64,
    outputs: Vec<f64>,
}

struct Running {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<String>,
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Why a round trip failed before a reply line arrived.
enum Failure {
    Exited(String),
    Other(Error),
}

struct Worker {
    command: Vec<String>,
    env: BTreeMap<String, String>,
    running: Option<Running>,
}

impl Worker {
    fn start(&mut self) -> Result<&mut Running> {
        if self.running.is_none() {
            let (program, args) = self
                .command
                .split_first()
                .ok_or_else(|| Error::invalid("external predictor command is empty"))?;
            let mut child = Command::new(program)
                .args(args)
                .envs(&self.env)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Error::Predictor(format!("cannot start `{program}`: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            let (tx, rx) = mpsc::channel();
            thread::spawn(move || {
                for line in BufReader::new(stdout).lines() {
                    let Ok(line) = line else { break };
                    if tx.send(line).is_err() {
                        break;
                    }
                }
            });
            self.running = Some(Running { child, stdin, lines: rx });
        }
        Ok(self.running.as_mut().expect("just started"))
    }

    fn exchange(&mut self, line: &str, timeout: Duration) -> std::result::Result<String, Failure> {
        let running = self.start().map_err(Failure::Other)?;
        let sent = running
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| running.stdin.write_all(b"\n"))
            .and_then(|_| running.stdin.flush());
        if let Err(e) = sent {
            self.running = None;
            return Err(Failure::Exited(format!("write failed: {e}")));
        }
        match running.lines.recv_timeout(timeout) {
            Ok(reply) => Ok(reply),
            Err(RecvTimeoutError::Timeout) => {
                self.running = None;
                Err(Failure::Other(Error::Timeout(timeout)))
            }
            Err(RecvTimeoutError::Disconnected) => {
                let status = running.child.wait().map(|s| s.to_string()).unwrap_or_default();
                self.running = None;
                Err(Failure::Exited(format!("process exited ({status})")))
            }
        }
    }

    /// Sends one batch; a process that exits is restarted once before failing.
    fn round_trip(&mut self, id: u64, windows: &[Window], timeout: Duration) -> Result<Vec<f64>> {
        let rows: Vec<Vec<Vec<f64>>> = windows.iter().map(Window::to_rows).collect();
        let line = serde_json::to_string(&Request { id, windows: &rows })?;
        let reply = match self.exchange(&line, timeout) {
            Ok(r) => r,
            Err(Failure::Other(e)) => return Err(e),
            Err(Failure::Exited(_)) => match self.exchange(&line, timeout) {
                Ok(r) => r,
                Err(Failure::Other(e)) => return Err(e),
                Err(Failure::Exited(why)) => {
                    return Err(Error::Predictor(format!("external predictor failed after restart: {why}")))
                }
            },
        };
        let parsed: Reply = serde_json::from_str(&reply).map_err(|e| Error::Protocol {
            reason: format!("malformed reply: {e}"),
            line: reply.clone(),
        })?;
        if parsed.id != id {
            return Err(Error::Protocol {
                reason: format!("reply id {} does not match request id {id}", parsed.id),
                line: reply,
            });
        }
        if parsed.outputs.len() != windows.len() {
            return Err(Error::Protocol {
                reason: format!("expected {} outputs, got {}", windows.len(), parsed.outputs.len()),
                line: reply,
            });
        }
        Ok(parsed.outputs)
    }
}

/// A child process (or pool of them) answering line-delimited JSON requests
/// `{"id", "windows"}` with `{"id", "outputs"}`.
///
/// Batches are split into contiguous shards across workers and reassembled
/// in order. Each worker is a serial channel.
pub struct ExternalPredictor {
    workers: Vec<Mutex<Worker>>,
    timeout: Duration,
    next_id: AtomicU64,
}

impl ExternalPredictor {
    pub fn spawn(
        command: Vec<String>,
        env: BTreeMap<String, String>,
        timeout: Duration,
        workers: usize,
    ) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::invalid("external predictor command is empty"));
        }
        if workers == 0 {
            return Err(Error::invalid("external predictor needs at least one worker"));
        }
        if timeout.is_zero() {
            return Err(Error::invalid("external predictor timeout must be positive"));
        }
        let workers = (0..workers)
            .map(|_| {
                let mut w = Worker { command: command.clone(), env: env.clone(), running: None };
                w.start()?;
                Ok(Mutex::new(w))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { workers, timeout, next_id: AtomicU64::new(0) })
    }

    pub fn workers(&self) -> usize {
        self.workers.len()
    }

    fn call(&self, worker: &Mutex<Worker>, windows: &[Window]) -> Result<Vec<f64>> {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let mut guard = worker.lock().unwrap_or_else(|p| p.into_inner());
        guard.round_trip(id, windows, self.timeout)
    }
}

impl Predictor for ExternalPredictor {
    fn predict(&self, windows: &[Window]) -> Result<Vec<f64>> {
        if self.workers.len() == 1 || windows.len() < 2 {
            return self.call(&self.workers[0], windows);
        }
        let shard = windows.len().div_ceil(self.workers.len());
        let results: Vec<Result<Vec<f64>>> = thread::scope(|s| {
            let handles: Vec<_> = windows
                .chunks(shard)
                .zip(&self.workers)
                .map(|(chunk, worker)| s.spawn(move || self.call(worker, chunk)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap_or_else(|_| Err(Error::Predictor("worker thread panicked".into()))))
                .collect()
        });
        let mut out = Vec::with_capacity(windows.len());
        for r in results {
            out.extend(r?);
        }
        Ok(out)
    }

    fn concurrency_safe(&self) -> bool {
        false
    }
}
