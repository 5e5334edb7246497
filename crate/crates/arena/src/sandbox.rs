//! Runs an external submission as a child process speaking the line protocol.
//!
//! The child starts in its own scratch directory with piped standard streams
//! and is killed when it exceeds the wall-clock limit. Isolation beyond that
//! is out of scope.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, Command, ExitStatus, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::protocol::{encode, ClientMessage, Failure, ServerMessage, Step};
use crate::records::{truncate_message, ErrorCategory};

#[derive(Debug, Clone)]
pub struct ProcessSpec {
    pub program: String,
    pub args: Vec<String>,
    /// Working directory, created if missing.
    pub scratch: PathBuf,
    pub timeout: Duration,
}

/// Bytes of standard error kept for the error message.
const STDERR_TAIL: usize = 2048;

fn resolve_program(program: &str) -> Result<PathBuf, Failure> {
    let path = Path::new(program);
    if path.components().count() > 1 {
        std::fs::canonicalize(path).map_err(|e| Failure::new(ErrorCategory::Crash, format!("cannot start {program:?}: {e}")))
    } else {
        Ok(path.to_path_buf())
    }
}

fn describe_status(status: ExitStatus) -> String {
    match status.code() {
        Some(code) => format!("exit status {code}"),
        None => format!("terminated by signal ({status})"),
    }
}

struct Running {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: mpsc::Receiver<std::io::Result<String>>,
    stderr: Arc<Mutex<Vec<u8>>>,
    deadline: Instant,
    timeout: Duration,
}

impl Running {
    fn start(spec: &ProcessSpec) -> Result<Self, Failure> {
        std::fs::create_dir_all(&spec.scratch)
            .map_err(|e| Failure::new(ErrorCategory::Crash, format!("cannot create scratch dir: {e}")))?;
        let program = resolve_program(&spec.program)?;
        let mut child = Command::new(&program)
            .args(&spec.args)
            .current_dir(&spec.scratch)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| Failure::new(ErrorCategory::Crash, format!("cannot start {:?}: {e}", spec.program)))?;

        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, lines) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        let stderr = Arc::new(Mutex::new(Vec::new()));
        let sink = stderr.clone();
        let mut err_pipe = child.stderr.take().expect("piped stderr");
        thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = err_pipe.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut tail = sink.lock().expect("stderr lock");
                tail.extend_from_slice(&buf[..n]);
                let excess = tail.len().saturating_sub(STDERR_TAIL);
                tail.drain(..excess);
            }
        });
        let stdin = child.stdin.take();
        Ok(Self { child, stdin, lines, stderr, deadline: Instant::now() + spec.timeout, timeout: spec.timeout })
    }

    fn stderr_tail(&self) -> String {
        String::from_utf8_lossy(&self.stderr.lock().expect("stderr lock")).trim().to_string()
    }

    fn send(&mut self, message: &ServerMessage) {
        // A write failure means the child is gone; the read side reports it.
        if let Some(stdin) = self.stdin.as_mut() {
            if stdin.write_all(encode(message).as_bytes()).and_then(|_| stdin.flush()).is_err() {
                self.stdin = None;
            }
        }
    }

    fn kill(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    fn with_stderr(&self, message: String) -> String {
        let tail = self.stderr_tail();
        let full = if tail.is_empty() { message } else { format!("{message}\nstderr:\n{tail}") };
        truncate_message(&full)
    }

    /// Waits for the child after end of output and classifies the exit.
    fn exited_without_result(&mut self) -> Failure {
        let remaining = self.deadline.saturating_duration_since(Instant::now());
        match wait_until(&mut self.child, remaining) {
            Some(status) if status.success() => {
                Failure::protocol(self.with_stderr("process exited without sending a result".into()))
            }
            Some(status) => {
                // Give the stderr reader a moment to drain.
                thread::sleep(Duration::from_millis(20));
                Failure::new(ErrorCategory::Crash, self.with_stderr(format!("process failed: {}", describe_status(status))))
            }
            None => {
                self.kill();
                self.timed_out()
            }
        }
    }

    fn timed_out(&self) -> Failure {
        Failure::new(
            ErrorCategory::Timeout,
            self.with_stderr(format!("process exceeded the {:.3} s time limit", self.timeout.as_secs_f64())),
        )
    }

    /// Serves requests until the child sends its result.
    fn serve<H>(&mut self, mut handle: H) -> Result<ClientMessage, Failure>
    where
        H: FnMut(&str) -> Result<Step, Failure>,
    {
        loop {
            let remaining = self.deadline.saturating_duration_since(Instant::now());
            match self.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    match handle(&line) {
                        Ok(Step::Reply(reply)) => self.send(&reply),
                        Ok(Step::Done(result)) => {
                            self.stdin = None;
                            let remaining = self.deadline.saturating_duration_since(Instant::now());
                            if wait_until(&mut self.child, remaining.min(Duration::from_secs(2))).is_none() {
                                self.kill();
                            }
                            return Ok(result);
                        }
                        Err(failure) => {
                            self.kill();
                            return Err(Failure { message: self.with_stderr(failure.message), ..failure });
                        }
                    }
                }
                Ok(Err(e)) => {
                    self.kill();
                    return Err(Failure::protocol(format!("unreadable output: {e}")));
                }
                Err(RecvTimeoutError::Timeout) => {
                    self.kill();
                    return Err(self.timed_out());
                }
                Err(RecvTimeoutError::Disconnected) => return Err(self.exited_without_result()),
            }
        }
    }
}

fn wait_until(child: &mut Child, limit: Duration) -> Option<ExitStatus> {
    let end = Instant::now() + limit;
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() >= end => return None,
            Ok(None) => thread::sleep(Duration::from_millis(5)),
            Err(_) => return None,
        }
    }
}

/// Sends `task` to a fresh child and answers its requests with `handle`
/// until it returns a result.
pub fn run_session<H>(spec: &ProcessSpec, task: &ServerMessage, handle: H) -> Result<ClientMessage, Failure>
where
    H: FnMut(&str) -> Result<Step, Failure>,
{
    let mut running = Running::start(spec)?;
    running.send(task);
    running.serve(handle)
}
