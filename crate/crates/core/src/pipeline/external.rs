use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::protocol::{self, Expect, Handshake, Request, Response};
use super::{ListCandidate, ListwiseScorer, PairInput, PairScorer, ScorerError};

#[derive(Debug, Clone)]
pub struct ExternalScorerConfig {
    pub program: PathBuf,
    pub args: Vec<String>,
    /// Per-response deadline.
    pub timeout: Duration,
    /// Upper bound on candidates per listwise request.
    pub max_candidates: Option<usize>,
}

impl ExternalScorerConfig {
    pub fn new(program: impl Into<PathBuf>) -> Self {
        ExternalScorerConfig {
            program: program.into(),
            args: Vec::new(),
            timeout: Duration::from_secs(30),
            max_candidates: None,
        }
    }
}

/// A scorer child process. Speaks both pair and listwise requests; which
/// one the process actually answers is up to it.
pub struct ExternalScorer {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
    max_candidates: Option<usize>,
}

impl ExternalScorer {
    pub fn spawn(config: &ExternalScorerConfig) -> Result<Self, ScorerError> {
        let mut child = Command::new(&config.program)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(ScorerError::Spawn)?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("stdout is piped");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut scorer = ExternalScorer {
            child,
            stdin,
            lines: rx,
            timeout: config.timeout,
            max_candidates: config.max_candidates,
        };
        let reply = scorer.exchange(&protocol::encode(&Handshake::default()))?;
        protocol::check_handshake(&reply)?;
        Ok(scorer)
    }

    fn exchange(&mut self, line: &str) -> Result<String, ScorerError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| ScorerError::Transport("stdin closed".into()))?;
        writeln!(stdin, "{line}")
            .and_then(|_| stdin.flush())
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(l)) => Ok(l),
            Ok(Err(e)) => Err(ScorerError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(ScorerError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ScorerError::Transport("scorer closed its output".into())),
        }
    }

    /// Closes stdin and waits briefly for the child, killing it if needed.
    pub fn shutdown(&mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        loop {
            match self.child.try_wait() {
                Ok(Some(_)) => return,
                Ok(None) if Instant::now() < deadline => thread::sleep(Duration::from_millis(10)),
                _ => break,
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for ExternalScorer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

impl PairScorer for ExternalScorer {
    fn score(&mut self, inputs: &[PairInput]) -> Result<Vec<f64>, ScorerError> {
        inputs
            .iter()
            .map(|p| {
                let req = Request::Pair {
                    id: p.debunk_id.clone(),
                    query: p.query_text.clone(),
                    doc: p.doc_text.clone(),
                };
                let reply = self.exchange(&protocol::encode(&req))?;
                match protocol::validate_response(&reply, Expect::Pair { id: &p.debunk_id })? {
                    Response::Pair { score, .. } => Ok(score),
                    Response::Error(e) => Err(ScorerError::Remote(e)),
                    Response::List { .. } => unreachable!(),
                }
            })
            .collect()
    }
}

impl ListwiseScorer for ExternalScorer {
    fn order(&mut self, query: &str, candidates: &[ListCandidate]) -> Result<Vec<String>, ScorerError> {
        let req = Request::List {
            query: query.to_string(),
            candidates: candidates.to_vec(),
        };
        let reply = self.exchange(&protocol::encode(&req))?;
        match protocol::validate_response(&reply, Expect::List)? {
            Response::List { order } => Ok(order),
            Response::Error(e) => Err(ScorerError::Remote(e)),
            Response::Pair { .. } => unreachable!(),
        }
    }

    fn max_candidates(&self) -> Option<usize> {
        self.max_candidates
    }
}
