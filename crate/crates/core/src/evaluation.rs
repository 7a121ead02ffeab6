//! Error providers for the upper-level search.
//!
//! [`SyntheticEvaluator`] is a closed-form surrogate for desk-scale runs.
//! [`ExternalEvaluator`] talks to trainer processes over a line-delimited
//! JSON protocol on their stdin/stdout:
//!
//! ```text
//! -> {"type":"hello","proto":1}
//! <- {"type":"ready","caps":[...]}
//! -> {"type":"eval","id":N,"genotype":"...","proxy":{"channels":C,"layers":L,"epochs":E},"dataset":"..."}
//! <- {"type":"result","id":N,"top1_error":x,"train_seconds":s}
//! <- {"type":"error","id":N,"reason":"..."}
//! ```

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::RwLock;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::complexity::MacroConfig;
use crate::genotype::{ArchitectureGenotype, Digest, OpCode, NUM_OPS};

pub const PROTOCOL_VERSION: u32 = 1;
/// Error assigned to failed evaluations so they stay in the budget.
pub const PENALTY_ERROR: f64 = 100.0;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(3600);
pub const DEFAULT_BATCH_WIDTH: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("handshake failed: {0}")]
    Handshake(String),
    #[error("worker transport broken: {0}")]
    Transport(String),
    #[error("could not start worker `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("invalid evaluator setup: {0}")]
    Config(String),
}

/// Down-scaled training setup sent with each request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProxyConfig {
    pub channels: usize,
    pub layers: usize,
    pub epochs: usize,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            channels: 36,
            layers: 14,
            epochs: 36,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub id: u64,
    pub genotype: ArchitectureGenotype,
    pub proxy: ProxyConfig,
    pub macro_config: MacroConfig,
    pub dataset: String,
}

impl EvalRequest {
    pub fn new(id: u64, genotype: ArchitectureGenotype) -> Self {
        Self {
            id,
            genotype,
            proxy: ProxyConfig::default(),
            macro_config: MacroConfig::default(),
            dataset: "cifar10".to_string(),
        }
    }

    pub fn to_message(&self) -> Message {
        Message::Eval {
            id: self.id,
            genotype: self.genotype.to_text(),
            proxy: self.proxy,
            dataset: self.dataset.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub id: u64,
    /// Present iff the status is `Ok`.
    pub top1_error: Option<f64>,
    pub train_seconds: f64,
    pub status: EvalStatus,
}

impl EvalResult {
    pub fn ok(id: u64, top1_error: f64, train_seconds: f64) -> Self {
        Self {
            id,
            top1_error: Some(top1_error.clamp(0.0, 100.0)),
            train_seconds: train_seconds.max(0.0),
            status: EvalStatus::Ok,
        }
    }

    pub fn failed(id: u64, reason: impl Into<String>) -> Self {
        Self {
            id,
            top1_error: None,
            train_seconds: 0.0,
            status: EvalStatus::Failed(reason.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == EvalStatus::Ok
    }

    /// Error to use as an objective: the measured one, or the penalty.
    pub fn objective_error(&self) -> f64 {
        self.top1_error.unwrap_or(PENALTY_ERROR)
    }
}

/// One protocol line. Unknown fields are ignored on input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        proto: u32,
    },
    Ready {
        #[serde(default)]
        caps: Vec<String>,
    },
    Eval {
        id: u64,
        genotype: String,
        proxy: ProxyConfig,
        dataset: String,
    },
    Result {
        id: u64,
        top1_error: f64,
        #[serde(default)]
        train_seconds: f64,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        reason: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages always serialize")
    }

    pub fn parse(line: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(line.trim())
    }
}

/// Per-op quality scores and the error curve of the synthetic surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateSpec {
    /// Indexed by op code.
    pub q_op: [f64; NUM_OPS],
    /// Bonus per loose node of the normal block.
    pub beta: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub q0: f64,
    pub sigma: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        let mut q_op = [0.0; NUM_OPS];
        for op in OpCode::ALL {
            q_op[op.index() as usize] = match op {
                OpCode::Identity => 0.0,
                OpCode::MaxPool3x3 | OpCode::AvgPool3x3 => 0.10,
                OpCode::SqueezeExcite => 0.40,
                OpCode::Lbc3x3 => 0.30,
                OpCode::Lbc5x5 => 0.35,
                OpCode::DilConv3x3 => 0.50,
                OpCode::DilConv5x5 => 0.60,
                OpCode::SepConv3x3 => 0.70,
                OpCode::SepConv5x5 => 0.80,
                OpCode::SepConv7x7 => 0.85,
                OpCode::Conv1x7_7x1 => 0.75,
            };
        }
        Self {
            q_op,
            beta: 0.2,
            e_min: 5.0,
            e_max: 70.0,
            q0: 4.0,
            sigma: 0.0,
        }
    }
}

impl SurrogateSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        if !(self.e_min < self.e_max) {
            return Err(EvalError::Config(format!(
                "e_min ({}) must be below e_max ({})",
                self.e_min, self.e_max
            )));
        }
        if !(self.q0 > 0.0) || self.sigma < 0.0 {
            return Err(EvalError::Config("q0 must be positive and sigma non-negative".into()));
        }
        Ok(())
    }

    pub fn quality(&self, g: &ArchitectureGenotype) -> f64 {
        let ops: f64 = g
            .blocks()
            .iter()
            .flat_map(|b| b.ops())
            .map(|op| self.q_op[op as usize])
            .sum();
        ops + self.beta * g.normal.loose_nodes().len() as f64
    }
}

/// Surrogate top-1 error in percent. Pure in `(g, spec, seed)`; the noise
/// stream is keyed by the genotype digest.
pub fn synthetic_eval(g: &ArchitectureGenotype, spec: &SurrogateSpec, seed: u64) -> f64 {
    let q = spec.quality(g);
    let mut err = spec.e_min + (spec.e_max - spec.e_min) * (-q / spec.q0).exp();
    if spec.sigma > 0.0 {
        let Digest(bytes) = g.digest();
        let mut key = [0u8; 32];
        key[..16].copy_from_slice(&bytes);
        key[16..24].copy_from_slice(&seed.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        err += Normal::new(0.0, spec.sigma).expect("sigma validated").sample(&mut rng);
    }
    err.clamp(0.0, 100.0)
}

/// Batch evaluation backend. Results come back in request order.
pub trait Evaluator: Send {
    fn evaluate(&mut self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>, EvalError>;

    fn describe(&self) -> String;
}

#[derive(Debug, Clone)]
pub struct SyntheticEvaluator {
    pub spec: SurrogateSpec,
    pub seed: u64,
    pub width: usize,
}

impl SyntheticEvaluator {
    pub fn new(spec: SurrogateSpec, seed: u64) -> Self {
        Self {
            spec,
            seed,
            width: 1,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width.max(1);
        self
    }

    fn one(&self, r: &EvalRequest) -> EvalResult {
        EvalResult::ok(r.id, synthetic_eval(&r.genotype, &self.spec, self.seed), 0.0)
    }
}

impl Evaluator for SyntheticEvaluator {
    fn evaluate(&mut self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>, EvalError> {
        if self.width <= 1 || requests.len() < 2 {
            return Ok(requests.iter().map(|r| self.one(r)).collect());
        }
        let chunk = requests.len().div_ceil(self.width);
        let this = &*self;
        let out = std::thread::scope(|s| {
            let handles: Vec<_> = requests
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|r| this.one(r)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("surrogate worker panicked"))
                .collect()
        });
        Ok(out)
    }

    fn describe(&self) -> String {
        "synthetic".to_string()
    }
}

/// A bidirectional line channel to one worker.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), EvalError>;

    /// Next line, or `Ok(None)` if nothing arrived within `timeout`.
    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, EvalError>;
}

/// Worker subprocess launched through `sh -c`.
pub struct ProcessTransport {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl ProcessTransport {
    pub fn spawn(command: &str) -> Result<Self, EvalError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| EvalError::Spawn {
                command: command.to_string(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            child,
            stdin,
            lines: rx,
        })
    }
}

impl Transport for ProcessTransport {
    fn send_line(&mut self, line: &str) -> Result<(), EvalError> {
        writeln!(self.stdin, "{line}")
            .and_then(|_| self.stdin.flush())
            .map_err(|e| EvalError::Transport(e.to_string()))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, EvalError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(Some(line)),
            Ok(Err(e)) => Err(EvalError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(EvalError::Transport("worker closed its output".into())),
        }
    }
}

impl Drop for ProcessTransport {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-process transport backed by channels, for fixtures and tests.
pub struct ChannelTransport {
    pub to_worker: mpsc::Sender<String>,
    pub from_worker: Receiver<String>,
}

impl ChannelTransport {
    /// Runs `worker` on its own thread, feeding it request lines and
    /// forwarding whatever it writes back.
    pub fn spawn<F>(worker: F) -> Self
    where
        F: FnOnce(Receiver<String>, mpsc::Sender<String>) + Send + 'static,
    {
        let (req_tx, req_rx) = mpsc::channel();
        let (resp_tx, resp_rx) = mpsc::channel();
        std::thread::spawn(move || worker(req_rx, resp_tx));
        Self {
            to_worker: req_tx,
            from_worker: resp_rx,
        }
    }
}

impl Transport for ChannelTransport {
    fn send_line(&mut self, line: &str) -> Result<(), EvalError> {
        self.to_worker
            .send(line.to_string())
            .map_err(|_| EvalError::Transport("worker hung up".into()))
    }

    fn recv_line(&mut self, timeout: Duration) -> Result<Option<String>, EvalError> {
        match self.from_worker.recv_timeout(timeout) {
            Ok(line) => Ok(Some(line)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(EvalError::Transport("worker closed its output".into())),
        }
    }
}

/// A worker that completed the handshake.
pub struct WorkerClient {
    transport: Box<dyn Transport>,
    pub caps: Vec<String>,
}

impl WorkerClient {
    pub fn connect(mut transport: Box<dyn Transport>, timeout: Duration) -> Result<Self, EvalError> {
        transport.send_line(&Message::Hello { proto: PROTOCOL_VERSION }.to_line())?;
        loop {
            let line = transport
                .recv_line(timeout)?
                .ok_or_else(|| EvalError::Handshake("no ready message before timeout".into()))?;
            match Message::parse(&line) {
                Ok(Message::Ready { caps }) => return Ok(Self { transport, caps }),
                Ok(other) => {
                    return Err(EvalError::Handshake(format!("expected ready, got {}", other.to_line())));
                }
                Err(_) => continue,
            }
        }
    }

    /// Sends every request, then collects replies by id. Each wait for the
    /// next reply is bounded by `timeout`; ids still pending when it lapses
    /// fail with `timeout`. Lines that are not protocol messages, and
    /// replies for ids not in the batch, are skipped.
    pub fn run_batch(&mut self, batch: &[EvalRequest], timeout: Duration) -> Result<Vec<EvalResult>, EvalError> {
        for r in batch {
            self.transport.send_line(&r.to_message().to_line())?;
        }
        let mut pending: HashSet<u64> = batch.iter().map(|r| r.id).collect();
        let mut done: HashMap<u64, EvalResult> = HashMap::new();
        while !pending.is_empty() {
            let Some(line) = self.transport.recv_line(timeout)? else {
                break;
            };
            let result = match Message::parse(&line) {
                Ok(Message::Result {
                    id,
                    top1_error,
                    train_seconds,
                }) if top1_error.is_finite() => EvalResult::ok(id, top1_error, train_seconds),
                Ok(Message::Result { id, .. }) => EvalResult::failed(id, "non-finite error"),
                Ok(Message::Error { id: Some(id), reason }) => EvalResult::failed(id, reason),
                _ => continue,
            };
            if pending.remove(&result.id) {
                done.insert(result.id, result);
            }
        }
        Ok(batch
            .iter()
            .map(|r| done.remove(&r.id).unwrap_or_else(|| EvalResult::failed(r.id, "timeout")))
            .collect())
    }
}

/// Round-robin client over one or more trainer workers.
pub struct ExternalEvaluator {
    workers: Vec<WorkerClient>,
    pub timeout: Duration,
    label: String,
}

impl ExternalEvaluator {
    pub fn new(workers: Vec<WorkerClient>, timeout: Duration, label: impl Into<String>) -> Result<Self, EvalError> {
        if workers.is_empty() {
            return Err(EvalError::Config("at least one worker is required".into()));
        }
        Ok(Self {
            workers,
            timeout,
            label: label.into(),
        })
    }

    /// Starts `count` copies of `command` and handshakes with each.
    pub fn spawn(command: &str, count: usize, timeout: Duration) -> Result<Self, EvalError> {
        let workers = (0..count.max(1))
            .map(|_| {
                let t = ProcessTransport::spawn(command)?;
                WorkerClient::connect(Box::new(t), timeout)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(workers, timeout, format!("external:{command}"))
    }
}

/// Splits `batch` round-robin across `workers`, runs them concurrently and
/// returns results in request order.
pub fn external_eval(
    batch: &[EvalRequest],
    workers: &mut [WorkerClient],
    timeout: Duration,
) -> Result<Vec<EvalResult>, EvalError> {
    let n = workers.len();
    if n == 0 {
        return Err(EvalError::Config("no workers".into()));
    }
    let shares: Vec<Vec<EvalRequest>> = (0..n)
        .map(|w| batch.iter().skip(w).step_by(n).cloned().collect())
        .collect();
    let per_worker: Vec<Result<Vec<EvalResult>, EvalError>> = std::thread::scope(|s| {
        let handles: Vec<_> = workers
            .iter_mut()
            .zip(&shares)
            .map(|(w, share)| s.spawn(move || w.run_batch(share, timeout)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker thread panicked"))
            .collect()
    });
    let mut by_id: HashMap<u64, EvalResult> = HashMap::new();
    for r in per_worker {
        for res in r? {
            by_id.insert(res.id, res);
        }
    }
    Ok(batch
        .iter()
        .map(|r| by_id.remove(&r.id).expect("every request answered"))
        .collect())
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&mut self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>, EvalError> {
        external_eval(requests, &mut self.workers, self.timeout)
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Successful errors keyed by genotype digest.
#[derive(Debug, Default)]
pub struct EvalCache {
    entries: RwLock<HashMap<Digest, f64>>,
}

impl EvalCache {
    pub fn get(&self, d: &Digest) -> Option<f64> {
        self.entries.read().expect("cache lock").get(d).copied()
    }

    pub fn insert(&self, d: Digest, error: f64) {
        self.entries.write().expect("cache lock").insert(d, error);
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Wraps a backend so each digest reaches it at most once after success.
pub struct CachedEvaluator<E> {
    pub backend: E,
    pub cache: EvalCache,
    /// Requests forwarded to the backend.
    pub backend_calls: usize,
}

impl<E: Evaluator> CachedEvaluator<E> {
    pub fn new(backend: E) -> Self {
        Self {
            backend,
            cache: EvalCache::default(),
            backend_calls: 0,
        }
    }
}

impl<E: Evaluator> Evaluator for CachedEvaluator<E> {
    fn evaluate(&mut self, requests: &[EvalRequest]) -> Result<Vec<EvalResult>, EvalError> {
        let mut out: Vec<Option<EvalResult>> = vec![None; requests.len()];
        let mut misses = Vec::new();
        let mut miss_slots = Vec::new();
        let mut queued: HashSet<Digest> = HashSet::new();
        for (i, r) in requests.iter().enumerate() {
            let d = r.genotype.digest();
            match self.cache.get(&d) {
                Some(err) => out[i] = Some(EvalResult::ok(r.id, err, 0.0)),
                None => {
                    queued.insert(d);
                    misses.push(r.clone());
                    miss_slots.push(i);
                }
            }
        }
        if !misses.is_empty() {
            self.backend_calls += misses.len();
            let results = self.backend.evaluate(&misses)?;
            for ((slot, req), res) in miss_slots.into_iter().zip(&misses).zip(results) {
                if let Some(err) = res.top1_error.filter(|_| res.is_ok()) {
                    self.cache.insert(req.genotype.digest(), err);
                }
                out[slot] = Some(res);
            }
        }
        Ok(out.into_iter().map(|r| r.expect("all slots filled")).collect())
    }

    fn describe(&self) -> String {
        self.backend.describe()
    }
}
