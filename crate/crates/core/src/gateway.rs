//! Uniform black-box interface over builtin functions, toolkit networks and
//! external processes.
//!
//! External processes speak line-delimited JSON on their standard streams:
//! one request `{"id": i, "features": [...]}` per line in, one response
//! `{"id": i, "y": v}` per line out. Responses may arrive in any order.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnkit::{Network, NetworkDocument, OutputActivation};
use crate::sampler::Instance;
use crate::synthbench::SyntheticFunction;

pub const DEFAULT_BATCH_LIMIT: usize = 1024;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Regression,
    Probability,
}

/// How instances become network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// Numeric values fed as-is.
    Dense,
    /// Token counts over a fixed vocabulary; unknown tokens are ignored.
    BagOfWords { vocabulary: Vec<String> },
}

impl Encoding {
    fn encode(&self, batch: &[Instance], p: usize) -> std::result::Result<Array2<f64>, String> {
        let mut x = Array2::zeros((batch.len(), p));
        for (i, inst) in batch.iter().enumerate() {
            match (self, inst) {
                (Encoding::BagOfWords { vocabulary }, Instance::TokenSequence { tokens }) => {
                    for t in tokens {
                        if let Some(j) = vocabulary.iter().position(|v| v == t) {
                            x[[i, j]] += 1.0;
                        }
                    }
                }
                (Encoding::Dense, other) => match other.values() {
                    Some(v) if v.len() == p => x.row_mut(i).assign(&ndarray::ArrayView1::from(v)),
                    Some(v) => return Err(format!("instance {i} has {} features, network expects {p}", v.len())),
                    None => return Err(format!("instance {i}: token input needs a bag-of-words network")),
                },
                (Encoding::BagOfWords { .. }, _) => {
                    return Err(format!("instance {i}: bag-of-words network expects tokens"))
                }
            }
        }
        Ok(x)
    }
}

/// On-disk network predictor: the nnkit document plus optional encoding and
/// head fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFile {
    #[serde(flatten)]
    pub network: NetworkDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<Head>,
}

/// Deep copy of a tunable predictor.
#[derive(Debug, Clone)]
pub struct PredictorSnapshot(NetworkFile);

impl PredictorSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("snapshot serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: NetworkFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("predictor snapshot: {e}")))?;
        // validate eagerly
        file.network.clone().into_network()?;
        Ok(PredictorSnapshot(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

enum Source {
    Builtin(SyntheticFunction),
    Network { net: Network, encoding: Encoding },
    External(ExternalProcess),
}

pub struct PredictorHandle {
    source: Source,
    head: Head,
    batch_limit: usize,
    queries: AtomicU64,
}

impl std::fmt::Debug for PredictorHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PredictorHandle")
            .field("source", &self.describe())
            .field("head", &self.head)
            .field("batch_limit", &self.batch_limit)
            .finish()
    }
}

impl PredictorHandle {
    pub fn builtin(function: SyntheticFunction) -> Self {
        Self::new(Source::Builtin(function), Head::Regression)
    }

    /// Network predictor; the head follows the output activation.
    pub fn network(net: Network, encoding: Encoding) -> Self {
        let head = match net.output_activation() {
            OutputActivation::Logistic => Head::Probability,
            OutputActivation::Identity => Head::Regression,
        };
        Self::new(Source::Network { net, encoding }, head)
    }

    /// Runs `command` through `sh -c`; the process is started on first use.
    pub fn external(command: impl Into<String>, head: Head) -> Self {
        Self::new(
            Source::External(ExternalProcess {
                command: command.into(),
                timeout: DEFAULT_TIMEOUT,
                running: Mutex::new(None),
            }),
            head,
        )
    }

    fn new(source: Source, head: Head) -> Self {
        PredictorHandle {
            source,
            head,
            batch_limit: DEFAULT_BATCH_LIMIT,
            queries: AtomicU64::new(0),
        }
    }

    /// Parses `builtin:ID`, `network:PATH` or `external:COMMAND`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let (kind, rest) = spec
            .split_once(':')
            .ok_or_else(|| Error::config(format!("predictor spec {spec:?} needs a kind prefix")))?;
        match kind {
            "builtin" => Ok(Self::builtin(SyntheticFunction::from_id(rest)?)),
            "network" => Self::load_network_file(Path::new(rest)),
            "external" if !rest.trim().is_empty() => Ok(Self::external(rest, Head::Regression)),
            _ => Err(Error::config(format!(
                "predictor spec {spec:?}: expected builtin:ID, network:PATH or external:COMMAND"
            ))),
        }
    }

    pub fn load_network_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: NetworkFile =
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Self::from_network_file(file)
    }

    fn from_network_file(file: NetworkFile) -> Result<Self> {
        let net = file.network.into_network()?;
        let encoding = match file.vocabulary {
            Some(vocabulary) => {
                if vocabulary.len() != net.input_size() {
                    return Err(Error::Format(format!(
                        "vocabulary has {} words, network expects {}",
                        vocabulary.len(),
                        net.input_size()
                    )));
                }
                Encoding::BagOfWords { vocabulary }
            }
            None => Encoding::Dense,
        };
        let mut h = Self::network(net, encoding);
        if let Some(head) = file.head {
            h.head = head;
        }
        Ok(h)
    }

    pub fn to_network_file(&self) -> Result<NetworkFile> {
        match &self.source {
            Source::Network { net, encoding } => Ok(NetworkFile {
                network: NetworkDocument::from(net),
                vocabulary: match encoding {
                    Encoding::BagOfWords { vocabulary } => Some(vocabulary.clone()),
                    Encoding::Dense => None,
                },
                head: Some(self.head),
            }),
            _ => Err(Error::Capability(format!("{} is not a network predictor", self.describe()))),
        }
    }

    pub fn save_network_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_network_file()?)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn with_batch_limit(mut self, limit: usize) -> Self {
        self.batch_limit = limit.max(1);
        self
    }

    pub fn with_head(mut self, head: Head) -> Self {
        self.head = head;
        self
    }

    /// Only meaningful for external sources.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        if let Source::External(p) = &mut self.source {
            p.timeout = timeout;
        }
        self
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    pub fn is_tunable(&self) -> bool {
        matches!(self.source, Source::Network { .. })
    }

    pub fn network_ref(&self) -> Option<&Network> {
        match &self.source {
            Source::Network { net, .. } => Some(net),
            _ => None,
        }
    }

    pub fn encoding(&self) -> Option<&Encoding> {
        match &self.source {
            Source::Network { encoding, .. } => Some(encoding),
            _ => None,
        }
    }

    pub fn builtin_function(&self) -> Option<&SyntheticFunction> {
        match &self.source {
            Source::Builtin(f) => Some(f),
            _ => None,
        }
    }

    /// New handle sharing this handle's encoding and head but using `net`.
    pub fn with_network(&self, net: Network) -> Result<Self> {
        match &self.source {
            Source::Network { encoding, .. } => {
                let mut h = Self::network(net, encoding.clone());
                h.head = self.head;
                h.batch_limit = self.batch_limit;
                Ok(h)
            }
            _ => Err(self.not_tunable()),
        }
    }

    pub fn describe(&self) -> String {
        match &self.source {
            Source::Builtin(f) => format!("builtin:{}", f.id()),
            Source::Network { net, .. } => format!("network:{:?}", net.layer_sizes()),
            Source::External(p) => format!("external:{}", p.command),
        }
    }

    /// Total instances sent to the predictor so far.
    pub fn queries(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn not_tunable(&self) -> Error {
        Error::Capability(format!(
            "{} is not tunable; only toolkit networks can be edited",
            self.describe()
        ))
    }

    pub fn snapshot(&self) -> Result<PredictorSnapshot> {
        if !self.is_tunable() {
            return Err(self.not_tunable());
        }
        Ok(PredictorSnapshot(self.to_network_file()?))
    }

    pub fn restore(snapshot: &PredictorSnapshot) -> Result<Self> {
        Self::from_network_file(snapshot.0.clone())
    }

    /// Whether `x` is an instance kind this source can evaluate.
    pub fn check_accepts(&self, x: &Instance) -> Result<()> {
        let expected = match &self.source {
            Source::External(_) => return Ok(()),
            Source::Network {
                encoding: Encoding::BagOfWords { .. },
                ..
            } => {
                return match x {
                    Instance::TokenSequence { .. } => Ok(()),
                    _ => Err(Error::config(format!(
                        "{} expects token sequences, got {:?}",
                        self.describe(),
                        x.kind()
                    ))),
                }
            }
            Source::Network { net, .. } => net.input_size(),
            Source::Builtin(f) => f.p(),
        };
        match x.values() {
            Some(v) if v.len() == expected => Ok(()),
            Some(v) => Err(Error::InputShape {
                expected,
                got: v.len(),
            }),
            None => Err(Error::config(format!(
                "{} expects numeric instances, got token sequences",
                self.describe()
            ))),
        }
    }

    /// Network inputs for `batch`; only network sources have an encoding.
    pub fn encode(&self, batch: &[Instance]) -> Result<Array2<f64>> {
        match &self.source {
            Source::Network { net, encoding } => encoding
                .encode(batch, net.input_size())
                .map_err(Error::config),
            _ => Err(self.not_tunable()),
        }
    }

    /// Order-preserving predictions; batches larger than the limit are
    /// split into chunks.
    pub fn predict_batch(&self, batch: &[Instance]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(batch.len());
        for (b, chunk) in batch.chunks(self.batch_limit).enumerate() {
            let first_id = b * self.batch_limit;
            let ys = self
                .predict_chunk(chunk, first_id)
                .map_err(|message| Error::Predictor { batch: b, message })?;
            if self.head == Head::Probability {
                if let Some(v) = ys.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Predictor {
                        batch: b,
                        message: format!("probability head returned {v}"),
                    });
                }
            }
            out.extend(ys);
        }
        self.queries.fetch_add(batch.len() as u64, Ordering::Relaxed);
        Ok(out)
    }

    fn predict_chunk(&self, chunk: &[Instance], first_id: usize) -> std::result::Result<Vec<f64>, String> {
        match &self.source {
            Source::Builtin(f) => chunk
                .iter()
                .map(|x| {
                    let v = x.values().ok_or("builtin functions need numeric instances")?;
                    f.eval(v).map_err(|e| e.to_string())
                })
                .collect(),
            Source::Network { net, encoding } => {
                let x = encoding.encode(chunk, net.input_size())?;
                net.forward(x.view()).map(|y| y.to_vec()).map_err(|e| e.to_string())
            }
            Source::External(p) => p.predict(chunk, first_id),
        }
    }
}

impl Clone for PredictorHandle {
    /// External sources get a fresh process of the same command.
    fn clone(&self) -> Self {
        let source = match &self.source {
            Source::Builtin(f) => Source::Builtin(f.clone()),
            Source::Network { net, encoding } => Source::Network {
                net: net.clone(),
                encoding: encoding.clone(),
            },
            Source::External(p) => Source::External(ExternalProcess {
                command: p.command.clone(),
                timeout: p.timeout,
                running: Mutex::new(None),
            }),
        };
        PredictorHandle {
            source,
            head: self.head,
            batch_limit: self.batch_limit,
            queries: AtomicU64::new(self.queries()),
        }
    }
}

struct ExternalProcess {
    command: String,
    timeout: Duration,
    running: Mutex<Option<Running>>,
}

struct Running {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Running {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Deserialize)]
struct Response {
    id: usize,
    y: f64,
}

fn excerpt(line: &str) -> String {
    const MAX: usize = 120;
    if line.chars().count() <= MAX {
        line.to_string()
    } else {
        format!("{}...", line.chars().take(MAX).collect::<String>())
    }
}

impl ExternalProcess {
    fn spawn(&self) -> std::result::Result<Running, String> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(&self.command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| format!("cannot start {:?}: {e}", self.command))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        log::debug!("started external predictor {:?}", self.command);
        Ok(Running {
            child,
            stdin,
            lines: rx,
        })
    }

    fn predict(&self, chunk: &[Instance], first_id: usize) -> std::result::Result<Vec<f64>, String> {
        let mut guard = self.running.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(self.spawn()?);
        }
        let result = Self::exchange(guard.as_mut().unwrap(), chunk, first_id, self.timeout);
        if result.is_err() {
            // a failed process is not reused
            *guard = None;
        }
        result
    }

    fn exchange(
        run: &mut Running,
        chunk: &[Instance],
        first_id: usize,
        timeout: Duration,
    ) -> std::result::Result<Vec<f64>, String> {
        let mut payload = String::new();
        for (i, x) in chunk.iter().enumerate() {
            let features = match x {
                Instance::TokenSequence { tokens } => serde_json::json!(tokens),
                other => serde_json::json!(other.values().unwrap()),
            };
            payload.push_str(&serde_json::json!({"id": first_id + i, "features": features}).to_string());
            payload.push('\n');
        }
        let stdin = run.stdin.as_mut().ok_or("process input closed")?;
        if let Err(e) = stdin.write_all(payload.as_bytes()).and_then(|_| stdin.flush()) {
            return Err(Self::exit_message(run).unwrap_or_else(|| format!("writing request failed: {e}")));
        }

        let mut ys: Vec<Option<f64>> = vec![None; chunk.len()];
        let deadline = Instant::now() + timeout;
        for _ in 0..chunk.len() {
            let remaining = deadline.saturating_duration_since(Instant::now());
            let line = match run.lines.recv_timeout(remaining) {
                Ok(Ok(line)) => line,
                Ok(Err(e)) => return Err(format!("reading response failed: {e}")),
                Err(RecvTimeoutError::Timeout) => {
                    return Err(format!("timed out after {:.1}s waiting for responses", timeout.as_secs_f64()))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Self::exit_message(run).unwrap_or_else(|| "process closed its output".into()))
                }
            };
            let resp: Response = serde_json::from_str(&line)
                .map_err(|e| format!("malformed response line {:?}: {e}", excerpt(&line)))?;
            let slot = resp
                .id
                .checked_sub(first_id)
                .and_then(|k| ys.get_mut(k))
                .ok_or_else(|| format!("unexpected id in response line {:?}", excerpt(&line)))?;
            if slot.replace(resp.y).is_some() {
                return Err(format!("duplicate id in response line {:?}", excerpt(&line)));
            }
        }
        Ok(ys.into_iter().map(|y| y.expect("every id answered")).collect())
    }

    fn exit_message(run: &mut Running) -> Option<String> {
        // give the process a moment to finish exiting
        for _ in 0..50 {
            if let Ok(Some(status)) = run.child.try_wait() {
                return Some(format!("process exited with {status}"));
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        None
    }
}
