//! Reaching the model under test.
//!
//! A [`ModelChannel`] wraps a [`Transport`] that exchanges single protocol
//! lines. The channel owns request ids, 256-row chunking, dimension and
//! finiteness checks, the optional transcript trace, and recording.
//! Transports:
//!
//! * [`subprocess::SubprocessTransport`]: an external adapter process
//! * [`replay::ReplayTransport`]: serves a recorded transcript offline
//! * [`server::LoopbackTransport`]: an in-process [`server::AdapterModel`]
//!   driven through the same wire encoding

pub mod protocol;
pub mod replay;
pub mod server;
pub mod subprocess;
pub mod toy;

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use protocol::{request_line, Hello, Op, RawResponse, PROTOCOL_VERSION};
pub use replay::{record_replay, Exchange, ReplayFile, ScriptStep};

/// Environment variable naming a file that receives the protocol transcript.
pub const TRACE_ENV: &str = "PROTOSCORE_PROTOCOL_TRACE";

pub const DEFAULT_CHUNK_ROWS: usize = 256;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("failed to launch adapter: {0}")]
    LaunchFailure(String),
    #[error("adapter speaks protocol {got}, engine speaks {expected}")]
    ProtocolVersionMismatch { expected: u32, got: u32 },
    #[error("malformed hello: {0}")]
    MalformedHello(String),
    #[error("adapter crashed: {0}")]
    AdapterCrash(String),
    #[error("{op}: expected width {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{op}: non-finite value in response at row {row}, column {col}")]
    NonFiniteResponse {
        op: &'static str,
        row: usize,
        col: usize,
    },
    #[error("{op}: non-finite value in request at row {row}")]
    NonFiniteRequest { op: &'static str, row: usize },
    #[error("classify returned label {label} outside [0, {num_classes})")]
    LabelOutOfRange { label: i64, num_classes: usize },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("adapter error {code}: {message}")]
    Remote { code: String, message: String },
    #[error("no recorded response for {op} request {id}")]
    ReplayMiss { op: String, id: u64 },
    #[error("adapter did not answer within {0:?}")]
    Timeout(Duration),
    #[error("{0}: repeated request produced a different response")]
    NonDeterministic(&'static str),
    #[error("i/o error: {0}")]
    Io(String),
}

/// How to reach an adapter.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterDescriptor {
    /// Program plus arguments, launched with piped stdin/stdout.
    Command(Vec<String>),
    /// A recorded transcript.
    Replay(PathBuf),
}

impl AdapterDescriptor {
    /// Splits a shell-style command line (`python adapter.py --model m`).
    pub fn command_line(line: &str) -> Result<Self, AdapterError> {
        match shlex::split(line) {
            Some(words) if !words.is_empty() => Ok(AdapterDescriptor::Command(words)),
            _ => Err(AdapterError::LaunchFailure(format!(
                "cannot parse adapter command `{line}`"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Subprocess,
    Replay,
    Loopback,
}

/// One request line in, one response line out.
pub trait Transport: Send {
    fn exchange(&mut self, request: &str) -> Result<String, AdapterError>;
    fn kind(&self) -> TransportKind;
    /// Called once after a shutdown request has been answered (or failed).
    fn close(&mut self) {}
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelOptions {
    pub chunk_rows: usize,
    pub timeout: Duration,
    /// Re-issue every request and require an identical response.
    pub strict: bool,
}

impl Default for ChannelOptions {
    fn default() -> Self {
        ChannelOptions {
            chunk_rows: DEFAULT_CHUNK_ROWS,
            timeout: DEFAULT_TIMEOUT,
            strict: false,
        }
    }
}

/// Model dimensions announced at handshake.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelDims {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
}

/// Encoder, decoder and classifier of one model, behind a transport.
///
/// One request is in flight at a time; the channel is `Send` but not
/// shareable, so concurrent use needs one channel per thread.
pub struct ModelChannel {
    transport: Box<dyn Transport>,
    dims: ChannelDims,
    options: ChannelOptions,
    next_id: u64,
    hello: Exchange,
    trace: Option<File>,
    recording: Option<Vec<Exchange>>,
    closed: bool,
}

impl std::fmt::Debug for ModelChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelChannel")
            .field("dims", &self.dims)
            .field("transport", &self.transport.kind())
            .field("next_id", &self.next_id)
            .finish()
    }
}

/// Opens the transport named by `launch` and performs the hello exchange.
pub fn handshake(launch: &AdapterDescriptor) -> Result<ModelChannel, AdapterError> {
    handshake_with(launch, ChannelOptions::default())
}

pub fn handshake_with(
    launch: &AdapterDescriptor,
    options: ChannelOptions,
) -> Result<ModelChannel, AdapterError> {
    let transport: Box<dyn Transport> = match launch {
        AdapterDescriptor::Command(argv) => {
            Box::new(subprocess::SubprocessTransport::spawn(argv, options.timeout)?)
        }
        AdapterDescriptor::Replay(path) => Box::new(replay::ReplayTransport::open(path)?),
    };
    ModelChannel::connect(transport, options)
}

fn open_trace() -> Option<File> {
    let path = std::env::var_os(TRACE_ENV)?;
    OpenOptions::new().create(true).append(true).open(path).ok()
}

impl ModelChannel {
    /// Runs the hello exchange over an already-open transport.
    pub fn connect(
        mut transport: Box<dyn Transport>,
        options: ChannelOptions,
    ) -> Result<ModelChannel, AdapterError> {
        let mut trace = open_trace();
        let request = request_line(0, Op::Hello, None);
        trace_line(&mut trace, '>', &request);
        let response = transport.exchange(&request)?;
        trace_line(&mut trace, '<', &response);
        let raw: RawResponse = serde_json::from_str(&response)
            .map_err(|e| AdapterError::MalformedHello(e.to_string()))?;
        if raw.id != Some(0) {
            return Err(AdapterError::MalformedHello(format!(
                "expected id 0, got {:?}",
                raw.id
            )));
        }
        if let Some(err) = raw.error {
            return Err(AdapterError::MalformedHello(format!(
                "{}: {}",
                err.code, err.message
            )));
        }
        let result = raw
            .result
            .ok_or_else(|| AdapterError::MalformedHello("missing result".into()))?;
        let hello: Hello = serde_json::from_value(result)
            .map_err(|e| AdapterError::MalformedHello(e.to_string()))?;
        if hello.protocol != PROTOCOL_VERSION {
            return Err(AdapterError::ProtocolVersionMismatch {
                expected: PROTOCOL_VERSION,
                got: hello.protocol,
            });
        }
        if hello.input_dim == 0 || hello.latent_dim == 0 || hello.num_classes == 0 {
            return Err(AdapterError::MalformedHello(
                "dimensions must be positive".into(),
            ));
        }
        Ok(ModelChannel {
            transport,
            dims: ChannelDims {
                input_dim: hello.input_dim,
                latent_dim: hello.latent_dim,
                num_classes: hello.num_classes,
            },
            options: ChannelOptions {
                chunk_rows: options.chunk_rows.max(1),
                ..options
            },
            next_id: 1,
            hello: Exchange { request, response },
            trace,
            recording: None,
            closed: false,
        })
    }

    pub fn dims(&self) -> ChannelDims {
        self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.latent_dim
    }

    pub fn num_classes(&self) -> usize {
        self.dims.num_classes
    }

    pub fn transport_kind(&self) -> TransportKind {
        self.transport.kind()
    }

    /// Starts capturing exchanges; the hello exchange is always included.
    pub fn start_recording(&mut self) {
        self.recording = Some(vec![self.hello.clone()]);
    }

    /// Stops capturing and returns the transcript so far.
    pub fn take_recording(&mut self) -> Option<ReplayFile> {
        self.recording.take().map(|exchanges| ReplayFile {
            protocol: PROTOCOL_VERSION,
            exchanges,
        })
    }

    /// Maps input rows `x` to latent rows `f(x)`.
    pub fn encode(&mut self, batch: &Matrix) -> Result<Matrix, AdapterError> {
        self.vector_op(Op::Encode, batch, self.dims.input_dim, self.dims.latent_dim)
    }

    /// Maps latent rows `z` back to input rows `g(z)`.
    pub fn decode(&mut self, batch: &Matrix) -> Result<Matrix, AdapterError> {
        self.vector_op(Op::Decode, batch, self.dims.latent_dim, self.dims.input_dim)
    }

    /// Predicted class label `h(z)` for each latent row.
    pub fn classify(&mut self, batch: &Matrix) -> Result<Vec<usize>, AdapterError> {
        check_request(Op::Classify, batch, self.dims.latent_dim)?;
        let mut labels = Vec::with_capacity(batch.nrows());
        for start in (0..batch.nrows()).step_by(self.options.chunk_rows) {
            let end = (start + self.options.chunk_rows).min(batch.nrows());
            let chunk = batch.slice_rows(start, end);
            let result = self.call(Op::Classify, &chunk)?;
            labels.extend(parse_labels(&result, chunk.nrows(), self.dims.num_classes)?);
        }
        Ok(labels)
    }

    /// Sends a shutdown request and closes the transport.
    pub fn shutdown(mut self) -> Result<(), AdapterError> {
        self.close_inner()
    }

    fn close_inner(&mut self) -> Result<(), AdapterError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        let id = self.next_id;
        self.next_id += 1;
        let request = request_line(id, Op::Shutdown, None);
        trace_line(&mut self.trace, '>', &request);
        let outcome = match self.transport.kind() {
            // replays need not contain the shutdown exchange
            TransportKind::Replay => Ok(()),
            _ => self.transport.exchange(&request).map(|resp| {
                trace_line(&mut self.trace, '<', &resp);
            }),
        };
        self.transport.close();
        outcome
    }

    fn vector_op(
        &mut self,
        op: Op,
        batch: &Matrix,
        in_dim: usize,
        out_dim: usize,
    ) -> Result<Matrix, AdapterError> {
        check_request(op, batch, in_dim)?;
        let mut out = Matrix::zeros(0, out_dim);
        for start in (0..batch.nrows()).step_by(self.options.chunk_rows) {
            let end = (start + self.options.chunk_rows).min(batch.nrows());
            let chunk = batch.slice_rows(start, end);
            let result = self.call(op, &chunk)?;
            let part = parse_matrix(op, &result, chunk.nrows(), out_dim)?;
            out.append(&part).expect("widths checked");
        }
        Ok(out)
    }

    fn call(&mut self, op: Op, chunk: &Matrix) -> Result<serde_json::Value, AdapterError> {
        let first = self.call_once(op, chunk)?;
        if self.options.strict {
            let second = self.call_once(op, chunk)?;
            if first != second {
                return Err(AdapterError::NonDeterministic(op.as_str()));
            }
        }
        Ok(first)
    }

    fn call_once(&mut self, op: Op, chunk: &Matrix) -> Result<serde_json::Value, AdapterError> {
        if self.closed {
            return Err(AdapterError::ProtocolViolation("channel is shut down".into()));
        }
        let id = self.next_id;
        self.next_id += 1;
        let request = request_line(id, op, Some(chunk));
        trace_line(&mut self.trace, '>', &request);
        let response = self.transport.exchange(&request)?;
        trace_line(&mut self.trace, '<', &response);
        if let Some(rec) = &mut self.recording {
            rec.push(Exchange {
                request,
                response: response.clone(),
            });
        }
        let raw: RawResponse = serde_json::from_str(&response).map_err(|e| {
            AdapterError::ProtocolViolation(format!("unparseable response to {id}: {e}"))
        })?;
        if raw.id != Some(id) {
            return Err(AdapterError::ProtocolViolation(format!(
                "expected response id {id}, got {:?}",
                raw.id
            )));
        }
        if let Some(err) = raw.error {
            return Err(AdapterError::Remote {
                code: err.code,
                message: err.message,
            });
        }
        raw.result
            .ok_or_else(|| AdapterError::ProtocolViolation(format!("response {id} has no result")))
    }
}

impl Drop for ModelChannel {
    fn drop(&mut self) {
        let _ = self.close_inner();
    }
}

fn trace_line(trace: &mut Option<File>, dir: char, line: &str) {
    if let Some(f) = trace {
        let _ = writeln!(f, "{dir} {line}");
    }
}

fn check_request(op: Op, batch: &Matrix, width: usize) -> Result<(), AdapterError> {
    if batch.ncols() != width {
        return Err(AdapterError::DimensionMismatch {
            op: op.as_str(),
            expected: width,
            got: batch.ncols(),
        });
    }
    if let Some((row, _)) = batch.first_non_finite() {
        return Err(AdapterError::NonFiniteRequest {
            op: op.as_str(),
            row,
        });
    }
    Ok(())
}

fn parse_matrix(
    op: Op,
    value: &serde_json::Value,
    rows: usize,
    cols: usize,
) -> Result<Matrix, AdapterError> {
    let violation = |msg: String| AdapterError::ProtocolViolation(format!("{}: {msg}", op.as_str()));
    let outer = value
        .as_array()
        .ok_or_else(|| violation("result is not an array".into()))?;
    if outer.len() != rows {
        return Err(violation(format!("{} rows for {rows} requested", outer.len())));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for (i, row) in outer.iter().enumerate() {
        let row = row
            .as_array()
            .ok_or_else(|| violation(format!("row {i} is not an array")))?;
        if row.len() != cols {
            return Err(AdapterError::DimensionMismatch {
                op: op.as_str(),
                expected: cols,
                got: row.len(),
            });
        }
        for (j, v) in row.iter().enumerate() {
            match v.as_f64() {
                Some(x) if x.is_finite() => data.push(x),
                _ => {
                    return Err(AdapterError::NonFiniteResponse {
                        op: op.as_str(),
                        row: i,
                        col: j,
                    })
                }
            }
        }
    }
    Ok(Matrix::new(rows, cols, data).expect("sized above"))
}

fn parse_labels(
    value: &serde_json::Value,
    rows: usize,
    num_classes: usize,
) -> Result<Vec<usize>, AdapterError> {
    let arr = value
        .as_array()
        .ok_or_else(|| AdapterError::ProtocolViolation("classify: result is not an array".into()))?;
    if arr.len() != rows {
        return Err(AdapterError::ProtocolViolation(format!(
            "classify: {} labels for {rows} rows",
            arr.len()
        )));
    }
    arr.iter()
        .map(|v| {
            let label = v.as_i64().ok_or_else(|| {
                AdapterError::ProtocolViolation(format!("classify: `{v}` is not an integer"))
            })?;
            if label < 0 || label as usize >= num_classes {
                return Err(AdapterError::LabelOutOfRange { label, num_classes });
            }
            Ok(label as usize)
        })
        .collect()
}

/// Writes a replay file as pretty JSON.
pub fn write_replay(replay: &ReplayFile, path: &Path) -> Result<(), AdapterError> {
    replay.write(path)
}
