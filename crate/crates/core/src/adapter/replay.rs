//! Recorded transcripts for offline runs.
//!
//! A replay file stores request/response line pairs. Lookup ignores the
//! request id: a request matches a recording with the same op and the same
//! batch, and the recorded response is returned with its id rewritten to the
//! live one. Replaying an identical request sequence therefore yields
//! byte-identical responses.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::protocol::{IncomingRequest, PROTOCOL_VERSION};
use super::{AdapterError, ModelChannel, Transport, TransportKind};
use crate::data::Matrix;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub request: String,
    pub response: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayFile {
    pub protocol: u32,
    pub exchanges: Vec<Exchange>,
}

impl ReplayFile {
    pub fn read(path: &Path) -> Result<Self, AdapterError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AdapterError::LaunchFailure(format!("{}: {e}", path.display())))?;
        let file: ReplayFile = serde_json::from_str(&text)
            .map_err(|e| AdapterError::LaunchFailure(format!("{}: {e}", path.display())))?;
        if file.protocol != PROTOCOL_VERSION {
            return Err(AdapterError::ProtocolVersionMismatch {
                expected: PROTOCOL_VERSION,
                got: file.protocol,
            });
        }
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<(), AdapterError> {
        let mut text = serde_json::to_string_pretty(self).expect("replay serializes");
        text.push('\n');
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| AdapterError::Io(e.to_string()))?;
        }
        fs::write(path, text).map_err(|e| AdapterError::Io(format!("{}: {e}", path.display())))
    }
}

fn request_key(line: &str) -> Result<(u64, String), AdapterError> {
    let req: IncomingRequest = serde_json::from_str(line)
        .map_err(|e| AdapterError::ProtocolViolation(format!("bad request line: {e}")))?;
    let data = serde_json::to_string(&req.data).expect("serializes");
    Ok((req.id, format!("{}:{data}", req.op.as_str())))
}

fn response_with_id(line: &str, id: u64) -> Result<String, AdapterError> {
    let mut value: serde_json::Value = serde_json::from_str(line)
        .map_err(|e| AdapterError::ProtocolViolation(format!("bad recorded response: {e}")))?;
    if value.get("id").and_then(|v| v.as_u64()) == Some(id) {
        return Ok(line.to_string());
    }
    value["id"] = id.into();
    Ok(serde_json::to_string(&value).expect("serializes"))
}

/// Serves recorded responses; unrecorded requests fail with `ReplayMiss`.
pub struct ReplayTransport {
    responses: HashMap<String, String>,
}

impl ReplayTransport {
    pub fn open(path: &Path) -> Result<Self, AdapterError> {
        Self::from_file(&ReplayFile::read(path)?)
    }

    pub fn from_file(file: &ReplayFile) -> Result<Self, AdapterError> {
        let mut responses = HashMap::new();
        for ex in &file.exchanges {
            let (_, key) = request_key(&ex.request)?;
            responses.entry(key).or_insert_with(|| ex.response.clone());
        }
        Ok(ReplayTransport { responses })
    }
}

impl Transport for ReplayTransport {
    fn exchange(&mut self, request: &str) -> Result<String, AdapterError> {
        let (id, key) = request_key(request)?;
        match self.responses.get(&key) {
            Some(line) => response_with_id(line, id),
            None => Err(AdapterError::ReplayMiss {
                op: key.split(':').next().unwrap_or_default().to_string(),
                id,
            }),
        }
    }

    fn kind(&self) -> TransportKind {
        TransportKind::Replay
    }
}

/// One request of a recording script.
#[derive(Clone, Debug, PartialEq)]
pub enum ScriptStep {
    Encode(Matrix),
    Decode(Matrix),
    Classify(Matrix),
}

/// Runs `script` against a live channel and returns the transcript,
/// including the channel's hello exchange.
pub fn record_replay(
    ch: &mut ModelChannel,
    script: &[ScriptStep],
) -> Result<ReplayFile, AdapterError> {
    ch.start_recording();
    let outcome = script.iter().try_for_each(|step| {
        match step {
            ScriptStep::Encode(m) => ch.encode(m).map(drop),
            ScriptStep::Decode(m) => ch.decode(m).map(drop),
            ScriptStep::Classify(m) => ch.classify(m).map(drop),
        }
    });
    let file = ch.take_recording().expect("recording was started");
    outcome.map(|_| file)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::server::LoopbackTransport;
    use crate::adapter::toy::ToyLinearModel;
    use crate::adapter::{handshake, AdapterDescriptor, ChannelOptions};

    fn live() -> ModelChannel {
        let model = ToyLinearModel::random(6, 3, 4, 11).unwrap();
        ModelChannel::connect(Box::new(LoopbackTransport::new(model)), ChannelOptions::default())
            .unwrap()
    }

    #[test]
    fn record_then_replay_serves_identical_responses() {
        let mut ch = live();
        let x = Matrix::from_rows(6, &[[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [1.0; 6]]).unwrap();
        let z = ch.encode(&x).unwrap();
        let script = vec![
            ScriptStep::Encode(x.clone()),
            ScriptStep::Decode(z.clone()),
            ScriptStep::Classify(z.clone()),
        ];
        let file = record_replay(&mut ch, &script).unwrap();
        assert_eq!(file.exchanges.len(), 4);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.json");
        file.write(&path).unwrap();
        let mut replay = handshake(&AdapterDescriptor::Replay(path)).unwrap();
        assert_eq!(replay.dims(), ch.dims());
        assert_eq!(replay.transport_kind(), TransportKind::Replay);
        assert_eq!(replay.encode(&x).unwrap(), ch.encode(&x).unwrap());
        assert_eq!(replay.decode(&z).unwrap(), ch.decode(&z).unwrap());
        assert_eq!(replay.classify(&z).unwrap(), ch.classify(&z).unwrap());
    }

    #[test]
    fn identical_sequence_gives_byte_identical_lines() {
        let mut ch = live();
        let x = Matrix::from_rows(6, &[[0.5; 6]]).unwrap();
        let file = record_replay(&mut ch, &[ScriptStep::Encode(x)]).unwrap();
        let mut t = ReplayTransport::from_file(&file).unwrap();
        for ex in &file.exchanges {
            assert_eq!(t.exchange(&ex.request).unwrap(), ex.response);
        }
    }

    #[test]
    fn unrecorded_request_misses() {
        let mut ch = live();
        let file = record_replay(&mut ch, &[]).unwrap();
        let mut replay =
            ModelChannel::connect(Box::new(ReplayTransport::from_file(&file).unwrap()), Default::default())
                .unwrap();
        let err = replay.encode(&Matrix::zeros(1, 6)).unwrap_err();
        assert!(matches!(err, AdapterError::ReplayMiss { ref op, id: 1 } if op == "encode"));
    }
}
