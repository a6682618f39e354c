//! Wire messages: one UTF-8 JSON object per line.
//!
//! ```text
//! > {"id":0,"op":"hello"}
//! < {"id":0,"result":{"input_dim":4,"latent_dim":2,"num_classes":2,"protocol":1}}
//! > {"id":1,"op":"encode","data":[[0.1,0.2,0.3,0.4]]}
//! < {"id":1,"result":[[0.5,-0.25]]}
//! > {"id":2,"op":"classify","data":[[0.5,-0.25]]}
//! < {"id":2,"result":[1]}
//! < {"id":3,"error":{"code":"bad_request","message":"..."}}
//! ```

use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Hello,
    Encode,
    Decode,
    Classify,
    Shutdown,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Hello => "hello",
            Op::Encode => "encode",
            Op::Decode => "decode",
            Op::Classify => "classify",
            Op::Shutdown => "shutdown",
        }
    }
}

/// Borrowed batch that serializes as an array of row arrays.
pub struct Batch<'a>(pub &'a Matrix);

impl Serialize for Batch<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(self.0.nrows()))?;
        for row in self.0.rows() {
            seq.serialize_element(row)?;
        }
        seq.end()
    }
}

#[derive(Serialize)]
struct OutgoingRequest<'a> {
    id: u64,
    op: Op,
    #[serde(skip_serializing_if = "Option::is_none")]
    data: Option<Batch<'a>>,
}

/// Serializes a request line (without the trailing newline).
pub fn request_line(id: u64, op: Op, data: Option<&Matrix>) -> String {
    serde_json::to_string(&OutgoingRequest {
        id,
        op,
        data: data.map(Batch),
    })
    .expect("request serializes")
}

/// A request as seen by a server.
#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct IncomingRequest {
    pub id: u64,
    pub op: Op,
    #[serde(default)]
    pub data: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub num_classes: usize,
    pub protocol: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// A response line, with `result` left undecoded until the op is known.
#[derive(Debug, Deserialize)]
pub struct RawResponse {
    pub id: Option<u64>,
    #[serde(default)]
    pub result: Option<serde_json::Value>,
    #[serde(default)]
    pub error: Option<ErrorBody>,
}

#[derive(Serialize)]
struct OkResponse<'a, T: Serialize> {
    id: u64,
    result: &'a T,
}

#[derive(Serialize)]
struct ErrResponse<'a> {
    id: Option<u64>,
    error: &'a ErrorBody,
}

pub fn ok_line<T: Serialize>(id: u64, result: &T) -> String {
    serde_json::to_string(&OkResponse { id, result }).expect("response serializes")
}

pub fn error_line(id: Option<u64>, code: &str, message: &str) -> String {
    serde_json::to_string(&ErrResponse {
        id,
        error: &ErrorBody {
            code: code.to_string(),
            message: message.to_string(),
        },
    })
    .expect("response serializes")
}
