//! Serving side of the protocol for models written in Rust.

use std::io::{BufRead, Write};

use super::protocol::{error_line, ok_line, Hello, IncomingRequest, Op, PROTOCOL_VERSION};
use super::{AdapterError, Transport, TransportKind};
use crate::data::Matrix;

/// A model reachable through the protocol.
pub trait AdapterModel: Send {
    fn input_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn encode(&self, batch: &Matrix) -> Result<Matrix, String>;
    fn decode(&self, batch: &Matrix) -> Result<Matrix, String>;
    fn classify(&self, batch: &Matrix) -> Result<Vec<usize>, String>;
}

/// Outcome of handling one request line.
pub struct Reply {
    pub line: String,
    pub shutdown: bool,
}

/// Answers one request line. Never panics on malformed input.
pub fn handle_line<M: AdapterModel + ?Sized>(model: &M, line: &str) -> Reply {
    let req: IncomingRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(|i| i.as_u64()));
            return Reply {
                line: error_line(id, "bad_request", &e.to_string()),
                shutdown: false,
            };
        }
    };
    let id = req.id;
    let reply = |line| Reply {
        line,
        shutdown: false,
    };
    match req.op {
        Op::Hello => reply(ok_line(
            id,
            &Hello {
                input_dim: model.input_dim(),
                latent_dim: model.latent_dim(),
                num_classes: model.num_classes(),
                protocol: PROTOCOL_VERSION,
            },
        )),
        Op::Shutdown => Reply {
            line: ok_line(id, &serde_json::Value::Null),
            shutdown: true,
        },
        op => {
            let width = match op {
                Op::Encode => model.input_dim(),
                _ => model.latent_dim(),
            };
            let rows = req.data.unwrap_or_default();
            let batch = match Matrix::from_rows(width, &rows) {
                Ok(b) => b,
                Err(e) => return reply(error_line(Some(id), "bad_shape", &e.to_string())),
            };
            let result = match op {
                Op::Encode => model.encode(&batch).map(|m| ok_line(id, &m.to_rows())),
                Op::Decode => model.decode(&batch).map(|m| ok_line(id, &m.to_rows())),
                _ => model.classify(&batch).map(|l| ok_line(id, &l)),
            };
            reply(result.unwrap_or_else(|e| error_line(Some(id), "model_error", &e)))
        }
    }
}

/// Request loop over line streams; returns after a shutdown request or EOF.
pub fn serve<M, R, W>(model: &M, input: R, mut output: W) -> std::io::Result<()>
where
    M: AdapterModel + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(model, &line);
        writeln!(output, "{}", reply.line)?;
        output.flush()?;
        if reply.shutdown {
            break;
        }
    }
    Ok(())
}

/// Drives an in-process model through the full wire encoding.
pub struct LoopbackTransport<M> {
    model: M,
}

impl<M: AdapterModel> LoopbackTransport<M> {
    pub fn new(model: M) -> Self {
        LoopbackTransport { model }
    }
}

impl<M: AdapterModel> Transport for LoopbackTransport<M> {
    fn exchange(&mut self, request: &str) -> Result<String, AdapterError> {
        Ok(handle_line(&self.model, request).line)
    }

    fn kind(&self) -> TransportKind {
        TransportKind::Loopback
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::toy::ToyLinearModel;

    fn toy() -> ToyLinearModel {
        ToyLinearModel::identity(2, Matrix::from_rows(2, &[[0.0, 0.0]]).unwrap(), vec![0]).unwrap()
    }

    #[test]
    fn hello_and_echo() {
        let m = toy();
        assert_eq!(
            handle_line(&m, r#"{"id":0,"op":"hello"}"#).line,
            r#"{"id":0,"result":{"input_dim":2,"latent_dim":2,"num_classes":1,"protocol":1}}"#
        );
        assert_eq!(
            handle_line(&m, r#"{"id":1,"op":"encode","data":[[1.5,-2.0]]}"#).line,
            r#"{"id":1,"result":[[1.5,-2.0]]}"#
        );
    }

    #[test]
    fn malformed_input_yields_error_and_continues() {
        let m = toy();
        let input = b"garbage\n{\"id\":4,\"op\":\"encode\",\"data\":[[1.0]]}\n{\"id\":5,\"op\":\"shutdown\"}\n{\"id\":6,\"op\":\"hello\"}\n";
        let mut out = Vec::new();
        serve(&m, &input[..], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3, "stops after shutdown");
        assert!(lines[0].starts_with(r#"{"id":null,"error""#));
        assert!(lines[1].starts_with(r#"{"id":4,"error":{"code":"bad_shape""#));
        assert_eq!(lines[2], r#"{"id":5,"result":null}"#);
    }
}
