//! External adapter process speaking JSON lines on stdin/stdout.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use super::{AdapterError, Transport, TransportKind};

pub struct SubprocessTransport {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    timeout: Duration,
}

impl SubprocessTransport {
    /// Spawns `argv[0]` with the remaining arguments. Adapter stderr is
    /// inherited.
    pub fn spawn(argv: &[String], timeout: Duration) -> Result<Self, AdapterError> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| AdapterError::LaunchFailure("empty adapter command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| AdapterError::LaunchFailure(format!("{program}: {e}")))?;
        let stdin = child.stdin.take();
        let stdout = child
            .stdout
            .take()
            .ok_or_else(|| AdapterError::LaunchFailure("adapter stdout unavailable".into()))?;
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(SubprocessTransport {
            child,
            stdin,
            lines: rx,
            timeout,
        })
    }

    fn exit_status(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => format!("adapter exited with {status}"),
            _ => "adapter closed its output".to_string(),
        }
    }
}

impl Transport for SubprocessTransport {
    fn exchange(&mut self, request: &str) -> Result<String, AdapterError> {
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| AdapterError::AdapterCrash("adapter stdin closed".into()))?;
        let written = stdin
            .write_all(request.as_bytes())
            .and_then(|_| stdin.write_all(b"\n"))
            .and_then(|_| stdin.flush());
        if let Err(e) = written {
            // give the reader a moment so the exit status is observable
            thread::sleep(Duration::from_millis(20));
            return Err(AdapterError::AdapterCrash(format!("{}: {e}", self.exit_status())));
        }
        loop {
            match self.lines.recv_timeout(self.timeout) {
                Ok(Ok(line)) if line.trim().is_empty() => continue,
                Ok(Ok(line)) => return Ok(line),
                Ok(Err(e)) => return Err(AdapterError::AdapterCrash(e.to_string())),
                Err(RecvTimeoutError::Timeout) => return Err(AdapterError::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    let _ = self.child.wait();
                    return Err(AdapterError::AdapterCrash(self.exit_status()));
                }
            }
        }
    }

    fn kind(&self) -> TransportKind {
        TransportKind::Subprocess
    }

    fn close(&mut self) {
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_millis(500);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(5));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Drop for SubprocessTransport {
    fn drop(&mut self) {
        if let Ok(None) = self.child.try_wait() {
            self.stdin.take();
            let _ = self.child.kill();
            let _ = self.child.wait();
        }
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::adapter::{handshake_with, AdapterDescriptor, ChannelOptions};

    fn sh(script: &str) -> AdapterDescriptor {
        AdapterDescriptor::Command(vec!["sh".into(), "-c".into(), script.into()])
    }

    #[test]
    fn missing_program_is_launch_failure() {
        let err = handshake_with(
            &AdapterDescriptor::Command(vec!["/nonexistent/adapter".into()]),
            ChannelOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AdapterError::LaunchFailure(_)));
    }

    #[test]
    fn scripted_shell_adapter_handshakes() {
        let script = r#"read l; echo '{"id":0,"result":{"input_dim":4,"latent_dim":2,"num_classes":2,"protocol":1}}'; read l; echo '{"id":1,"result":null}'"#;
        let ch = handshake_with(&sh(script), ChannelOptions::default()).unwrap();
        assert_eq!((ch.input_dim(), ch.latent_dim(), ch.num_classes()), (4, 2, 2));
        ch.shutdown().unwrap();
    }

    #[test]
    fn adapter_exit_mid_run_is_a_crash() {
        let script = r#"read l; echo '{"id":0,"result":{"input_dim":1,"latent_dim":1,"num_classes":1,"protocol":1}}'; exit 3"#;
        let mut ch = handshake_with(&sh(script), ChannelOptions::default()).unwrap();
        let err = ch.encode(&crate::Matrix::zeros(1, 1)).unwrap_err();
        assert!(matches!(err, AdapterError::AdapterCrash(_)), "{err}");
    }

    #[test]
    fn silent_adapter_times_out() {
        let opts = ChannelOptions {
            timeout: Duration::from_millis(200),
            ..Default::default()
        };
        let err = handshake_with(&sh("sleep 5"), opts).unwrap_err();
        assert!(matches!(err, AdapterError::Timeout(_)));
    }
}
