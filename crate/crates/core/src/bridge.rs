//! Line-delimited JSON bridge to an external model process.
//!
//! The peer speaks first:
//!
//! ```text
//! <- {"hello":{"vocab_size":N,"vocab_fingerprint":"..."}}
//! -> {"logits_for":{"context":[1,2,3]}}
//! <- {"logits":[...N floats...]}
//! -> {"complete":{"prompt":"..."}}
//! <- {"text":"..."}
//! ```
//!
//! Any `{"error":"..."}` from the peer aborts the session; later calls fail
//! without touching the pipe. `complete` is used by judge peers, which may
//! omit the vocabulary fields from their hello.

use std::io::{self, BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::decoding::{DistributionSource, SourceError};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Request {
    LogitsFor { context: Vec<TokenId> },
    Complete { prompt: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(default)]
    pub vocab_size: usize,
    #[serde(default)]
    pub vocab_fingerprint: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reply {
    Hello(Hello),
    Logits(Vec<f64>),
    Text(String),
    Error(String),
}

/// Client side of the bridge over any reader/writer pair.
pub struct StdioBridge<R, W> {
    reader: R,
    writer: W,
    hello: Hello,
    aborted: Option<String>,
}

impl<R: BufRead, W: Write> StdioBridge<R, W> {
    /// Reads the peer's hello.
    pub fn connect(mut reader: R, writer: W) -> Result<Self, SourceError> {
        let hello = match read_reply(&mut reader)? {
            Reply::Hello(h) => h,
            Reply::Error(e) => return Err(SourceError::Remote(e)),
            other => return Err(SourceError::Protocol(format!("expected hello, got {other:?}"))),
        };
        Ok(StdioBridge { reader, writer, hello, aborted: None })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    fn call(&mut self, request: &Request) -> Result<Reply, SourceError> {
        if let Some(e) = &self.aborted {
            return Err(SourceError::Remote(format!("session aborted: {e}")));
        }
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| SourceError::Io(e.to_string()))?;
        match read_reply(&mut self.reader)? {
            Reply::Error(e) => {
                self.aborted = Some(e.clone());
                Err(SourceError::Remote(e))
            }
            reply => Ok(reply),
        }
    }

    /// Sends a prompt to a text-completion peer.
    pub fn complete(&mut self, prompt: &str) -> Result<String, SourceError> {
        match self.call(&Request::Complete { prompt: prompt.to_string() })? {
            Reply::Text(t) => Ok(t),
            other => Err(SourceError::Protocol(format!("expected text, got {other:?}"))),
        }
    }
}

impl<R: BufRead, W: Write> DistributionSource for StdioBridge<R, W> {
    fn vocab_size(&self) -> usize {
        self.hello.vocab_size
    }

    fn vocab_fingerprint(&self) -> &str {
        &self.hello.vocab_fingerprint
    }

    fn next_logits(&mut self, context: &[TokenId]) -> Result<Vec<f64>, SourceError> {
        match self.call(&Request::LogitsFor { context: context.to_vec() })? {
            Reply::Logits(l) if l.len() == self.hello.vocab_size => Ok(l),
            Reply::Logits(l) => Err(SourceError::Length { expected: self.hello.vocab_size, got: l.len() }),
            other => Err(SourceError::Protocol(format!("expected logits, got {other:?}"))),
        }
    }
}

fn read_reply<R: BufRead>(reader: &mut R) -> Result<Reply, SourceError> {
    let mut line = String::new();
    let n = reader.read_line(&mut line).map_err(|e| SourceError::Io(e.to_string()))?;
    if n == 0 {
        return Err(SourceError::Io("peer closed the connection".into()));
    }
    serde_json::from_str(line.trim_end()).map_err(|e| SourceError::Protocol(format!("{e}: {:?}", line.trim_end())))
}

/// A bridge to a spawned child process.
pub struct ProcessSource {
    child: Child,
    bridge: StdioBridge<BufReader<ChildStdout>, ChildStdin>,
}

impl ProcessSource {
    pub fn spawn(program: &str, args: &[String]) -> Result<ProcessSource, SourceError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| SourceError::Io(format!("cannot start {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        match StdioBridge::connect(stdout, stdin) {
            Ok(bridge) => Ok(ProcessSource { child, bridge }),
            Err(e) => {
                let _ = child.kill();
                let _ = child.wait();
                Err(e)
            }
        }
    }

    pub fn hello(&self) -> &Hello {
        self.bridge.hello()
    }

    pub fn complete(&mut self, prompt: &str) -> Result<String, SourceError> {
        self.bridge.complete(prompt)
    }
}

impl DistributionSource for ProcessSource {
    fn vocab_size(&self) -> usize {
        self.bridge.vocab_size()
    }

    fn vocab_fingerprint(&self) -> &str {
        self.bridge.vocab_fingerprint()
    }

    fn next_logits(&mut self, context: &[TokenId]) -> Result<Vec<f64>, SourceError> {
        self.bridge.next_logits(context)
    }
}

impl Drop for ProcessSource {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Peer side: serves `source` until the reader hits end of input.
/// `complete` requests are answered with an error.
pub fn serve<S, R, W>(source: &mut S, reader: R, mut writer: W) -> io::Result<()>
where
    S: DistributionSource + ?Sized,
    R: BufRead,
    W: Write,
{
    let hello = Reply::Hello(Hello {
        vocab_size: source.vocab_size(),
        vocab_fingerprint: source.vocab_fingerprint().to_string(),
    });
    write_reply(&mut writer, &hello)?;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<Request>(&line) {
            Ok(Request::LogitsFor { context }) => {
                if let Some(bad) = context.iter().find(|id| **id as usize >= source.vocab_size()) {
                    Reply::Error(format!("token id {bad} out of range"))
                } else {
                    match source.next_logits(&context) {
                        Ok(l) => Reply::Logits(l),
                        Err(e) => Reply::Error(e.to_string()),
                    }
                }
            }
            Ok(Request::Complete { .. }) => Reply::Error("this peer does not complete text".into()),
            Err(e) => Reply::Error(format!("bad request: {e}")),
        };
        let fatal = matches!(reply, Reply::Error(_));
        write_reply(&mut writer, &reply)?;
        if fatal {
            break;
        }
    }
    Ok(())
}

fn write_reply<W: Write>(writer: &mut W, reply: &Reply) -> io::Result<()> {
    let mut line = serde_json::to_string(reply).map_err(io::Error::other)?;
    line.push('\n');
    writer.write_all(line.as_bytes())?;
    writer.flush()
}
