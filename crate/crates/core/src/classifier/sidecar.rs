//! Client for an external model process speaking newline-delimited JSON.
//!
//! The sidecar writes a `hello` line first; afterwards each request line is
//! answered by exactly one response line carrying the same `id`.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ClassifierError, FeatureStack, Result, SoftmaxVector};
use crate::imaging::Image;

const DEFAULT_READ_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub h: usize,
    pub w: usize,
    pub c: usize,
}

impl InputShape {
    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(rename = "type")]
    pub kind: String,
    pub labels: Vec<String>,
    pub input: InputShape,
    pub layers: Vec<usize>,
    pub grad: bool,
}

impl Hello {
    /// Serialization used for fingerprinting; field order is fixed.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("hello serializes")
    }

    fn validate(&self) -> Result<()> {
        if self.kind != "hello" {
            return Err(ClassifierError::Protocol(format!(
                "first line has type {:?}, expected \"hello\"",
                self.kind
            )));
        }
        if self.labels.is_empty() {
            return Err(ClassifierError::Protocol(
                "handshake declares no labels".into(),
            ));
        }
        let InputShape { h, w, c } = self.input;
        if h == 0 || w == 0 || (c != 1 && c != 3) {
            return Err(ClassifierError::Protocol(format!(
                "unsupported input shape {h}x{w}x{c}"
            )));
        }
        if self.layers.is_empty() || self.layers.contains(&0) {
            return Err(ClassifierError::Protocol(format!(
                "invalid layer dimensions {:?}",
                self.layers
            )));
        }
        Ok(())
    }
}

/// Where to reach a sidecar.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SidecarSpec {
    Tcp(String),
    Exec { program: String, args: Vec<String> },
}

impl SidecarSpec {
    /// Recognizes `tcp:HOST:PORT` and `exec:PROGRAM ARGS...`; anything else
    /// is not a sidecar locator.
    pub fn parse(locator: &str) -> Option<Self> {
        if let Some(addr) = locator.strip_prefix("tcp:") {
            return Some(Self::Tcp(addr.trim_start_matches("//").to_string()));
        }
        let cmd = locator.strip_prefix("exec:")?;
        let mut parts = cmd.split_whitespace().map(str::to_string);
        let program = parts.next()?;
        Some(Self::Exec {
            program,
            args: parts.collect(),
        })
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    child: Option<Child>,
}

impl Connection {
    fn read_line(&mut self) -> Result<String> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(ClassifierError::Protocol(
                "sidecar closed the stream".into(),
            ));
        }
        Ok(line)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// One request/response stream; calls are serialized through a mutex.
pub struct SidecarClient {
    conn: Mutex<Connection>,
    hello: Hello,
}

impl SidecarClient {
    pub fn connect(spec: &SidecarSpec) -> Result<Self> {
        match spec {
            SidecarSpec::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_read_timeout(Some(DEFAULT_READ_TIMEOUT))?;
                let reader = BufReader::new(stream.try_clone()?);
                Self::handshake(Box::new(reader), Box::new(stream), None)
            }
            SidecarSpec::Exec { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()?;
                let stdin = child.stdin.take().expect("piped stdin");
                let stdout = child.stdout.take().expect("piped stdout");
                Self::handshake(
                    Box::new(BufReader::new(stdout)),
                    Box::new(stdin),
                    Some(child),
                )
            }
        }
    }

    /// Wraps an already-open stream pair and reads the handshake.
    pub fn from_streams(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Result<Self> {
        Self::handshake(reader, writer, None)
    }

    fn handshake(
        reader: Box<dyn BufRead + Send>,
        writer: Box<dyn Write + Send>,
        child: Option<Child>,
    ) -> Result<Self> {
        let mut conn = Connection {
            reader,
            writer,
            next_id: 0,
            child,
        };
        let line = conn.read_line()?;
        let hello: Hello = serde_json::from_str(line.trim_end())
            .map_err(|e| ClassifierError::Protocol(format!("bad handshake: {e}")))?;
        hello.validate()?;
        Ok(Self {
            conn: Mutex::new(conn),
            hello,
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    fn call(&self, op: &str, img: &Image, grad_args: Option<Value>) -> Result<Value> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let id = conn.next_id;
        conn.next_id += 1;
        let mut request = json!({
            "id": id,
            "op": op,
            "image": STANDARD.encode(img.data()),
        });
        if let Some(args) = grad_args {
            request["grad_args"] = args;
        }
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        conn.writer.write_all(line.as_bytes())?;
        conn.writer.flush()?;

        let reply = conn.read_line()?;
        let mut value: Value = serde_json::from_str(reply.trim_end())
            .map_err(|e| ClassifierError::Protocol(format!("unparsable response: {e}")))?;
        match value.get("id").and_then(Value::as_u64) {
            Some(got) if got == id => {}
            got => {
                return Err(ClassifierError::Protocol(format!(
                    "response id {got:?} does not echo request id {id}"
                )))
            }
        }
        if let Some(message) = value.get("error") {
            return Err(ClassifierError::Remote {
                id,
                message: message.as_str().unwrap_or_default().to_string(),
            });
        }
        value.get_mut(op).map(Value::take).ok_or_else(|| {
            ClassifierError::Protocol(format!("response to {op} lacks {op:?} field"))
        })
    }

    pub fn softmax(&self, img: &Image) -> Result<SoftmaxVector> {
        let probs: Vec<f64> = decode(self.call("softmax", img, None)?, "softmax")?;
        if probs.len() != self.hello.labels.len() {
            return Err(ClassifierError::Protocol(format!(
                "softmax has {} entries for {} labels",
                probs.len(),
                self.hello.labels.len()
            )));
        }
        SoftmaxVector::new(probs)
    }

    pub fn features(&self, img: &Image) -> Result<FeatureStack> {
        let layers: Vec<Vec<f64>> = decode(self.call("features", img, None)?, "features")?;
        let dims: Vec<usize> = layers.iter().map(Vec::len).collect();
        if dims != self.hello.layers {
            return Err(ClassifierError::Protocol(format!(
                "feature dims {dims:?} differ from declared {:?}",
                self.hello.layers
            )));
        }
        Ok(FeatureStack(layers))
    }

    pub fn grad(
        &self,
        img: &Image,
        layer: usize,
        mean: &[f64],
        inv_cov: &DMatrix<f64>,
    ) -> Result<Vec<f64>> {
        let rows: Vec<Vec<f64>> = inv_cov
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let args = json!({ "layer": layer, "mean": mean, "inv_cov": rows });
        let grad: Vec<f64> = decode(self.call("grad", img, Some(args))?, "grad")?;
        if grad.len() != img.len() {
            return Err(ClassifierError::Protocol(format!(
                "gradient has {} entries, expected {}",
                grad.len(),
                img.len()
            )));
        }
        Ok(grad)
    }
}

fn decode<T: serde::de::DeserializeOwned>(value: Value, field: &str) -> Result<T> {
    serde_json::from_value(value)
        .map_err(|e| ClassifierError::Protocol(format!("malformed {field} payload: {e}")))
}
