//! Line-delimited JSON spoken with external scorer processes.
//!
//! The engine writes a handshake line, the scorer answers with the same
//! line, then each request line gets exactly one response line. Any request
//! may be answered with `{"error": "..."}`.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ListCandidate, ScorerError};

pub const PROTO_NAME: &str = "xdnr-scorer";
pub const PROTO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub proto: String,
    pub version: u32,
}

impl Default for Handshake {
    fn default() -> Self {
        Handshake {
            proto: PROTO_NAME.to_string(),
            version: PROTO_VERSION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Request {
    Pair { id: String, query: String, doc: String },
    List { query: String, candidates: Vec<ListCandidate> },
}

/// A well-formed response line.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Pair { id: String, score: f64 },
    List { order: Vec<String> },
    Error(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect<'a> {
    Pair { id: &'a str },
    List,
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    // serialization of these plain structs cannot fail
    serde_json::to_string(msg).expect("protocol message serializes")
}

pub fn check_handshake(line: &str) -> Result<(), ScorerError> {
    let h: Handshake = serde_json::from_str(line.trim())
        .map_err(|e| ScorerError::Protocol(format!("bad handshake {line:?}: {e}")))?;
    if h.proto != PROTO_NAME || h.version != PROTO_VERSION {
        return Err(ScorerError::Protocol(format!(
            "unsupported handshake {}/{}",
            h.proto, h.version
        )));
    }
    Ok(())
}

/// Checks one response line against what the request called for.
pub fn validate_response(line: &str, expect: Expect<'_>) -> Result<Response, ScorerError> {
    let line = line.trim();
    if line.is_empty() {
        return Err(ScorerError::EmptyResponse);
    }
    let v: Value =
        serde_json::from_str(line).map_err(|e| ScorerError::Protocol(format!("response is not JSON: {e}")))?;
    let obj = v
        .as_object()
        .ok_or_else(|| ScorerError::Protocol("response is not an object".into()))?;
    if let Some(err) = obj.get("error") {
        return match err.as_str() {
            Some(msg) => Ok(Response::Error(msg.to_string())),
            None => Err(ScorerError::Protocol("\"error\" must be a string".into())),
        };
    }
    match expect {
        Expect::Pair { id } => {
            let got = obj
                .get("id")
                .and_then(Value::as_str)
                .ok_or_else(|| ScorerError::Protocol("pair response lacks string \"id\"".into()))?;
            if got != id {
                return Err(ScorerError::Protocol(format!("response id {got:?} does not match request {id:?}")));
            }
            let score = obj
                .get("score")
                .and_then(Value::as_f64)
                .ok_or_else(|| ScorerError::Protocol("pair response lacks numeric \"score\"".into()))?;
            if !score.is_finite() {
                return Err(ScorerError::Protocol("non-finite score".into()));
            }
            Ok(Response::Pair {
                id: got.to_string(),
                score,
            })
        }
        Expect::List => {
            let order = obj
                .get("order")
                .and_then(Value::as_array)
                .ok_or_else(|| ScorerError::Protocol("list response lacks array \"order\"".into()))?;
            let order = order
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(String::from)
                        .ok_or_else(|| ScorerError::Protocol("\"order\" must hold strings".into()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Response::List { order })
        }
    }
}
