//! Out-of-process models over line-delimited JSON on stdin/stdout.
//!
//! Requests: `{"op":"predict"|"gradient","question":...,"context":...}`.
//! Responses: `{"proba":p}` for `predict`, `{"tokens":[...],"gradient":[[...]]}`
//! for `gradient` (context tokens only, in order, one gradient row each), or
//! `{"error":"..."}` on failure.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AnswerabilityModel, ModelError, Token};

/// Environment variable holding the shell command that starts the model.
pub const MODEL_CMD_ENV: &str = "QAEVAL_MODEL_CMD";

#[derive(Debug, Serialize)]
struct Request<'a> {
    op: &'a str,
    question: &'a str,
    context: &'a str,
}

#[derive(Debug, Deserialize)]
struct Response {
    #[serde(default)]
    proba: Option<f64>,
    #[serde(default)]
    tokens: Option<Vec<String>>,
    #[serde(default)]
    gradient: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

struct Channel {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
}

/// A model process. Calls are serialized through a mutex, so one instance can
/// be shared between workers without interleaving requests.
pub struct ExternalModel {
    command: String,
    channel: Mutex<Channel>,
}

impl std::fmt::Debug for ExternalModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalModel")
            .field("command", &self.command)
            .finish()
    }
}

impl ExternalModel {
    /// Start `command` through `sh -c`.
    pub fn spawn(command: &str) -> Result<Self, ModelError> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| ModelError::Endpoint(format!("starting {command:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = BufReader::new(child.stdout.take().expect("stdout piped"));
        Ok(Self {
            command: command.to_string(),
            channel: Mutex::new(Channel {
                child,
                stdin,
                stdout,
            }),
        })
    }

    pub fn from_env() -> Result<Self, ModelError> {
        let command = std::env::var(MODEL_CMD_ENV)
            .map_err(|_| ModelError::Endpoint(format!("{MODEL_CMD_ENV} is not set")))?;
        Self::spawn(&command)
    }

    fn call(&self, op: &str, question: &str, context: &str) -> Result<Response, ModelError> {
        let line = serde_json::to_string(&Request {
            op,
            question,
            context,
        })
        .map_err(|e| ModelError::Protocol(e.to_string()))?;
        let mut ch = self
            .channel
            .lock()
            .map_err(|_| ModelError::Endpoint("model channel poisoned".into()))?;
        writeln!(ch.stdin, "{line}")
            .and_then(|_| ch.stdin.flush())
            .map_err(|e| ModelError::Endpoint(format!("writing to {:?}: {e}", self.command)))?;
        let mut reply = String::new();
        let n = ch
            .stdout
            .read_line(&mut reply)
            .map_err(|e| ModelError::Endpoint(format!("reading from {:?}: {e}", self.command)))?;
        if n == 0 {
            return Err(ModelError::Endpoint(format!(
                "{:?} closed its output",
                self.command
            )));
        }
        let response: Response = serde_json::from_str(&reply)
            .map_err(|e| ModelError::Protocol(format!("{e}: {}", reply.trim())))?;
        if let Some(err) = response.error {
            return Err(ModelError::Endpoint(err));
        }
        Ok(response)
    }

    /// Tokens and the gradient of the answerable probability at the input.
    pub fn input_gradient(
        &self,
        question: &str,
        context: &str,
    ) -> Result<(Vec<Token>, Array2<f64>), ModelError> {
        let response = self.call("gradient", question, context)?;
        let (tokens, rows) = match (response.tokens, response.gradient) {
            (Some(t), Some(g)) => (t, g),
            _ => {
                return Err(ModelError::Protocol(
                    "gradient reply lacks tokens or gradient".into(),
                ))
            }
        };
        if tokens.len() != rows.len() {
            return Err(ModelError::Protocol(format!(
                "{} tokens but {} gradient rows",
                tokens.len(),
                rows.len()
            )));
        }
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(ModelError::Protocol("ragged gradient rows".into()));
        }
        let grad = Array2::from_shape_vec((rows.len(), d), rows.into_iter().flatten().collect())
            .map_err(|e| ModelError::Protocol(e.to_string()))?;
        Ok((align_tokens(context, &tokens)?, grad))
    }
}

impl Drop for ExternalModel {
    fn drop(&mut self) {
        if let Ok(ch) = self.channel.get_mut() {
            let _ = ch.child.kill();
            let _ = ch.child.wait();
        }
    }
}

impl AnswerabilityModel for ExternalModel {
    fn predict_proba(&self, question: &str, context: &str) -> Result<f64, ModelError> {
        let p = self
            .call("predict", question, context)?
            .proba
            .ok_or_else(|| ModelError::Protocol("predict reply lacks proba".into()))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::Protocol(format!(
                "probability {p} outside [0, 1]"
            )));
        }
        Ok(p)
    }
}

/// Locate each token string in `context`, left to right, and attach character
/// spans. Common subword markers (`##`, `Ġ`, `▁`) are stripped first.
pub fn align_tokens(context: &str, tokens: &[String]) -> Result<Vec<Token>, ModelError> {
    let chars: Vec<char> = context.chars().collect();
    let mut cursor = 0;
    let mut out = Vec::with_capacity(tokens.len());
    for raw in tokens {
        let piece: Vec<char> = raw
            .trim_start_matches("##")
            .trim_start_matches(['\u{0120}', '\u{2581}'])
            .chars()
            .collect();
        if piece.is_empty() {
            return Err(ModelError::Protocol(format!("empty token {raw:?}")));
        }
        let found = (cursor..=chars.len().saturating_sub(piece.len()))
            .find(|&i| chars[i..i + piece.len()] == piece[..])
            .ok_or_else(|| {
                ModelError::Protocol(format!(
                    "token {raw:?} not found in context after offset {cursor}"
                ))
            })?;
        cursor = found + piece.len();
        out.push(Token {
            text: raw.clone(),
            start: found,
            end: cursor,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aligns_subwords() {
        let toks: Vec<String> = ["The", "Ġcap", "ital", "▁of", "##s"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let aligned = align_tokens("The capital ofs", &toks).unwrap();
        let spans: Vec<_> = aligned.iter().map(|t| (t.start, t.end)).collect();
        assert_eq!(spans, vec![(0, 3), (4, 7), (7, 11), (12, 14), (14, 15)]);
    }

    #[test]
    fn missing_token_is_protocol_error() {
        let toks = vec!["zebra".to_string()];
        assert!(matches!(
            align_tokens("The capital", &toks),
            Err(ModelError::Protocol(_))
        ));
    }
}
