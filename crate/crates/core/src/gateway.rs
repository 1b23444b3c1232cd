//! Model backends behind one interface: a remote chat-completion endpoint and
//! deterministic local stubs (oracle, anti-oracle, fixed, scripted replay).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::builder::{GroundTruth, NextStep, ProblemInstance};
use crate::promptkit::{truth_answer_line, PromptBundle};

pub const API_KEY_ENV: &str = "REVAL_API_KEY";

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    BackendUnavailable { attempts: u32, message: String },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("no transcript entry for {0}")]
    TranscriptMiss(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    HttpChat,
    Oracle,
    AntiOracle,
    Fixed,
    Scripted,
}

impl std::str::FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "http_chat" | "http" => Ok(Backend::HttpChat),
            "oracle" => Ok(Backend::Oracle),
            "anti_oracle" => Ok(Backend::AntiOracle),
            "fixed" => Ok(Backend::Fixed),
            "scripted" => Ok(Backend::Scripted),
            _ => Err(format!(
                "unknown backend {s:?} (expected http_chat, oracle, anti_oracle, fixed or scripted)"
            )),
        }
    }
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::HttpChat => "http_chat",
            Backend::Oracle => "oracle",
            Backend::AntiOracle => "anti_oracle",
            Backend::Fixed => "fixed",
            Backend::Scripted => "scripted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backend: Backend,
    pub endpoint_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: u64,
    /// Requests per minute; 0 disables limiting.
    pub rate_limit: u32,
    pub retries: u32,
    /// First retry delay; doubles on every further attempt.
    pub backoff_ms: u64,
    pub request_timeout_s: u64,
    pub fixed_text: Option<String>,
    pub transcript: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Oracle,
            endpoint_url: None,
            model_name: "oracle".into(),
            temperature: 0.2,
            max_tokens: 1024,
            seed: 0,
            rate_limit: 60,
            retries: 3,
            backoff_ms: 1000,
            request_timeout_s: 120,
            fixed_text: None,
            transcript: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) {
            return Err(GatewayError::Config("temperature must be >= 0".into()));
        }
        match self.backend {
            Backend::HttpChat if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                Err(GatewayError::Config("http_chat needs an endpoint URL".into()))
            }
            Backend::Fixed if self.fixed_text.is_none() => {
                Err(GatewayError::Config("fixed needs a response text".into()))
            }
            Backend::Scripted if self.transcript.is_none() => {
                Err(GatewayError::Config("scripted needs a transcript file".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub text: String,
    pub latency_ms: u64,
    pub token_counts: TokenCounts,
    pub backend_meta: BTreeMap<String, String>,
}

/// Transcript lookup key: task followed by the problem key.
pub fn transcript_key(problem: &ProblemInstance) -> String {
    format!("{}|{}", problem.task, problem.key)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub text: String,
}

pub fn load_transcript(path: &Path) -> Result<HashMap<String, String>, GatewayError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| GatewayError::Config(format!("cannot read transcript {}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let entry: TranscriptEntry = serde_json::from_str(line)
            .map_err(|e| GatewayError::Config(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.insert(entry.key, entry.text);
    }
    Ok(out)
}

/// The correct answer line for a problem.
pub fn oracle_answer(problem: &ProblemInstance) -> String {
    truth_answer_line(&problem.ground_truth)
}

/// A well-formed answer line that is guaranteed wrong for the problem.
pub fn anti_oracle_answer(problem: &ProblemInstance) -> String {
    match &problem.ground_truth {
        GroundTruth::Coverage { executed } => format!("ANSWER: {}", if *executed { "NO" } else { "YES" }),
        GroundTruth::ValueType {
            value_repr, type_name, ..
        } => format!("ANSWER: value={value_repr}_X type={type_name}"),
        GroundTruth::NextLines { next_lines, .. } => {
            let wrong = (1..)
                .find(|n| !next_lines.contains(&NextStep::Line(*n)))
                .expect("finite successor set");
            format!("ANSWER: line {wrong}")
        }
        // a list that cannot equal the expected value, so the substituted
        // assertion fails instead of failing to parse
        GroundTruth::Output { expected_literal, .. } => format!("ANSWER: [{expected_literal}, '_X']"),
    }
}

struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_minute: u32) -> Self {
        let interval = if per_minute == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(60.0 / f64::from(per_minute))
        };
        Self {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    /// Blocks until the caller may start a request.
    fn acquire(&self) {
        if self.interval.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

enum Attempt {
    Retry(String),
    Fatal(GatewayError),
}

/// A configured backend. Safe to share between worker threads.
pub struct Gateway {
    config: ModelConfig,
    transcript: HashMap<String, String>,
    client: Option<reqwest::blocking::Client>,
    api_key: Option<String>,
    limiter: RateLimiter,
}

impl Gateway {
    pub fn new(config: ModelConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let transcript = match (&config.backend, &config.transcript) {
            (Backend::Scripted, Some(path)) => load_transcript(path)?,
            _ => HashMap::new(),
        };
        let (client, api_key) = if config.backend == Backend::HttpChat {
            let key = std::env::var(API_KEY_ENV)
                .ok()
                .filter(|k| !k.is_empty())
                .ok_or_else(|| GatewayError::AuthError(format!("{API_KEY_ENV} is not set")))?;
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.request_timeout_s))
                .build()
                .map_err(|e| GatewayError::Config(e.to_string()))?;
            (Some(client), Some(key))
        } else {
            (None, None)
        };
        let limiter = RateLimiter::new(if config.backend == Backend::HttpChat {
            config.rate_limit
        } else {
            0
        });
        Ok(Self {
            config,
            transcript,
            client,
            api_key,
            limiter,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Answers `prompt`. Stub backends answer from `problem` directly.
    pub fn complete(&self, problem: &ProblemInstance, prompt: &PromptBundle) -> Result<RawResponse, GatewayError> {
        let stub = |text: String| RawResponse {
            text,
            latency_ms: 0,
            token_counts: TokenCounts::default(),
            backend_meta: BTreeMap::from([("backend".to_string(), self.config.backend.to_string())]),
        };
        match self.config.backend {
            Backend::Oracle => Ok(stub(oracle_answer(problem))),
            Backend::AntiOracle => Ok(stub(anti_oracle_answer(problem))),
            Backend::Fixed => Ok(stub(self.config.fixed_text.clone().unwrap_or_default())),
            Backend::Scripted => {
                let key = transcript_key(problem);
                self.transcript
                    .get(&key)
                    .cloned()
                    .map(stub)
                    .ok_or(GatewayError::TranscriptMiss(key))
            }
            Backend::HttpChat => self.chat(prompt),
        }
    }

    fn chat(&self, prompt: &PromptBundle) -> Result<RawResponse, GatewayError> {
        let body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": prompt.system_text},
                {"role": "user", "content": prompt.user_text},
            ],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "seed": self.config.seed,
        });
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("chat request failed ({last}); retry {attempt} in {delay} ms");
                std::thread::sleep(Duration::from_millis(delay));
            }
            self.limiter.acquire();
            match self.attempt(&body) {
                Ok(resp) => return Ok(resp),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Retry(msg)) => last = msg,
            }
        }
        Err(GatewayError::BackendUnavailable {
            attempts,
            message: last,
        })
    }

    fn attempt(&self, body: &Value) -> Result<RawResponse, Attempt> {
        let client = self.client.as_ref().expect("http client configured");
        let url = self.config.endpoint_url.as_deref().unwrap_or_default();
        let started = Instant::now();
        let resp = client
            .post(url)
            .bearer_auth(self.api_key.as_deref().unwrap_or_default())
            .json(body)
            .send()
            .map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(Attempt::Fatal(GatewayError::AuthError(format!(
                "endpoint answered {status}"
            ))));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Retry(format!("endpoint answered {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(GatewayError::BackendUnavailable {
                attempts: 1,
                message: format!("endpoint answered {status}"),
            }));
        }
        let v: Value = resp
            .json()
            .map_err(|e| Attempt::Retry(format!("bad response body: {e}")))?;
        let text = v
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Attempt::Retry("response without message content".into()))?
            .to_string();
        let count = |p: &str| v.pointer(p).and_then(Value::as_u64).unwrap_or(0);
        let mut meta = BTreeMap::from([("backend".to_string(), "http_chat".to_string())]);
        if let Some(m) = v.get("model").and_then(Value::as_str) {
            meta.insert("model".into(), m.into());
        }
        if let Some(r) = v.pointer("/choices/0/finish_reason").and_then(Value::as_str) {
            meta.insert("finish_reason".into(), r.into());
        }
        Ok(RawResponse {
            text,
            latency_ms: started.elapsed().as_millis() as u64,
            token_counts: TokenCounts {
                prompt: count("/usage/prompt_tokens"),
                completion: count("/usage/completion_tokens"),
            },
            backend_meta: meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::{ProblemKey, QuestionPayload, Task};
    use crate::literal::LiteralValue;
    use crate::promptkit::{render_prompt, Strategy};
    use std::collections::BTreeSet;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    fn problem(task: Task, truth: GroundTruth) -> ProblemInstance {
        ProblemInstance {
            key: ProblemKey {
                record_id: "R".into(),
                input_id: "in0".into(),
                stmt_index: Some(1),
                variable: None,
            },
            task,
            rendered_program: "1  def f(x):\n2      return x\n".into(),
            question_payload: QuestionPayload {
                invocation: "f(1)".into(),
                line: Some(2),
                statement: Some("return x".into()),
                ..QuestionPayload::default()
            },
            ground_truth: truth,
        }
    }

    fn ccp() -> ProblemInstance {
        problem(Task::Ccp, GroundTruth::Coverage { executed: true })
    }

    fn prompt(p: &ProblemInstance) -> PromptBundle {
        render_prompt(p, Strategy::Fewshot, &[]).unwrap()
    }

    fn gateway(backend: Backend) -> Gateway {
        Gateway::new(ModelConfig {
            backend,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn oracle_and_anti_oracle() {
        let p = ccp();
        assert!(gateway(Backend::Oracle)
            .complete(&p, &prompt(&p))
            .unwrap()
            .text
            .contains("ANSWER: YES"));
        assert_eq!(
            gateway(Backend::AntiOracle).complete(&p, &prompt(&p)).unwrap().text,
            "ANSWER: NO"
        );
    }

    #[test]
    fn anti_oracle_lines() {
        let epp = problem(
            Task::Epp,
            GroundTruth::NextLines {
                next_lines: BTreeSet::from([NextStep::Line(1), NextStep::Line(2)]),
                occurrence: 1,
            },
        );
        assert_eq!(anti_oracle_answer(&epp), "ANSWER: line 3");
        let exit = problem(
            Task::Epp,
            GroundTruth::NextLines {
                next_lines: BTreeSet::from([NextStep::Exit]),
                occurrence: 1,
            },
        );
        assert_eq!(anti_oracle_answer(&exit), "ANSWER: line 1");
        let op = problem(
            Task::Op,
            GroundTruth::Output {
                expected_literal: LiteralValue::parse("'a'").unwrap(),
                assertion: String::new(),
            },
        );
        assert_eq!(anti_oracle_answer(&op), "ANSWER: ['a', '_X']");
    }

    #[test]
    fn scripted_replay() {
        let p = ccp();
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            f,
            "{}",
            json!({"key": transcript_key(&p), "text": "thinking\nANSWER: NO"})
        )
        .unwrap();
        let g = Gateway::new(ModelConfig {
            backend: Backend::Scripted,
            transcript: Some(f.path().to_path_buf()),
            ..ModelConfig::default()
        })
        .unwrap();
        let a = g.complete(&p, &prompt(&p)).unwrap();
        assert_eq!(a, g.complete(&p, &prompt(&p)).unwrap());
        assert_eq!(a.text, "thinking\nANSWER: NO");
        let mut other = p.clone();
        other.key.input_id = "in9".into();
        assert!(matches!(
            g.complete(&other, &prompt(&other)),
            Err(GatewayError::TranscriptMiss(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            backend: Backend::Scripted,
            ..ModelConfig::default()
        };
        assert!(matches!(Gateway::new(bad), Err(GatewayError::Config(_))));
        let bad = ModelConfig {
            temperature: -1.0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    /// Serves the given (status, body) replies in order, one per connection,
    /// and returns the request bodies received.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, reply) in replies {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                bodies.push(String::from_utf8(body).unwrap());
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                    reply.len()
                );
                stream.write_all(resp.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn http_config(url: String, retries: u32) -> ModelConfig {
        ModelConfig {
            backend: Backend::HttpChat,
            endpoint_url: Some(url),
            model_name: "m".into(),
            retries,
            backoff_ms: 5,
            rate_limit: 0,
            ..ModelConfig::default()
        }
    }

    // one test drives every HTTP case so the key variable is set once
    #[test]
    fn http_chat_against_local_endpoint() {
        std::env::set_var(API_KEY_ENV, "test-key");
        let ok = json!({
            "model": "m",
            "choices": [{"message": {"role": "assistant", "content": "ANSWER: YES"}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 12, "completion_tokens": 3}
        })
        .to_string();

        let (url, server) = mock_server(vec![(503, "{}".into()), (200, ok.clone())]);
        let g = Gateway::new(http_config(url, 2)).unwrap();
        let p = ccp();
        let r = g.complete(&p, &prompt(&p)).unwrap();
        assert_eq!(r.text, "ANSWER: YES");
        assert_eq!(
            r.token_counts,
            TokenCounts {
                prompt: 12,
                completion: 3
            }
        );
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 2);
        let sent: Value = serde_json::from_str(&bodies[1]).unwrap();
        assert_eq!(sent["messages"][0]["role"], "system");
        assert_eq!(sent["messages"][1]["role"], "user");
        assert_eq!(sent["model"], "m");
        assert!(sent.get("seed").is_some() && sent.get("max_tokens").is_some());

        let (url, server) = mock_server(vec![(500, "{}".into()), (500, "{}".into())]);
        let g = Gateway::new(http_config(url, 1)).unwrap();
        assert!(matches!(
            g.complete(&p, &prompt(&p)),
            Err(GatewayError::BackendUnavailable { attempts: 2, .. })
        ));
        server.join().unwrap();

        let (url, server) = mock_server(vec![(401, "{}".into())]);
        let g = Gateway::new(http_config(url, 3)).unwrap();
        assert!(matches!(g.complete(&p, &prompt(&p)), Err(GatewayError::AuthError(_))));
        assert_eq!(server.join().unwrap().len(), 1, "auth failures are not retried");
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let limiter = RateLimiter::new(1200); // 50 ms apart
        let start = Instant::now();
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(95));
    }
}
