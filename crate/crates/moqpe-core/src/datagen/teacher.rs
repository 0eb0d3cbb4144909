//! Chat-completions teacher client with an offline canned mode.
//!
//! Live mode POSTs a chat-completions-shaped JSON body (messages may embed a
//! base64 image part) and retries transient failures (5xx, timeouts) with
//! exponential backoff; 4xx responses are never retried. Canned mode answers
//! from fixture files and keeps the whole test suite network-free.

use super::templates::ChatMessage;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;
use thiserror::Error;

pub const TEACHER_KEY_ENV: &str = "MOQPE_TEACHER_KEY";
pub const DEFAULT_MAX_ATTEMPTS: usize = 3;

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("missing API key: set {TEACHER_KEY_ENV}")]
    MissingKey,
    #[error("authentication failed (http {status})")]
    Auth { status: u16 },
    #[error("rate limited (http {status})")]
    RateLimited { status: u16 },
    #[error("client error (http {status}): {body}")]
    Client { status: u16, body: String },
    #[error("server error (http {status}) after {attempts} attempts")]
    Server { status: u16, attempts: usize },
    #[error("transport error after {attempts} attempts: {source}")]
    Transport {
        attempts: usize,
        #[source]
        source: reqwest::Error,
    },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no canned fixture for request key {0:?}")]
    MissingFixture(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

enum Mode {
    Live { endpoint: String, api_key: String, http: reqwest::blocking::Client },
    Canned { dir: PathBuf },
}

pub struct TeacherClient {
    mode: Mode,
    model: String,
    max_attempts: usize,
    initial_backoff: Duration,
}

pub struct TeacherJob {
    /// Names the canned fixture and labels errors; live mode ignores it.
    pub key: String,
    pub messages: Vec<ChatMessage>,
}

impl TeacherClient {
    /// Live client; fails before any network activity if the key env var is
    /// unset.
    pub fn live(endpoint: &str, model: &str) -> Result<Self, TeacherError> {
        let api_key = std::env::var(TEACHER_KEY_ENV).map_err(|_| TeacherError::MissingKey)?;
        Ok(Self::live_with_key(endpoint, model, &api_key))
    }

    pub fn live_with_key(endpoint: &str, model: &str, api_key: &str) -> Self {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .no_proxy()
            .build()
            .expect("default client construction cannot fail");
        Self {
            mode: Mode::Live {
                endpoint: endpoint.to_string(),
                api_key: api_key.to_string(),
                http,
            },
            model: model.to_string(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            initial_backoff: Duration::from_millis(250),
        }
    }

    pub fn canned<P: AsRef<Path>>(dir: P) -> Self {
        Self {
            mode: Mode::Canned { dir: dir.as_ref().to_path_buf() },
            model: String::new(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            initial_backoff: Duration::from_millis(250),
        }
    }

    pub fn with_backoff(mut self, initial: Duration) -> Self {
        self.initial_backoff = initial;
        self
    }

    pub fn is_canned(&self) -> bool {
        matches!(self.mode, Mode::Canned { .. })
    }

    /// Returns the assistant text for one request.
    pub fn complete(&self, key: &str, messages: &[ChatMessage]) -> Result<String, TeacherError> {
        self.complete_with_stats(key, messages).map(|(text, _)| text)
    }

    /// Like `complete`, also reporting how many backoff retries were taken.
    pub fn complete_with_stats(
        &self,
        key: &str,
        messages: &[ChatMessage],
    ) -> Result<(String, usize), TeacherError> {
        match &self.mode {
            Mode::Canned { dir } => Ok((self.canned_lookup(dir, key)?, 0)),
            Mode::Live { endpoint, api_key, http } => {
                self.live_request(endpoint, api_key, http, messages)
            }
        }
    }

    fn canned_lookup(&self, dir: &Path, key: &str) -> Result<String, TeacherError> {
        let safe: String = key
            .chars()
            .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        for candidate in [dir.join(format!("{safe}.txt")), dir.join("default.txt")] {
            if candidate.is_file() {
                let bytes = std::fs::read(&candidate)?;
                return String::from_utf8(bytes)
                    .map_err(|e| TeacherError::Malformed(format!("fixture not utf-8: {e}")));
            }
        }
        Err(TeacherError::MissingFixture(key.to_string()))
    }

    fn live_request(
        &self,
        endpoint: &str,
        api_key: &str,
        http: &reqwest::blocking::Client,
        messages: &[ChatMessage],
    ) -> Result<(String, usize), TeacherError> {
        let body = serde_json::json!({ "model": self.model, "messages": messages });
        let mut backoff = self.initial_backoff;
        let mut retries = 0usize;
        for attempt in 1..=self.max_attempts {
            let sent = http
                .post(endpoint)
                .bearer_auth(api_key)
                .json(&body)
                .send();
            match sent {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    match status {
                        200..=299 => {
                            let parsed: serde_json::Value = resp
                                .json()
                                .map_err(|e| TeacherError::Malformed(e.to_string()))?;
                            let text = parsed["choices"][0]["message"]["content"]
                                .as_str()
                                .ok_or_else(|| {
                                    TeacherError::Malformed(
                                        "response lacks choices[0].message.content".into(),
                                    )
                                })?;
                            return Ok((text.to_string(), retries));
                        }
                        401 | 403 => return Err(TeacherError::Auth { status }),
                        429 => return Err(TeacherError::RateLimited { status }),
                        400..=499 => {
                            let text = resp.text().unwrap_or_default();
                            return Err(TeacherError::Client { status, body: text });
                        }
                        _ => {
                            if attempt == self.max_attempts {
                                return Err(TeacherError::Server { status, attempts: attempt });
                            }
                        }
                    }
                }
                Err(e) => {
                    if attempt == self.max_attempts {
                        return Err(TeacherError::Transport { attempts: attempt, source: e });
                    }
                }
            }
            std::thread::sleep(backoff);
            backoff *= 2;
            retries += 1;
        }
        unreachable!("retry loop always returns")
    }

    /// Runs many requests with bounded parallelism (in-flight cap), keeping
    /// result order aligned with the input order.
    pub fn complete_many(
        &self,
        jobs: &[TeacherJob],
        parallelism: usize,
    ) -> Vec<Result<String, TeacherError>> {
        let workers = parallelism.max(1).min(jobs.len().max(1));
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<String, TeacherError>>>> =
            Mutex::new((0..jobs.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let out = self.complete(&jobs[i].key, &jobs[i].messages);
                    results.lock().unwrap()[i] = Some(out);
                });
            }
        });
        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every job was executed"))
            .collect()
    }
}
