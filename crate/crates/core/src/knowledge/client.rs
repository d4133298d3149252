use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Anything that answers a question with free text.
pub trait LlmClient: Sync {
    fn ask(&self, question: &str) -> Result<String>;

    /// Answers in question order.
    fn ask_many(&self, questions: &[String]) -> Result<Vec<String>> {
        questions.iter().map(|q| self.ask(q)).collect()
    }
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn ask(&self, question: &str) -> Result<String> {
        (**self).ask(question)
    }

    fn ask_many(&self, questions: &[String]) -> Result<Vec<String>> {
        (**self).ask_many(questions)
    }
}

#[derive(Debug, Clone)]
pub struct LiveConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub max_attempts: u32,
    pub timeout: Duration,
    pub backoff: Duration,
    pub concurrency: usize,
}

impl LiveConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            cache_dir: None,
            max_attempts: 3,
            timeout: Duration::from_secs(60),
            backoff: Duration::from_millis(500),
            concurrency: 4,
        }
    }

    /// Reads `LLM_ENDPOINT`, `LLM_MODEL` and `LLM_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var("LLM_ENDPOINT")
            .map_err(|_| Error::Config("LLM_ENDPOINT is not set".into()))?;
        let model = std::env::var("LLM_MODEL").unwrap_or_else(|_| "chatglm".into());
        let mut cfg = Self::new(endpoint, model);
        cfg.api_key = std::env::var("LLM_API_KEY").ok();
        Ok(cfg)
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// Chat-completion client with bounded retries and an on-disk answer cache.
pub struct LiveClient {
    config: LiveConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

impl LiveClient {
    pub fn new(config: LiveConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    fn cache_path(&self, question: &str) -> Option<PathBuf> {
        let dir = self.config.cache_dir.as_ref()?;
        let mut hasher = Sha256::new();
        hasher.update(self.config.model.as_bytes());
        hasher.update([0u8]);
        hasher.update(question.as_bytes());
        Some(dir.join(format!("{}.json", hex::encode(hasher.finalize()))))
    }

    fn cached(&self, question: &str) -> Option<String> {
        let text = std::fs::read_to_string(self.cache_path(question)?).ok()?;
        let value: serde_json::Value = serde_json::from_str(&text).ok()?;
        value["answer"].as_str().map(str::to_string)
    }

    fn store(&self, question: &str, answer: &str) -> Result<()> {
        let Some(path) = self.cache_path(question) else {
            return Ok(());
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let entry = json!({ "model": self.config.model, "question": question, "answer": answer });
        std::fs::write(&path, entry.to_string()).map_err(|e| Error::io(&path, e))
    }

    fn attempt(&self, question: &str) -> Result<String, Attempt> {
        let body = json!({
            "model": self.config.model,
            "messages": [{ "role": "user", "content": question }],
            "temperature": 0,
        });
        let mut request = self.agent.post(self.config.url());
        if let Some(key) = &self.config.api_key {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            return Err(Attempt::Fatal(format!("HTTP {status}")));
        }
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(format!("bad response body: {e}")))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal("response has no choices[0].message.content".into()))
    }
}

impl LlmClient for LiveClient {
    fn ask(&self, question: &str) -> Result<String> {
        if let Some(answer) = self.cached(question) {
            return Ok(answer);
        }
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            match self.attempt(question) {
                Ok(answer) => {
                    self.store(question, &answer)?;
                    return Ok(answer);
                }
                Err(Attempt::Fatal(msg)) => return Err(Error::Client(msg)),
                Err(Attempt::Transient(msg)) => {
                    log::warn!("LLM request attempt {}/{attempts} failed: {msg}", i + 1);
                    last = msg;
                    if i + 1 < attempts {
                        std::thread::sleep(self.config.backoff * 2u32.pow(i));
                    }
                }
            }
        }
        Err(Error::Client(format!("gave up after {attempts} attempts: {last}")))
    }

    fn ask_many(&self, questions: &[String]) -> Result<Vec<String>> {
        let workers = self.config.concurrency.clamp(1, questions.len().max(1));
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<String>>>> =
            Mutex::new((0..questions.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= questions.len() {
                        break;
                    }
                    let answer = self.ask(&questions[i]);
                    slots.lock().expect("poisoned")[i] = Some(answer);
                });
            }
        });
        slots
            .into_inner()
            .expect("poisoned")
            .into_iter()
            .map(|a| a.expect("every question answered"))
            .collect()
    }
}
