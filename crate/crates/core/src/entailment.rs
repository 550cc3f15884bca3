//! Entailment prompts, chat-completion backends and verdict parsing.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

/// Bumped whenever the prompt text changes; part of the verdict cache key.
pub const PROMPT_VERSION: &str = "entail-v1";

pub const SYSTEM_INSTRUCTION: &str = "You answer questions about privacy policies";

pub const EVIDENCE_INSTRUCTION: &str = "Give evidence by providing all the source ids that are used to answer the question in the format of - Evidence:[2,3,7,...]";

pub const ANSWER_INSTRUCTION: &str = "Begin your answer with \"Yes\" or \"No\".";

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed backend response: {0}")]
    BadResponse(String),
    #[error("oracle has no answer for policy {policy_id:?}, hypothesis {hypothesis:?}")]
    NoAnswer {
        policy_id: String,
        hypothesis: String,
    },
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum EntailError {
    #[error("invalid query: {0}")]
    InvalidQuery(&'static str),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("response begins with neither Yes nor No: {raw:?}")]
    Unparseable { raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Identifies what a request is about. Never sent over the wire; in-process
/// backends (oracles) key their answers on it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RequestTag {
    pub policy_id: String,
    pub hypothesis: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub tag: Option<RequestTag>,
}

/// A chat-completion backend. Implementations must tolerate concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_id: String::new(),
            temperature: 0.0,
            timeout_secs: 120,
            max_retries: 2,
            api_key_env: None,
            max_in_flight: 4,
        }
    }
}

/// OpenAI-style `POST {base_url}/chat/completions`.
#[cfg(feature = "http")]
pub struct HttpChatBackend {
    config: BackendConfig,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[cfg(feature = "http")]
impl HttpChatBackend {
    pub fn new(config: BackendConfig) -> Self {
        let api_key = config
            .api_key_env
            .as_deref()
            .and_then(|name| std::env::var(name).ok());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        Self {
            config,
            api_key,
            agent,
        }
    }

    fn call_once(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.agent.post(url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let body = serde_json::json!({
            "model": self.config.model_id,
            "messages": request.messages,
            "temperature": self.config.temperature,
        });
        let value: serde_json::Value = req
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::BadResponse(e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::BadResponse("missing choices[0].message.content".into()))
    }
}

#[cfg(feature = "http")]
impl ChatBackend for HttpChatBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.model_id)
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let mut attempt = 0;
        loop {
            match self.call_once(request) {
                Err(BackendError::Transport(_)) if attempt < self.config.max_retries => {
                    attempt += 1
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub value: bool,
    #[serde(default)]
    pub evidence: Vec<usize>,
}

/// Answers from a ground-truth map keyed by (policy id, hypothesis digest).
#[derive(Debug, Clone, Default)]
pub struct OracleBackend {
    answers: HashMap<(String, String), OracleAnswer>,
    fallback: Option<bool>,
}

impl OracleBackend {
    /// Unknown keys are a [`BackendError::NoAnswer`].
    pub fn strict() -> Self {
        Self::default()
    }

    /// Unknown keys answer `fallback` with no evidence.
    pub fn with_fallback(fallback: bool) -> Self {
        Self {
            answers: HashMap::new(),
            fallback: Some(fallback),
        }
    }

    pub fn insert(&mut self, policy_id: &str, hypothesis: &str, answer: OracleAnswer) {
        self.answers.insert(
            (policy_id.to_string(), sha256_hex(hypothesis.as_bytes())),
            answer,
        );
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn answer_text(answer: &OracleAnswer) -> String {
        let ids = answer
            .evidence
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let head = if answer.value { "Yes" } else { "No" };
        format!("{head}. Evidence:[{ids}]")
    }
}

impl ChatBackend for OracleBackend {
    fn id(&self) -> String {
        "oracle".into()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let tag = request
            .tag
            .as_ref()
            .ok_or_else(|| BackendError::BadResponse("oracle needs a tagged request".into()))?;
        let key = (tag.policy_id.clone(), sha256_hex(tag.hypothesis.as_bytes()));
        match (self.answers.get(&key), self.fallback) {
            (Some(a), _) => Ok(Self::answer_text(a)),
            (None, Some(v)) => Ok(Self::answer_text(&OracleAnswer {
                value: v,
                evidence: vec![],
            })),
            (None, None) => Err(BackendError::NoAnswer {
                policy_id: tag.policy_id.clone(),
                hypothesis: tag.hypothesis.clone(),
            }),
        }
    }
}

/// Always returns the same text.
#[derive(Debug, Clone)]
pub struct FixedBackend(pub String);

impl ChatBackend for FixedBackend {
    fn id(&self) -> String {
        "fixed".into()
    }

    fn complete(&self, _request: &ChatRequest) -> Result<String, BackendError> {
        Ok(self.0.clone())
    }
}

/// Wraps a backend and counts calls.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicUsize,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntailmentQuery {
    pub policy_id: String,
    pub hypothesis: String,
    /// (segment index, segment text)
    pub context: Vec<(usize, String)>,
}

impl EntailmentQuery {
    pub fn validate(&self) -> Result<(), EntailError> {
        if self.context.is_empty() {
            return Err(EntailError::InvalidQuery("context is empty"));
        }
        let unique: BTreeSet<_> = self.context.iter().map(|(i, _)| *i).collect();
        if unique.len() != self.context.len() {
            return Err(EntailError::InvalidQuery("duplicate context indices"));
        }
        Ok(())
    }

    pub fn context_indices(&self) -> BTreeSet<usize> {
        self.context.iter().map(|(i, _)| *i).collect()
    }
}

/// Builds the user prompt: each context segment tagged with
/// ` [source_id:i]`, concatenated in ascending index order.
pub fn build_prompt(query: &EntailmentQuery) -> String {
    let mut context: Vec<&(usize, String)> = query.context.iter().collect();
    context.sort_by_key(|(i, _)| *i);
    let policy = context
        .iter()
        .map(|(i, text)| format!("{text} [source_id:{i}]"))
        .collect::<Vec<_>>()
        .join("\n");
    format!(
        "According to the Privacy Policy {policy}, is the following statement True? {}\n{EVIDENCE_INSTRUCTION}\n{ANSWER_INSTRUCTION}",
        query.hypothesis
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub value: bool,
    pub evidence: Vec<usize>,
    pub raw: String,
    /// Cited ids outside the query context, dropped.
    pub dropped_evidence: usize,
}

fn evidence_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)evidence\s*:\s*\[([^\]]*)\]").expect("valid regex"))
}

fn starts_with_word(text: &str, word: &str) -> bool {
    text.get(..word.len())
        .is_some_and(|head| head.eq_ignore_ascii_case(word))
        && !text[word.len()..]
            .chars()
            .next()
            .is_some_and(char::is_alphanumeric)
}

/// Parses a Yes/No answer. Evidence comes from the last `Evidence:[...]`
/// and is filtered to `context`.
pub fn parse_verdict(raw: &str, context: &BTreeSet<usize>) -> Result<Verdict, EntailError> {
    let head = raw.trim_start_matches(|c: char| {
        c.is_whitespace() || matches!(c, '"' | '\'' | '`' | '*' | '\u{201C}' | '\u{2018}')
    });
    let value = if starts_with_word(head, "yes") {
        true
    } else if starts_with_word(head, "no") {
        false
    } else {
        return Err(EntailError::Unparseable {
            raw: raw.to_string(),
        });
    };
    let mut evidence = Vec::new();
    let mut dropped_evidence = 0;
    if let Some(caps) = evidence_pattern().captures_iter(raw).last() {
        for num in caps[1]
            .split(|c: char| !c.is_ascii_digit())
            .filter(|s| !s.is_empty())
        {
            match num.parse::<usize>() {
                Ok(i) if context.contains(&i) => {
                    if !evidence.contains(&i) {
                        evidence.push(i);
                    }
                }
                _ => dropped_evidence += 1,
            }
        }
    }
    Ok(Verdict {
        value,
        evidence,
        raw: raw.to_string(),
        dropped_evidence,
    })
}

pub fn entailment_request(query: &EntailmentQuery) -> ChatRequest {
    ChatRequest {
        messages: vec![
            ChatMessage::system(SYSTEM_INSTRUCTION),
            ChatMessage::user(build_prompt(query)),
        ],
        tag: Some(RequestTag {
            policy_id: query.policy_id.clone(),
            hypothesis: query.hypothesis.clone(),
        }),
    }
}

/// Prompt, call, parse. No retry on unparseable output.
pub fn entail(backend: &dyn ChatBackend, query: &EntailmentQuery) -> Result<Verdict, EntailError> {
    query.validate()?;
    let raw = backend.complete(&entailment_request(query))?;
    parse_verdict(&raw, &query.context_indices())
}
