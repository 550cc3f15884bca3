//! Natural-language hypotheses for atomic formulae.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{key_digest, Cache};
use crate::entailment::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::taxonomy::{AtomicError, AtomicFormula, Taxonomy};

pub const TRANSLATION_SYSTEM_PROMPT: &str = "You are a privacy policy expert. A privacy setting consists of a combination of attributes. Each of these has an associated value, along with a description of what that value means. You have to construct a concise statement that describes the setting. Only output the statement.";

#[derive(Debug, Error)]
pub enum TranslationError {
    #[error(transparent)]
    Atomic(#[from] AtomicError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("translator returned an empty statement for {0}")]
    EmptyResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Statement {
    pub atomic_id: String,
    pub text: String,
}

pub trait Translator: Send + Sync {
    /// Participates in downstream cache keys.
    fn id(&self) -> String;
    fn translate(
        &self,
        atomic: &AtomicFormula,
        taxonomy: &Taxonomy,
    ) -> Result<Statement, TranslationError>;
}

/// `The {category} practice satisfies: {attr} is "{value}" ({description}); ...`
pub fn translate_template(
    atomic: &AtomicFormula,
    taxonomy: &Taxonomy,
) -> Result<Statement, TranslationError> {
    let atomic = taxonomy.resolve_atomic(atomic)?;
    let category = taxonomy
        .category(&atomic.category)
        .expect("resolved atomic has a category");
    let clauses = atomic
        .bindings
        .iter()
        .map(|(attr, value)| {
            let description = category
                .attribute(attr)
                .and_then(|a| a.description(value))
                .expect("resolved binding has a description");
            format!("{attr} is \"{value}\" ({description})")
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(Statement {
        atomic_id: atomic.id(),
        text: format!("The {} practice satisfies: {clauses}", atomic.category),
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TemplateTranslator;

impl Translator for TemplateTranslator {
    fn id(&self) -> String {
        "template-v1".into()
    }

    fn translate(
        &self,
        atomic: &AtomicFormula,
        taxonomy: &Taxonomy,
    ) -> Result<Statement, TranslationError> {
        translate_template(atomic, taxonomy)
    }
}

/// One demonstration for the model-backed translator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotFile {
    #[serde(default)]
    pub note: Option<String>,
    pub examples: Vec<FewShotExample>,
}

/// `Attribute: a, Value: v, Description: d` lines, one per binding.
pub fn attribute_lines(
    atomic: &AtomicFormula,
    taxonomy: &Taxonomy,
) -> Result<String, TranslationError> {
    let atomic = taxonomy.resolve_atomic(atomic)?;
    let category = taxonomy
        .category(&atomic.category)
        .expect("resolved atomic has a category");
    Ok(atomic
        .bindings
        .iter()
        .map(|(attr, value)| {
            let description = category
                .attribute(attr)
                .and_then(|a| a.description(value))
                .expect("resolved binding has a description");
            format!("Attribute: {attr}, Value: {value}, Description: {description}")
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

pub fn translation_user_message(
    atomic: &AtomicFormula,
    taxonomy: &Taxonomy,
    few_shot: &[FewShotExample],
) -> Result<String, TranslationError> {
    let mut msg = String::new();
    for ex in few_shot {
        msg.push_str(&format!("{}\nStatement: {}\n\n", ex.input.trim_end(), ex.output.trim()));
    }
    msg.push_str(&attribute_lines(atomic, taxonomy)?);
    Ok(msg)
}

/// Model-backed translation, cached by (atomic id, taxonomy fingerprint,
/// mode, model id).
pub struct LlmTranslator<'a> {
    backend: &'a dyn ChatBackend,
    few_shot: Vec<FewShotExample>,
    cache: &'a dyn Cache,
}

impl<'a> LlmTranslator<'a> {
    pub fn new(backend: &'a dyn ChatBackend, few_shot: Vec<FewShotExample>, cache: &'a dyn Cache) -> Self {
        Self {
            backend,
            few_shot,
            cache,
        }
    }

    fn cache_key(&self, atomic_id: &str, taxonomy: &Taxonomy) -> String {
        key_digest(&[
            "translation",
            atomic_id,
            taxonomy.fingerprint(),
            "llm",
            &self.backend.id(),
        ])
    }
}

impl Translator for LlmTranslator<'_> {
    fn id(&self) -> String {
        format!("llm:{}", self.backend.id())
    }

    fn translate(
        &self,
        atomic: &AtomicFormula,
        taxonomy: &Taxonomy,
    ) -> Result<Statement, TranslationError> {
        let atomic = taxonomy.resolve_atomic(atomic)?;
        let atomic_id = atomic.id();
        let key = self.cache_key(&atomic_id, taxonomy);
        if let Some(text) = self.cache.get(&key) {
            return Ok(Statement { atomic_id, text });
        }
        let request = ChatRequest {
            messages: vec![
                ChatMessage::system(TRANSLATION_SYSTEM_PROMPT),
                ChatMessage::user(translation_user_message(&atomic, taxonomy, &self.few_shot)?),
            ],
            tag: None,
        };
        let text = self.backend.complete(&request)?.trim().to_string();
        if text.is_empty() {
            return Err(TranslationError::EmptyResponse(atomic_id));
        }
        self.cache.put(&key, text.clone());
        Ok(Statement { atomic_id, text })
    }
}
