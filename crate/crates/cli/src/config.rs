//! Backend configuration: a TOML file with per-flag overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use policylr_core::cache::{Cache, FileCache, MemoryCache};
use policylr_core::entailment::{BackendConfig, ChatBackend, OracleAnswer, OracleBackend};
use policylr_core::retrieval::{Embedder, MockEmbedder};
use policylr_core::taxonomy::{AtomicFormula, Taxonomy};
use policylr_core::translation::{FewShotFile, Translator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ChatKind {
    #[default]
    Http,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    #[default]
    Template,
    Llm,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ChatSection {
    kind: ChatKind,
    #[serde(flatten)]
    settings: BackendConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default)]
struct EmbeddingSection {
    kind: EmbedderKind,
    dimension: usize,
    base_url: Option<String>,
    model_id: Option<String>,
    api_key_env: Option<String>,
    timeout_secs: u64,
    max_retries: u32,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Mock,
            dimension: MockEmbedder::DEFAULT_DIMENSION,
            base_url: None,
            model_id: None,
            api_key_env: None,
            timeout_secs: 60,
            max_retries: 2,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct TranslationSection {
    kind: TranslatorKind,
    few_shot: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct OracleSection {
    answers: Option<PathBuf>,
    fallback: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    chat: ChatSection,
    embedding: EmbeddingSection,
    translation: TranslationSection,
    oracle: OracleSection,
}

/// Flags shared by commands that talk to models. Each overrides the
/// matching config-file setting.
#[derive(Debug, Clone, Default, Args)]
pub struct BackendArgs {
    /// TOML backend configuration file.
    #[arg(long = "backend", value_name = "CFG")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub chat: Option<ChatKind>,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long, value_name = "VAR")]
    pub api_key_env: Option<String>,
    #[arg(long, value_enum)]
    pub embedder: Option<EmbedderKind>,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long, value_enum)]
    pub translator: Option<TranslatorKind>,
    #[arg(long, value_name = "FILE")]
    pub few_shot: Option<PathBuf>,
    /// Ground-truth answers file; implies `--chat oracle`.
    #[arg(long, value_name = "FILE")]
    pub oracle: Option<PathBuf>,
    /// Answer for oracle misses instead of failing them.
    #[arg(long)]
    pub oracle_fallback: Option<bool>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Persistent cache file; defaults to an in-memory cache.
    #[arg(long, value_name = "FILE")]
    pub cache: Option<PathBuf>,
}

/// Fully resolved backend settings.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub chat_kind: ChatKind,
    pub chat: BackendConfig,
    pub embedder_kind: EmbedderKind,
    pub dimension: usize,
    pub embed_base_url: String,
    pub embed_model: String,
    pub embed_api_key_env: Option<String>,
    pub embed_timeout_secs: u64,
    pub embed_max_retries: u32,
    pub translator: TranslatorKind,
    pub few_shot: Option<PathBuf>,
    pub oracle_answers: Option<PathBuf>,
    pub oracle_fallback: Option<bool>,
    pub cache: Option<PathBuf>,
}

fn relative_to(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl BackendArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        let (file, base) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let cfg: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                (cfg, path.parent().map(Path::to_path_buf))
            }
            None => (FileConfig::default(), None),
        };
        let base = base.as_deref();
        let mut chat = file.chat.settings;
        if let Some(v) = &self.base_url {
            chat.base_url = v.clone();
        }
        if let Some(v) = &self.model {
            chat.model_id = v.clone();
        }
        if let Some(v) = &self.api_key_env {
            chat.api_key_env = Some(v.clone());
        }
        if let Some(v) = self.max_in_flight {
            chat.max_in_flight = v;
        }
        if chat.max_in_flight == 0 {
            bail!("max_in_flight must be at least 1");
        }
        let oracle_answers = self
            .oracle
            .clone()
            .or_else(|| file.oracle.answers.map(|p| relative_to(base, p)));
        let chat_kind = match (self.chat, &self.oracle) {
            (Some(k), _) => k,
            (None, Some(_)) => ChatKind::Oracle,
            (None, None) => file.chat.kind,
        };
        let e = file.embedding;
        Ok(Resolved {
            chat_kind,
            embed_base_url: e.base_url.unwrap_or_else(|| chat.base_url.clone()),
            embed_model: e.model_id.unwrap_or_default(),
            embed_api_key_env: e.api_key_env.or_else(|| chat.api_key_env.clone()),
            embed_timeout_secs: e.timeout_secs,
            embed_max_retries: e.max_retries,
            chat,
            embedder_kind: self.embedder.unwrap_or(e.kind),
            dimension: self.dimension.unwrap_or(e.dimension),
            translator: self.translator.unwrap_or(file.translation.kind),
            few_shot: self
                .few_shot
                .clone()
                .or_else(|| file.translation.few_shot.map(|p| relative_to(base, p))),
            oracle_answers,
            oracle_fallback: self.oracle_fallback.or(file.oracle.fallback),
            cache: self.cache.clone(),
        })
    }
}

impl Resolved {
    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        match self.embedder_kind {
            EmbedderKind::Mock => {
                if self.dimension == 0 {
                    bail!("embedding dimension must be at least 1");
                }
                Ok(Box::new(MockEmbedder::new(self.dimension)))
            }
            EmbedderKind::Http => self.http_embedder(),
        }
    }

    #[cfg(feature = "http")]
    fn http_embedder(&self) -> Result<Box<dyn Embedder>> {
        if self.embed_model.is_empty() {
            bail!("embedding.model_id is required for the http embedder");
        }
        let key = self.embed_api_key_env.as_deref().and_then(|v| std::env::var(v).ok());
        Ok(Box::new(policylr_core::retrieval::HttpEmbedder::new(
            &self.embed_base_url,
            &self.embed_model,
            key,
            std::time::Duration::from_secs(self.embed_timeout_secs),
            self.embed_max_retries,
        )))
    }

    #[cfg(not(feature = "http"))]
    fn http_embedder(&self) -> Result<Box<dyn Embedder>> {
        bail!("this build has no http support")
    }

    #[cfg(feature = "http")]
    pub fn http_chat(&self) -> Result<Box<dyn ChatBackend>> {
        if self.chat.model_id.is_empty() {
            bail!("chat.model_id (or --model) is required for the http backend");
        }
        Ok(Box::new(policylr_core::entailment::HttpChatBackend::new(self.chat.clone())))
    }

    #[cfg(not(feature = "http"))]
    pub fn http_chat(&self) -> Result<Box<dyn ChatBackend>> {
        bail!("this build has no http support")
    }

    pub fn cache(&self) -> Result<CacheHandle> {
        Ok(match &self.cache {
            Some(p) => CacheHandle::File(
                FileCache::open(p).with_context(|| format!("opening cache {}", p.display()))?,
            ),
            None => CacheHandle::Memory(MemoryCache::new()),
        })
    }

    pub fn few_shot(&self) -> Result<FewShotFile> {
        match &self.few_shot {
            Some(p) => Ok(serde_json::from_str(&read(p)?)
                .with_context(|| format!("parsing {}", p.display()))?),
            None => Ok(FewShotFile::default()),
        }
    }
}

pub enum CacheHandle {
    Memory(MemoryCache),
    File(FileCache),
}

impl CacheHandle {
    pub fn as_cache(&self) -> &dyn Cache {
        match self {
            CacheHandle::Memory(c) => c,
            CacheHandle::File(c) => c,
        }
    }

    pub fn flush(&self) -> Result<()> {
        if let CacheHandle::File(c) = self {
            c.flush().context("writing cache file")?;
        }
        Ok(())
    }
}

/// One ground-truth answer, keyed by either the atomic id (translated with
/// the active translator) or the literal hypothesis text.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleRow {
    policy_id: String,
    #[serde(default)]
    atomic_id: Option<String>,
    #[serde(default)]
    hypothesis: Option<String>,
    value: bool,
    #[serde(default)]
    evidence: Vec<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OracleFile {
    #[serde(default, rename = "note")]
    _note: Option<String>,
    #[serde(default)]
    fallback: Option<bool>,
    answers: Vec<OracleRow>,
}

pub fn load_oracle(
    path: &Path,
    fallback_override: Option<bool>,
    taxonomy: Option<&Taxonomy>,
    translator: Option<&dyn Translator>,
) -> Result<OracleBackend> {
    let file: OracleFile = serde_json::from_str(&read(path)?)
        .with_context(|| format!("parsing oracle file {}", path.display()))?;
    let mut oracle = match fallback_override.or(file.fallback) {
        Some(v) => OracleBackend::with_fallback(v),
        None => OracleBackend::strict(),
    };
    let mut translated: BTreeMap<String, String> = BTreeMap::new();
    for (n, row) in file.answers.into_iter().enumerate() {
        let hypothesis = match (row.atomic_id, row.hypothesis) {
            (Some(_), Some(_)) | (None, None) => {
                bail!("oracle answer {n}: give exactly one of atomic_id and hypothesis")
            }
            (None, Some(h)) => h,
            (Some(id), None) => {
                let (Some(t), Some(tr)) = (taxonomy, translator) else {
                    bail!("oracle answer {n}: atomic ids need a taxonomy");
                };
                if let Some(h) = translated.get(&id) {
                    h.clone()
                } else {
                    let atomic = AtomicFormula::parse_id(&id)
                        .with_context(|| format!("oracle answer {n}"))?;
                    let h = tr
                        .translate(&atomic, t)
                        .with_context(|| format!("oracle answer {n}"))?
                        .text;
                    translated.insert(id, h.clone());
                    h
                }
            }
        };
        oracle.insert(
            &row.policy_id,
            &hypothesis,
            OracleAnswer {
                value: row.value,
                evidence: row.evidence,
            },
        );
    }
    Ok(oracle)
}

pub fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}
