//! Policy text -> truth table: translate each atomic, retrieve context,
//! entail, record.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{key_digest, Cache};
use crate::corpus::{ingest, segment, IngestError, PolicyDocument, SourceFormat, DEFAULT_MAX_TOKENS};
use crate::digest::sha256_hex;
use crate::entailment::{entail, ChatBackend, EntailmentQuery, PROMPT_VERSION};
use crate::logic::{CompileMeta, Entry, TruthTable};
use crate::retrieval::{build_index, expand_neighbors, retrieve, Embedder, RetrievalError, VectorIndex};
use crate::taxonomy::{AtomicFormula, Taxonomy};
use crate::translation::Translator;

pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileSettings {
    pub k: usize,
    pub max_tokens: usize,
    /// Upper bound on concurrent backend calls.
    pub max_in_flight: usize,
    pub timestamp: Option<String>,
}

impl Default for CompileSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_in_flight: 4,
            timestamp: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("max_tokens must be at least 1")]
    ZeroMaxTokens,
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("building the segment index failed: {0}")]
    Index(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedAtomic {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompileReport {
    pub policy_id: String,
    pub atomics: usize,
    pub segments: usize,
    pub failed: Vec<FailedAtomic>,
    /// Cited evidence ids that fell outside the retrieved context.
    pub evidence_warnings: usize,
    pub entailment_calls: usize,
    pub embedding_calls: usize,
    pub cache_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileOutcome {
    /// Holds only the atomics that compiled; failures are in the report.
    pub table: TruthTable,
    pub report: CompileReport,
}

impl CompileOutcome {
    pub fn is_complete(&self) -> bool {
        self.report.failed.is_empty()
    }
}

/// Atomic id, hypothesis text and any cached verdict.
type Prepared = (String, String, Option<CachedVerdict>);

#[derive(Serialize, Deserialize)]
struct CachedVerdict {
    entry: Entry,
    dropped_evidence: usize,
}

/// Maps `f` over `items` with at most `workers` threads; output order
/// follows input order.
pub(crate) fn parallel_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("slots lock")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("slots lock")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

/// A policy to ingest and compile.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySource {
    pub policy_id: String,
    pub raw: Vec<u8>,
    pub format: SourceFormat,
}

pub struct Compiler<'a> {
    pub taxonomy: &'a Taxonomy,
    pub translator: &'a dyn Translator,
    pub embedder: &'a dyn Embedder,
    pub backend: &'a dyn ChatBackend,
    pub cache: &'a dyn Cache,
    pub settings: CompileSettings,
}

enum AtomicResult {
    Done { entry: Entry, dropped: usize, cached: bool },
    Failed(String),
}

impl Compiler<'_> {
    fn cache_key(&self, text_digest: &str, atomic_id: &str) -> String {
        key_digest(&[
            "verdict",
            text_digest,
            atomic_id,
            &self.embedder.id(),
            &self.backend.id(),
            &self.settings.k.to_string(),
            PROMPT_VERSION,
            &self.translator.id(),
            self.taxonomy.fingerprint(),
            &self.settings.max_tokens.to_string(),
        ])
    }

    fn meta(&self) -> CompileMeta {
        CompileMeta {
            backend_id: self.backend.id(),
            embedder_id: self.embedder.id(),
            k: self.settings.k,
            timestamp: self.settings.timestamp.clone(),
        }
    }

    pub fn compile(
        &self,
        policy: &PolicyDocument,
        atomics: &[AtomicFormula],
    ) -> Result<CompileOutcome, CompileError> {
        self.compile_with_workers(policy, atomics, self.settings.max_in_flight)
    }

    fn compile_with_workers(
        &self,
        policy: &PolicyDocument,
        atomics: &[AtomicFormula],
        workers: usize,
    ) -> Result<CompileOutcome, CompileError> {
        if self.settings.k == 0 {
            return Err(CompileError::ZeroK);
        }
        if self.settings.max_tokens == 0 {
            return Err(CompileError::ZeroMaxTokens);
        }
        let mut report = CompileReport {
            policy_id: policy.policy_id.clone(),
            atomics: atomics.len(),
            ..Default::default()
        };
        let mut table = TruthTable::new(&policy.policy_id, self.taxonomy.fingerprint(), self.meta());
        let text_digest = sha256_hex(policy.text.as_bytes());

        // Translation and cache lookup first: a fully warm cache touches no backend.
        let prepared: Vec<Result<Prepared, (String, String)>> =
            parallel_map(atomics, workers, |atomic| {
                let statement = self
                    .translator
                    .translate(atomic, self.taxonomy)
                    .map_err(|e| (atomic.id(), format!("translation: {e}")))?;
                let id = statement.atomic_id;
                let cached = self
                    .cache
                    .get(&self.cache_key(&text_digest, &id))
                    .and_then(|s| serde_json::from_str::<CachedVerdict>(&s).ok());
                Ok((id, statement.text, cached))
            });

        let misses = prepared
            .iter()
            .filter(|p| matches!(p, Ok((_, _, None))))
            .count();
        let segments = segment(policy, self.settings.max_tokens);
        report.segments = segments.len();
        let index: Option<VectorIndex> = if misses > 0 {
            report.embedding_calls += segments.len();
            Some(build_index(&segments, self.embedder)?)
        } else {
            None
        };

        let entail_calls = AtomicUsize::new(0);
        let query_embeds = AtomicUsize::new(0);
        let results: Vec<(String, AtomicResult)> = parallel_map(&prepared, workers, |p| match p {
            Err((id, reason)) => (id.clone(), AtomicResult::Failed(reason.clone())),
            Ok((id, _, Some(hit))) => (
                id.clone(),
                AtomicResult::Done {
                    entry: hit.entry.clone(),
                    dropped: hit.dropped_evidence,
                    cached: true,
                },
            ),
            Ok((id, hypothesis, None)) => {
                let index = index.as_ref().expect("index built when any atomic misses");
                query_embeds.fetch_add(1, Ordering::SeqCst);
                let ranked = match retrieve(index, hypothesis, self.settings.k, self.embedder) {
                    Ok(r) => r,
                    Err(e) => return (id.clone(), AtomicResult::Failed(format!("retrieval: {e}"))),
                };
                let ranked: Vec<usize> = ranked.iter().map(|s| s.index).collect();
                let context = expand_neighbors(&ranked, segments.len())
                    .into_iter()
                    .map(|i| (i, segments[i].text.clone()))
                    .collect();
                let query = EntailmentQuery {
                    policy_id: policy.policy_id.clone(),
                    hypothesis: hypothesis.clone(),
                    context,
                };
                entail_calls.fetch_add(1, Ordering::SeqCst);
                match entail(self.backend, &query) {
                    Ok(v) => {
                        let entry = Entry {
                            value: v.value,
                            evidence: v.evidence,
                            raw_response_digest: sha256_hex(v.raw.as_bytes()),
                        };
                        let cached = CachedVerdict {
                            entry: entry.clone(),
                            dropped_evidence: v.dropped_evidence,
                        };
                        self.cache.put(
                            &self.cache_key(&text_digest, id),
                            serde_json::to_string(&cached).expect("verdict serializes"),
                        );
                        (
                            id.clone(),
                            AtomicResult::Done {
                                entry,
                                dropped: v.dropped_evidence,
                                cached: false,
                            },
                        )
                    }
                    Err(e) => (id.clone(), AtomicResult::Failed(format!("entailment: {e}"))),
                }
            }
        });

        report.entailment_calls = entail_calls.into_inner();
        report.embedding_calls += query_embeds.into_inner();
        for (id, result) in results {
            match result {
                AtomicResult::Done {
                    entry,
                    dropped,
                    cached,
                } => {
                    report.evidence_warnings += dropped;
                    report.cache_hits += usize::from(cached);
                    table.insert(id, entry);
                }
                AtomicResult::Failed(reason) => report.failed.push(FailedAtomic { id, reason }),
            }
        }
        report.failed.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(CompileOutcome { table, report })
    }

    /// Ingests and compiles every source. Slots line up with the input; a
    /// failing policy does not affect the others.
    pub fn compile_batch(
        &self,
        sources: &[PolicySource],
        atomics: &[AtomicFormula],
    ) -> Vec<Result<CompileOutcome, CompileError>> {
        let budget = self.settings.max_in_flight.max(1);
        let outer = budget.min(sources.len().max(1));
        let inner = (budget / outer).max(1);
        parallel_map(sources, outer, |src| {
            let doc = ingest(&src.policy_id, &src.raw, src.format)?;
            self.compile_with_workers(&doc, atomics, inner)
        })
    }
}
