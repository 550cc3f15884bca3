//! Entailment benchmark: evaluation sets with contrast-pair negatives,
//! confusion metrics and evidence recall.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{collapse_whitespace, segment, PolicyDocument, Segment};
use crate::entailment::{
    entail, BackendError, ChatBackend, EntailError, EntailmentQuery, OracleAnswer, OracleBackend,
    Verdict,
};
use crate::retrieval::{build_index, expand_neighbors, retrieve, Embedder, RetrievalError, VectorIndex};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("dataset file: {0}")]
    Dataset(#[from] serde_json::Error),
    #[error("contrast pair references unknown case {0:?}")]
    DanglingPair(String),
    #[error("contrast pair pairs case {0:?} with itself")]
    SelfPair(String),
    #[error("annotation references unknown case {0:?}")]
    UnknownCase(String),
    #[error("case {0:?} has an empty statement")]
    EmptyStatement(String),
    #[error("duplicate case id {0:?}")]
    DuplicateCase(String),
    #[error("no policy {0:?} in the corpus")]
    MissingPolicy(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Case {
    pub case_id: String,
    pub statement: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub policy_id: String,
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excerpt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastPair {
    pub case_id_a: String,
    pub case_id_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    pub policy_id: String,
    pub case_id: String,
    pub label: bool,
    /// Only positives carry excerpts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excerpt: Option<String>,
}

pub fn load_cases(text: &str) -> Result<Vec<Case>, BenchError> {
    let cases: Vec<Case> = serde_json::from_str(text)?;
    let mut seen = HashSet::new();
    for c in &cases {
        if c.statement.trim().is_empty() {
            return Err(BenchError::EmptyStatement(c.case_id.clone()));
        }
        if !seen.insert(c.case_id.as_str()) {
            return Err(BenchError::DuplicateCase(c.case_id.clone()));
        }
    }
    Ok(cases)
}

pub fn load_annotations(text: &str) -> Result<Vec<Annotation>, BenchError> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_pairs(text: &str) -> Result<Vec<ContrastPair>, BenchError> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub positives: usize,
    pub seed: u64,
}

/// Positives come from annotations. Each positive `(policy, a)` with a
/// contrast pair `(a, b)` yields the negative `(policy, b)`, unless `b` is
/// itself annotated positive for that policy. Positives precede negatives.
pub fn build_eval_set(
    cases: &[Case],
    annotations: &[Annotation],
    pairs: &[ContrastPair],
    sampling: Option<Sampling>,
) -> Result<Vec<EvalInstance>, BenchError> {
    let known: HashSet<&str> = cases.iter().map(|c| c.case_id.as_str()).collect();
    let mut partners: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in pairs {
        for id in [&p.case_id_a, &p.case_id_b] {
            if !known.contains(id.as_str()) {
                return Err(BenchError::DanglingPair(id.clone()));
            }
        }
        if p.case_id_a == p.case_id_b {
            return Err(BenchError::SelfPair(p.case_id_a.clone()));
        }
        partners.entry(&p.case_id_a).or_default().push(&p.case_id_b);
        partners.entry(&p.case_id_b).or_default().push(&p.case_id_a);
    }

    let mut seen = HashSet::new();
    let mut positives = Vec::new();
    for a in annotations {
        if !known.contains(a.case_id.as_str()) {
            return Err(BenchError::UnknownCase(a.case_id.clone()));
        }
        if seen.insert((a.policy_id.clone(), a.case_id.clone())) {
            positives.push(EvalInstance {
                policy_id: a.policy_id.clone(),
                case_id: a.case_id.clone(),
                label: true,
                excerpt: a.excerpt.clone(),
            });
        }
    }
    if let Some(s) = sampling.filter(|s| s.positives < positives.len()) {
        let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
        let indices: Vec<usize> = (0..positives.len()).collect();
        let mut chosen: Vec<usize> = indices.choose_multiple(&mut rng, s.positives).copied().collect();
        chosen.sort_unstable();
        positives = chosen.into_iter().map(|i| positives[i].clone()).collect();
    }

    let positive_keys: HashSet<(&str, &str)> = annotations
        .iter()
        .map(|a| (a.policy_id.as_str(), a.case_id.as_str()))
        .collect();
    let mut negative_keys = HashSet::new();
    let mut negatives = Vec::new();
    for pos in &positives {
        for &b in partners.get(pos.case_id.as_str()).into_iter().flatten() {
            if positive_keys.contains(&(pos.policy_id.as_str(), b)) {
                continue;
            }
            if negative_keys.insert((pos.policy_id.clone(), b.to_string())) {
                negatives.push(EvalInstance {
                    policy_id: pos.policy_id.clone(),
                    case_id: b.to_string(),
                    label: false,
                    excerpt: None,
                });
            }
        }
    }
    positives.extend(negatives);
    Ok(positives)
}

/// Confusion counts with label `true` as the positive class. Ratios are
/// `None` when their denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
        }
    }

    pub fn record(&mut self, label: bool, predicted: bool) {
        let (tp, fp, fn_, tn) = match (label, predicted) {
            (true, true) => (1, 0, 0, 0),
            (false, true) => (0, 1, 0, 0),
            (true, false) => (0, 0, 1, 0),
            (false, false) => (0, 0, 0, 1),
        };
        *self = Self::from_counts(self.tp + tp, self.fp + fp, self.fn_ + fn_, self.tn + tn);
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// What the pipeline saw and said for one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgement {
    /// `None` when the response began with neither Yes nor No.
    pub verdict: Option<Verdict>,
    /// Segment indices given to the model.
    pub context: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub metrics: Metrics,
    pub unparseable: usize,
    pub judgements: Vec<Judgement>,
}

/// Scores `pipeline(policy_id, statement)` over every instance.
pub fn run_eval<F>(
    instances: &[EvalInstance],
    cases: &[Case],
    pipeline: F,
) -> Result<EvalOutcome, BenchError>
where
    F: Fn(&str, &str) -> Result<Judgement, BenchError>,
{
    let statements: BTreeMap<&str, &str> = cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.statement.as_str()))
        .collect();
    let mut metrics = Metrics::default();
    let mut unparseable = 0;
    let mut judgements = Vec::with_capacity(instances.len());
    for inst in instances {
        let statement = statements
            .get(inst.case_id.as_str())
            .ok_or_else(|| BenchError::UnknownCase(inst.case_id.clone()))?;
        let j = pipeline(&inst.policy_id, statement)?;
        match &j.verdict {
            Some(v) => metrics.record(inst.label, v.value),
            None => unparseable += 1,
        }
        judgements.push(j);
    }
    Ok(EvalOutcome {
        metrics,
        unparseable,
        judgements,
    })
}

fn normalize_for_match(text: &str) -> String {
    collapse_whitespace(text).to_lowercase()
}

/// Segments spanned by the first occurrence of `excerpt` in the document
/// formed by the segments, matching case-insensitively on collapsed
/// whitespace.
pub fn locate_excerpt(excerpt: &str, segments: &[Segment]) -> Option<Vec<usize>> {
    let needle = normalize_for_match(excerpt);
    if needle.is_empty() {
        return None;
    }
    let mut haystack = String::new();
    let mut starts = Vec::with_capacity(segments.len());
    for s in segments {
        if !haystack.is_empty() {
            haystack.push(' ');
        }
        starts.push(haystack.len());
        haystack.push_str(&normalize_for_match(&s.text));
    }
    let begin = haystack.find(&needle)?;
    let end = begin + needle.len();
    Some(
        segments
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let s = starts[*i];
                let e = starts.get(i + 1).map_or(haystack.len(), |n| n - 1);
                s < end && begin < e
            })
            .map(|(_, seg)| seg.index)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceRecall {
    /// `hits / eligible`, `None` when nothing is eligible.
    pub recall: Option<f64>,
    pub hits: usize,
    /// Positives whose excerpt segment was in the retrieved context.
    pub eligible: usize,
    pub not_retrieved: usize,
    pub unlocatable: usize,
}

/// Fraction of positives whose excerpt-bearing segment was cited, among
/// those where that segment reached the model at all.
pub fn evidence_recall(
    instances: &[EvalInstance],
    judgements: &[Judgement],
    segments: &BTreeMap<String, Vec<Segment>>,
) -> EvidenceRecall {
    let mut r = EvidenceRecall::default();
    for (inst, j) in instances.iter().zip(judgements) {
        let Some(excerpt) = inst.excerpt.as_deref().filter(|_| inst.label) else {
            continue;
        };
        let located = segments
            .get(&inst.policy_id)
            .and_then(|segs| locate_excerpt(excerpt, segs));
        let Some(spanned) = located else {
            r.unlocatable += 1;
            continue;
        };
        if !spanned.iter().any(|i| j.context.contains(i)) {
            r.not_retrieved += 1;
            continue;
        }
        r.eligible += 1;
        let cited = j.verdict.as_ref().map_or(&[][..], |v| v.evidence.as_slice());
        if spanned.iter().any(|i| cited.contains(i)) {
            r.hits += 1;
        }
    }
    r.recall = (r.eligible > 0).then(|| r.hits as f64 / r.eligible as f64);
    r
}

/// Segmented and indexed policies plus the backends to judge them.
pub struct PolicyPipeline<'a> {
    embedder: &'a dyn Embedder,
    backend: &'a dyn ChatBackend,
    k: usize,
    docs: BTreeMap<String, (Vec<Segment>, VectorIndex)>,
}

impl<'a> PolicyPipeline<'a> {
    pub fn new(
        policies: &[PolicyDocument],
        embedder: &'a dyn Embedder,
        backend: &'a dyn ChatBackend,
        k: usize,
        max_tokens: usize,
    ) -> Result<Self, BenchError> {
        let mut docs = BTreeMap::new();
        for p in policies {
            let segs = segment(p, max_tokens);
            let index = build_index(&segs, embedder)?;
            docs.insert(p.policy_id.clone(), (segs, index));
        }
        Ok(Self {
            embedder,
            backend,
            k,
            docs,
        })
    }

    pub fn segments(&self) -> BTreeMap<String, Vec<Segment>> {
        self.docs
            .iter()
            .map(|(id, (segs, _))| (id.clone(), segs.clone()))
            .collect()
    }

    pub fn judge(&self, policy_id: &str, statement: &str) -> Result<Judgement, BenchError> {
        let (segs, index) = self
            .docs
            .get(policy_id)
            .ok_or_else(|| BenchError::MissingPolicy(policy_id.to_string()))?;
        let ranked: Vec<usize> = retrieve(index, statement, self.k, self.embedder)?
            .into_iter()
            .map(|s| s.index)
            .collect();
        let context = expand_neighbors(&ranked, segs.len());
        let query = EntailmentQuery {
            policy_id: policy_id.to_string(),
            hypothesis: statement.to_string(),
            context: context.iter().map(|&i| (i, segs[i].text.clone())).collect(),
        };
        match entail(self.backend, &query) {
            Ok(v) => Ok(Judgement {
                verdict: Some(v),
                context,
            }),
            Err(EntailError::Unparseable { .. }) => Ok(Judgement {
                verdict: None,
                context,
            }),
            Err(EntailError::Backend(e)) => Err(BenchError::Backend(e)),
            Err(EntailError::InvalidQuery(m)) => {
                Err(BenchError::Backend(BackendError::BadResponse(m.to_string())))
            }
        }
    }
}

/// Ground-truth backend: answers each instance's label, citing the
/// segments that contain its excerpt.
pub fn oracle_from_instances(
    instances: &[EvalInstance],
    cases: &[Case],
    segments: &BTreeMap<String, Vec<Segment>>,
) -> OracleBackend {
    let statements: BTreeMap<&str, &str> = cases
        .iter()
        .map(|c| (c.case_id.as_str(), c.statement.as_str()))
        .collect();
    let mut oracle = OracleBackend::strict();
    for inst in instances {
        let Some(statement) = statements.get(inst.case_id.as_str()) else {
            continue;
        };
        let evidence = inst
            .excerpt
            .as_deref()
            .and_then(|e| segments.get(&inst.policy_id).and_then(|s| locate_excerpt(e, s)))
            .unwrap_or_default();
        oracle.insert(
            &inst.policy_id,
            statement,
            OracleAnswer {
                value: inst.label,
                evidence,
            },
        );
    }
    oracle
}

/// Evaluation set summary for reports.
pub fn label_counts(instances: &[EvalInstance]) -> (usize, usize) {
    let pos = instances.iter().filter(|i| i.label).count();
    (pos, instances.len() - pos)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub model: &'static str,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Published full-corpus result; context only, not reproducible with the
/// shipped fixtures.
pub const REFERENCE_ROW: ReferenceRow = ReferenceRow {
    model: "gemma2-27b",
    k: 10,
    precision: 0.91,
    recall: 0.88,
    f1: 0.90,
};

pub fn distinct_policies(instances: &[EvalInstance]) -> BTreeSet<&str> {
    instances.iter().map(|i| i.policy_id.as_str()).collect()
}
