//! Browser bindings for three read-only operations: exploring atomic counts
//! under a cap, evaluating a formula over a compiled truth table, and
//! retrieving policy segments with the hashed bag-of-words embedder.
//!
//! Every export takes and returns strings. Results are JSON; errors are a
//! plain message the page shows as is. The same functions are callable
//! natively, which is how they are tested.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;

use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

use policylr_core::corpus::segment_text;
use policylr_core::logic::{desugar, desugar_with_atomics, parse_formula, valuation, TruthTable};
use policylr_core::retrieval::{build_index, expand_neighbors, retrieve, MockEmbedder};
use policylr_core::taxonomy::{generate_atomics, Taxonomy};

/// Ids listed in full before the atomic list is cut short.
const SAMPLE_LIMIT: usize = 50;

pub const EXAMPLE_TAXONOMY: &str = include_str!("../../../fixtures/taxonomy/opp-mini.json");
pub const EXAMPLE_TABLE: &str = include_str!("../../../fixtures/tables/acme-2024.table.json");
pub const EXAMPLE_POLICY: &str = include_str!("../../../fixtures/policies/acme-2023.txt");

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string_pretty(value).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn example_taxonomy() -> String {
    EXAMPLE_TAXONOMY.to_string()
}

#[wasm_bindgen]
pub fn example_table() -> String {
    EXAMPLE_TABLE.to_string()
}

#[wasm_bindgen]
pub fn example_policy() -> String {
    EXAMPLE_POLICY.to_string()
}

#[derive(Serialize)]
struct CategoryCount {
    category: String,
    attributes: usize,
    uncapped: usize,
    capped: usize,
}

#[derive(Serialize)]
struct AtomicSummary {
    fingerprint: String,
    cap: Option<usize>,
    uncapped: usize,
    count: usize,
    categories: Vec<CategoryCount>,
    sample: Vec<String>,
}

/// Atomic counts per category, with and without the cap. `cap = 0` means
/// uncapped.
#[wasm_bindgen]
pub fn explore_atomics(taxonomy_json: &str, cap: u32) -> Result<String, String> {
    let t = Taxonomy::from_json_str(taxonomy_json).map_err(|e| e.to_string())?;
    let cap = NonZeroUsize::new(cap as usize);
    let all = generate_atomics(&t, None);
    let capped = generate_atomics(&t, cap);
    let tally = |atomics: &[policylr_core::taxonomy::AtomicFormula]| {
        let mut m = BTreeMap::<&str, usize>::new();
        for a in atomics {
            *m.entry(a.category.as_str()).or_default() += 1;
        }
        m.into_iter().map(|(k, v)| (k.to_string(), v)).collect::<BTreeMap<_, _>>()
    };
    let (full, part) = (tally(&all), tally(&capped));
    let categories = t
        .categories()
        .iter()
        .map(|c| CategoryCount {
            category: c.name.clone(),
            attributes: c.attributes.len(),
            uncapped: full.get(&c.name).copied().unwrap_or(0),
            capped: part.get(&c.name).copied().unwrap_or(0),
        })
        .collect();
    to_json(&AtomicSummary {
        fingerprint: t.fingerprint().to_string(),
        cap: cap.map(NonZeroUsize::get),
        uncapped: all.len(),
        count: capped.len(),
        categories,
        sample: capped.iter().take(SAMPLE_LIMIT).map(|a| a.id()).collect(),
    })
}

#[derive(Serialize)]
struct TrueAtom {
    id: String,
    evidence: Vec<usize>,
}

#[derive(Serialize)]
struct Evaluation {
    policy_id: String,
    parsed: String,
    desugared: String,
    value: bool,
    /// Atoms of the desugared formula that hold, with their evidence.
    supporting: Vec<TrueAtom>,
}

/// Parses `formula`, desugars it against the table's atomics (and the
/// taxonomy when one is given) and evaluates it.
#[wasm_bindgen]
pub fn evaluate_formula(formula: &str, table_json: &str, taxonomy_json: &str) -> Result<String, String> {
    let table = TruthTable::from_json(table_json).map_err(|e| e.to_string())?;
    let parsed = parse_formula(formula).map_err(|e| e.to_string())?;
    let atomics = table.atomics();
    let desugared = if taxonomy_json.trim().is_empty() {
        desugar_with_atomics(&parsed, &atomics)
    } else {
        let t = Taxonomy::from_json_str(taxonomy_json).map_err(|e| e.to_string())?;
        desugar(&parsed, &t, &atomics)
    }
    .map_err(|e| e.to_string())?;
    let value = valuation(&desugared, &table).map_err(|e| e.to_string())? == 1;
    let supporting = desugared
        .atom_ids()
        .into_iter()
        .filter(|id| table.value(id) == Some(true))
        .map(|id| TrueAtom {
            evidence: table.entries[&id].evidence.clone(),
            id,
        })
        .collect();
    to_json(&Evaluation {
        policy_id: table.policy_id.clone(),
        parsed: parsed.render(),
        desugared: desugared.render(),
        value,
        supporting,
    })
}

#[derive(Serialize)]
struct Hit {
    index: usize,
    score: f64,
}

#[derive(Serialize)]
struct Passage {
    index: usize,
    text: String,
    retrieved: bool,
}

#[derive(Serialize)]
struct Retrieval {
    embedder: String,
    segments: usize,
    hits: Vec<Hit>,
    context: Vec<Passage>,
}

/// Segments `policy`, ranks segments against `query` and widens the hits
/// with their neighbours, as the compiler does before asking for entailment.
#[wasm_bindgen]
pub fn retrieve_context(
    policy: &str,
    query: &str,
    k: u32,
    max_tokens: u32,
    dimension: u32,
) -> Result<String, String> {
    if max_tokens == 0 || dimension == 0 {
        return Err("max_tokens and dimension must be positive".into());
    }
    let segments = segment_text(policy, max_tokens as usize);
    if segments.is_empty() {
        return Err("the policy text has no words".into());
    }
    let embedder = MockEmbedder::new(dimension as usize);
    let index = build_index(&segments, &embedder).map_err(|e| e.to_string())?;
    let hits = retrieve(&index, query, k as usize, &embedder).map_err(|e| e.to_string())?;
    let ranked: Vec<usize> = hits.iter().map(|h| h.index).collect();
    let context = expand_neighbors(&ranked, segments.len())
        .into_iter()
        .map(|i| Passage {
            index: i,
            text: segments[i].text.clone(),
            retrieved: ranked.contains(&i),
        })
        .collect();
    to_json(&Retrieval {
        embedder: index.embedder_id().to_string(),
        segments: segments.len(),
        hits: hits.iter().map(|h| Hit { index: h.index, score: h.score }).collect(),
        context,
    })
}
