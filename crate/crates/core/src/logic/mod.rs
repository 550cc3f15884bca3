//! Formulas over atomic valuations: parsing, desugaring of attribute
//! predicates, evaluation, consistency diffs and compliance checks.

mod formula;
mod parser;
mod table;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use formula::Formula;
pub use parser::{parse_formula, ParseError};
pub use table::{CompileMeta, Entry, TableFileError, TruthTable};

use crate::taxonomy::{category_of, AtomicError, AtomicFormula, Taxonomy};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DesugarError {
    #[error(transparent)]
    Atomic(#[from] AtomicError),
    #[error("predicate {0} matches no compiled atomic (taxonomy or cap mismatch?)")]
    NoMatchingAtomics(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("atomic {0:?} has no valuation in the truth table")]
    MissingAtomic(String),
    #[error("formula still contains predicate {0}; desugar it first")]
    NotDesugared(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConsistencyError {
    #[error("taxonomy fingerprints differ ({a} vs {b})")]
    FingerprintMismatch { a: String, b: String },
    #[error("atomic sets differ: {only_a} only in first table, {only_b} only in second")]
    AtomicSetMismatch { only_a: usize, only_b: usize },
}

fn pred_text(category: &str, attribute: &str, value: &str) -> String {
    format!("{category}.{attribute} = {value}")
}

/// Replaces each predicate `c.q = v` with the disjunction of all compiled
/// atomics of category `c` binding `q = v`. Atoms are checked against the
/// taxonomy and put in canonical binding order.
pub fn desugar(
    formula: &Formula,
    taxonomy: &Taxonomy,
    atomics: &[AtomicFormula],
) -> Result<Formula, DesugarError> {
    desugar_inner(formula, Some(taxonomy), atomics)
}

/// Like [`desugar`] for callers that only have the compiled atomic set (for
/// example a truth table without its taxonomy). Unknown names surface as
/// [`DesugarError::NoMatchingAtomics`].
pub fn desugar_with_atomics(
    formula: &Formula,
    atomics: &[AtomicFormula],
) -> Result<Formula, DesugarError> {
    desugar_inner(formula, None, atomics)
}

fn desugar_inner(
    formula: &Formula,
    taxonomy: Option<&Taxonomy>,
    atomics: &[AtomicFormula],
) -> Result<Formula, DesugarError> {
    Ok(match formula {
        Formula::Atom(a) => match taxonomy {
            Some(t) => Formula::Atom(t.resolve_atomic(a)?),
            None => Formula::Atom(a.clone()),
        },
        Formula::Pred {
            category,
            attribute,
            value,
        } => {
            if let Some(t) = taxonomy {
                let probe = AtomicFormula {
                    category: category.clone(),
                    bindings: vec![(attribute.clone(), value.clone())],
                };
                t.resolve_atomic(&probe)?;
            }
            joint_disjunction(category, &[(attribute.as_str(), value.as_str())], atomics)?
        }
        Formula::Not(inner) => Formula::not(desugar_inner(inner, taxonomy, atomics)?),
        Formula::And(cs) => Formula::and(
            cs.iter()
                .map(|c| desugar_inner(c, taxonomy, atomics))
                .collect::<Result<_, _>>()?,
        ),
        Formula::Or(cs) => Formula::or(
            cs.iter()
                .map(|c| desugar_inner(c, taxonomy, atomics))
                .collect::<Result<_, _>>()?,
        ),
    })
}

/// Disjunction of the compiled atomics of `category` that bind every given
/// attribute to the given value. A single match is returned as a bare atom.
pub fn joint_disjunction(
    category: &str,
    requirements: &[(&str, &str)],
    atomics: &[AtomicFormula],
) -> Result<Formula, DesugarError> {
    let matching: Vec<Formula> = atomics
        .iter()
        .filter(|a| {
            a.category == category
                && requirements
                    .iter()
                    .all(|(attr, val)| a.binding(attr) == Some(*val))
        })
        .cloned()
        .map(Formula::Atom)
        .collect();
    if matching.is_empty() {
        let text = requirements
            .iter()
            .map(|(a, v)| pred_text(category, a, v))
            .collect::<Vec<_>>()
            .join(" AND ");
        return Err(DesugarError::NoMatchingAtomics(text));
    }
    Ok(Formula::or(matching))
}

/// Truth value in {0, 1}: atoms read the table, `NOT` is `1 - x`, `AND` is
/// `min`, `OR` is `max`.
pub fn valuation(formula: &Formula, table: &TruthTable) -> Result<u8, EvalError> {
    match formula {
        Formula::Atom(a) => {
            let id = a.id();
            table
                .value(&id)
                .map(u8::from)
                .ok_or(EvalError::MissingAtomic(id))
        }
        Formula::Pred {
            category,
            attribute,
            value,
        } => Err(EvalError::NotDesugared(pred_text(category, attribute, value))),
        Formula::Not(inner) => Ok(1 - valuation(inner, table)?),
        Formula::And(cs) => cs.iter().try_fold(1u8, |acc, c| Ok(acc.min(valuation(c, table)?))),
        Formula::Or(cs) => cs.iter().try_fold(0u8, |acc, c| Ok(acc.max(valuation(c, table)?))),
    }
}

pub fn evaluate(formula: &Formula, table: &TruthTable) -> Result<bool, EvalError> {
    valuation(formula, table).map(|v| v == 1)
}

/// Atomics whose valuations differ between two tables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub changed: Vec<String>,
    /// Every category in the shared atomic set, including zero counts.
    pub per_category_counts: BTreeMap<String, usize>,
}

impl DiffReport {
    pub fn is_consistent(&self) -> bool {
        self.changed.is_empty()
    }
}

pub fn consistent(a: &TruthTable, b: &TruthTable) -> Result<DiffReport, ConsistencyError> {
    if a.taxonomy_fingerprint != b.taxonomy_fingerprint {
        return Err(ConsistencyError::FingerprintMismatch {
            a: a.taxonomy_fingerprint.clone(),
            b: b.taxonomy_fingerprint.clone(),
        });
    }
    let only_a = a.entries.keys().filter(|k| !b.entries.contains_key(*k)).count();
    let only_b = b.entries.keys().filter(|k| !a.entries.contains_key(*k)).count();
    if only_a + only_b > 0 {
        return Err(ConsistencyError::AtomicSetMismatch { only_a, only_b });
    }
    let mut per_category_counts = BTreeMap::new();
    let mut changed = Vec::new();
    for (id, ea) in &a.entries {
        let count = per_category_counts
            .entry(category_of(id).to_string())
            .or_insert(0usize);
        if ea.value != b.entries[id].value {
            *count += 1;
            changed.push(id.clone());
        }
    }
    Ok(DiffReport {
        changed,
        per_category_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleOutcome {
    pub name: String,
    pub value: bool,
    /// Evidence of the atomics that determined the outcome.
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub compliant: bool,
    pub rules: Vec<RuleOutcome>,
}

/// Value plus the evidence of the sub-formulas that decided it: true children
/// of a true `OR`, false children of a false `AND`, every child otherwise.
fn determining(
    formula: &Formula,
    table: &TruthTable,
) -> Result<(bool, BTreeSet<usize>), EvalError> {
    match formula {
        Formula::Atom(a) => {
            let id = a.id();
            let entry = table.entries.get(&id).ok_or(EvalError::MissingAtomic(id))?;
            Ok((entry.value, entry.evidence.iter().copied().collect()))
        }
        Formula::Pred {
            category,
            attribute,
            value,
        } => Err(EvalError::NotDesugared(pred_text(category, attribute, value))),
        Formula::Not(inner) => {
            let (v, ev) = determining(inner, table)?;
            Ok((!v, ev))
        }
        Formula::And(cs) | Formula::Or(cs) => {
            let is_or = matches!(formula, Formula::Or(_));
            let parts = cs
                .iter()
                .map(|c| determining(c, table))
                .collect::<Result<Vec<_>, _>>()?;
            // OR is decided by any true child, AND by any false one.
            let decisive = is_or;
            let value = if is_or {
                parts.iter().any(|(v, _)| *v)
            } else {
                parts.iter().all(|(v, _)| *v)
            };
            let short_circuited = value == decisive;
            let evidence = parts
                .into_iter()
                .filter(|(v, _)| !short_circuited || *v == decisive)
                .flat_map(|(_, ev)| ev)
                .collect();
            Ok((value, evidence))
        }
    }
}

/// Evaluates every rule; compliant iff all hold (vacuously true when empty).
pub fn check_compliance(
    rules: &[(String, Formula)],
    table: &TruthTable,
) -> Result<ComplianceReport, EvalError> {
    let mut outcomes = Vec::with_capacity(rules.len());
    for (name, formula) in rules {
        let value = evaluate(formula, table)?;
        let (v2, evidence) = determining(formula, table)?;
        debug_assert_eq!(value, v2);
        outcomes.push(RuleOutcome {
            name: name.clone(),
            value,
            evidence: evidence.into_iter().collect(),
        });
    }
    Ok(ComplianceReport {
        compliant: outcomes.iter().all(|r| r.value),
        rules: outcomes,
    })
}
