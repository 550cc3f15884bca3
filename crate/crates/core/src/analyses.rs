//! Downstream applications over truth tables: compliance reports,
//! diffs over time and the two-attribute comparison matrix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logic::{
    check_compliance, consistent, desugar, desugar_with_atomics, evaluate, joint_disjunction,
    parse_formula, ConsistencyError, DesugarError, DiffReport, EvalError, Formula, ParseError,
    TruthTable,
};
use crate::taxonomy::{AtomicFormula, Taxonomy};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("rule file: {0}")]
    RuleFile(#[from] serde_json::Error),
    #[error("rule {name:?}: {source}")]
    RuleSyntax { name: String, source: ParseError },
    #[error("rule {name:?}: {source}")]
    RuleDesugar { name: String, source: DesugarError },
    #[error("duplicate rule name {0:?}")]
    DuplicateRule(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Consistency(#[from] ConsistencyError),
    #[error("table {policy:?} was compiled against a different taxonomy")]
    TaxonomyMismatch { policy: String },
    #[error("table {policy:?} has a different atomic set")]
    AtomicSetMismatch { policy: String },
    #[error("category {category:?} has no compiled attribute {attribute:?}")]
    UnknownAttribute { category: String, attribute: String },
    #[error("no compiled atomic of {category:?} binds both {row:?} and {col:?}; compile with a cap of at least 2 to compare them jointly")]
    JointUnavailable {
        category: String,
        row: String,
        col: String,
    },
    #[error("row and column attributes must differ")]
    SameAttribute,
    #[error("no tables to compare")]
    NoTables,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub name: String,
    pub regulation: String,
    pub formula: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct RuleFile {
    rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub spec: RuleSpec,
    pub formula: Formula,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn from_specs(specs: Vec<RuleSpec>) -> Result<Self, AnalysisError> {
        let mut names = BTreeSet::new();
        let mut rules = Vec::with_capacity(specs.len());
        for spec in specs {
            if !names.insert(spec.name.clone()) {
                return Err(AnalysisError::DuplicateRule(spec.name));
            }
            let formula = parse_formula(&spec.formula).map_err(|source| AnalysisError::RuleSyntax {
                name: spec.name.clone(),
                source,
            })?;
            rules.push(Rule { spec, formula });
        }
        Ok(Self { rules })
    }

    /// `{"rules": [{"name", "regulation", "formula"}]}`
    pub fn from_json(text: &str) -> Result<Self, AnalysisError> {
        let file: RuleFile = serde_json::from_str(text)?;
        Self::from_specs(file.rules)
    }

    /// Desugars every rule against the compiled atomic set, validating names
    /// against `taxonomy` when one is given.
    pub fn prepare(
        &self,
        taxonomy: Option<&Taxonomy>,
        atomics: &[AtomicFormula],
    ) -> Result<Vec<(String, Formula)>, AnalysisError> {
        self.rules
            .iter()
            .map(|r| {
                let f = match taxonomy {
                    Some(t) => desugar(&r.formula, t, atomics),
                    None => desugar_with_atomics(&r.formula, atomics),
                }
                .map_err(|source| AnalysisError::RuleDesugar {
                    name: r.spec.name.clone(),
                    source,
                })?;
                Ok((r.spec.name.clone(), f))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub rule: String,
    pub regulation: String,
    pub formula: String,
    pub value: bool,
    pub evidence: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyCompliance {
    pub format_version: u32,
    pub policy_id: String,
    pub compliant: bool,
    pub rules: Vec<ComplianceRow>,
}

impl PolicyCompliance {
    pub fn render_text(&self) -> String {
        let width = self.rules.iter().map(|r| r.rule.len()).max().unwrap_or(4).max(4);
        let reg_width = self
            .rules
            .iter()
            .map(|r| r.regulation.len())
            .max()
            .unwrap_or(10)
            .max(10);
        let mut out = format!(
            "policy: {}\ncompliant: {}\n\n{:<width$}  {:<reg_width$}  {:<5}  evidence\n",
            self.policy_id,
            if self.compliant { "yes" } else { "no" },
            "rule",
            "regulation",
            "value",
        );
        for r in &self.rules {
            let ev = r.evidence.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
            let _ = writeln!(
                out,
                "{:<width$}  {:<reg_width$}  {:<5}  [{ev}]",
                r.rule, r.regulation, r.value
            );
        }
        out
    }
}

/// Evaluates every rule on `table`.
pub fn comply(
    rules: &RuleSet,
    table: &TruthTable,
    taxonomy: Option<&Taxonomy>,
) -> Result<PolicyCompliance, AnalysisError> {
    if let Some(t) = taxonomy {
        if t.fingerprint() != table.taxonomy_fingerprint {
            return Err(AnalysisError::TaxonomyMismatch {
                policy: table.policy_id.clone(),
            });
        }
    }
    let atomics = table.atomics();
    let prepared = rules.prepare(taxonomy, &atomics)?;
    let report = check_compliance(&prepared, table)?;
    let rows = rules
        .rules
        .iter()
        .zip(report.rules)
        .map(|(rule, outcome)| ComplianceRow {
            rule: rule.spec.name.clone(),
            regulation: rule.spec.regulation.clone(),
            formula: rule.formula.render(),
            value: outcome.value,
            evidence: outcome.evidence,
        })
        .collect();
    Ok(PolicyCompliance {
        format_version: crate::FORMAT_VERSION,
        policy_id: table.policy_id.clone(),
        compliant: report.compliant,
        rules: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeDiff {
    pub format_version: u32,
    pub old_policy_id: String,
    pub new_policy_id: String,
    pub total_changed: usize,
    #[serde(flatten)]
    pub diff: DiffReport,
}

impl TimeDiff {
    /// `category,changed` rows for plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,changed\n");
        for (c, n) in &self.diff.per_category_counts {
            let _ = writeln!(out, "{c},{n}");
        }
        out
    }

    pub fn render_text(&self) -> String {
        let width = self
            .diff
            .per_category_counts
            .keys()
            .map(String::len)
            .max()
            .unwrap_or(8)
            .max(8);
        let mut out = format!(
            "old: {}\nnew: {}\nchanged atomics: {}\n\n{:<width$}  changed\n",
            self.old_policy_id, self.new_policy_id, self.total_changed, "category"
        );
        for (c, n) in &self.diff.per_category_counts {
            let _ = writeln!(out, "{c:<width$}  {n}");
        }
        if !self.diff.changed.is_empty() {
            out.push_str("\nchanged:\n");
            for id in &self.diff.changed {
                let _ = writeln!(out, "  {id}");
            }
        }
        out
    }
}

pub fn diff_over_time(old: &TruthTable, new: &TruthTable) -> Result<TimeDiff, AnalysisError> {
    let diff = consistent(old, new)?;
    Ok(TimeDiff {
        format_version: crate::FORMAT_VERSION,
        old_policy_id: old.policy_id.clone(),
        new_policy_id: new.policy_id.clone(),
        total_changed: diff.changed.len(),
        diff,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub row: String,
    pub col: String,
    pub policies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComparisonMatrix {
    pub format_version: u32,
    pub category: String,
    pub attribute_row: String,
    pub attribute_col: String,
    pub row_values: Vec<String>,
    pub col_values: Vec<String>,
    /// Row-major, one cell per (row value, col value).
    pub cells: Vec<MatrixCell>,
}

impl ComparisonMatrix {
    pub fn cell(&self, row: &str, col: &str) -> Option<&[String]> {
        self.cells
            .iter()
            .find(|c| c.row == row && c.col == col)
            .map(|c| c.policies.as_slice())
    }

    pub fn render_text(&self) -> String {
        let label = |c: &MatrixCell| {
            if c.policies.is_empty() {
                "-".to_string()
            } else {
                c.policies.join(",")
            }
        };
        let first_width = self
            .row_values
            .iter()
            .map(String::len)
            .chain([self.attribute_row.len() + self.attribute_col.len() + 3])
            .max()
            .unwrap_or(0);
        let col_widths: Vec<usize> = self
            .col_values
            .iter()
            .enumerate()
            .map(|(ci, v)| {
                self.cells
                    .iter()
                    .skip(ci)
                    .step_by(self.col_values.len())
                    .map(|c| label(c).len())
                    .chain([v.len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = format!("{}\n", self.category);
        let corner = format!("{} \\ {}", self.attribute_row, self.attribute_col);
        let _ = write!(out, "{corner:<first_width$}");
        for (v, w) in self.col_values.iter().zip(&col_widths) {
            let _ = write!(out, "  {v:<w$}");
        }
        out = out.trim_end().to_string();
        out.push('\n');
        for (ri, r) in self.row_values.iter().enumerate() {
            let mut line = format!("{r:<first_width$}");
            for (ci, w) in col_widths.iter().enumerate() {
                let cell = &self.cells[ri * self.col_values.len() + ci];
                let _ = write!(line, "  {:<w$}", label(cell));
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

fn attribute_values(
    category: &str,
    attribute: &str,
    atomics: &[AtomicFormula],
    taxonomy: Option<&Taxonomy>,
) -> Result<Vec<String>, AnalysisError> {
    let unknown = || AnalysisError::UnknownAttribute {
        category: category.to_string(),
        attribute: attribute.to_string(),
    };
    if let Some(t) = taxonomy {
        let attr = t
            .category(category)
            .and_then(|c| c.attribute(attribute))
            .ok_or_else(unknown)?;
        return Ok(attr.values.iter().map(|v| v.value.clone()).collect());
    }
    let mut seen = Vec::new();
    for a in atomics.iter().filter(|a| a.category == category) {
        if let Some(v) = a.binding(attribute) {
            if !seen.iter().any(|s: &String| s == v) {
                seen.push(v.to_string());
            }
        }
    }
    if seen.is_empty() {
        return Err(unknown());
    }
    Ok(seen)
}

/// Places each policy in every (row value, col value) cell whose joint
/// formula `category.row = r AND category.col = c` holds on its table.
/// The conjunction is resolved over atomics binding both attributes.
pub fn compare(
    tables: &BTreeMap<String, TruthTable>,
    category: &str,
    attr_row: &str,
    attr_col: &str,
    taxonomy: Option<&Taxonomy>,
) -> Result<ComparisonMatrix, AnalysisError> {
    if attr_row == attr_col {
        return Err(AnalysisError::SameAttribute);
    }
    let first = tables.values().next().ok_or(AnalysisError::NoTables)?;
    for (id, t) in tables {
        if t.taxonomy_fingerprint != first.taxonomy_fingerprint
            || taxonomy.is_some_and(|tx| tx.fingerprint() != t.taxonomy_fingerprint)
        {
            return Err(AnalysisError::TaxonomyMismatch { policy: id.clone() });
        }
        if !t.entries.keys().eq(first.entries.keys()) {
            return Err(AnalysisError::AtomicSetMismatch { policy: id.clone() });
        }
    }
    let atomics = first.atomics();
    let row_values = attribute_values(category, attr_row, &atomics, taxonomy)?;
    let col_values = attribute_values(category, attr_col, &atomics, taxonomy)?;
    let joint_exists = atomics
        .iter()
        .any(|a| a.category == category && a.binding(attr_row).is_some() && a.binding(attr_col).is_some());
    if !joint_exists {
        return Err(AnalysisError::JointUnavailable {
            category: category.to_string(),
            row: attr_row.to_string(),
            col: attr_col.to_string(),
        });
    }
    let mut cells = Vec::with_capacity(row_values.len() * col_values.len());
    for r in &row_values {
        for c in &col_values {
            let formula = joint_disjunction(category, &[(attr_row, r), (attr_col, c)], &atomics);
            let mut policies = Vec::new();
            if let Ok(formula) = formula {
                for (id, t) in tables {
                    if evaluate(&formula, t)? {
                        policies.push(id.clone());
                    }
                }
            }
            cells.push(MatrixCell {
                row: r.clone(),
                col: c.clone(),
                policies,
            });
        }
    }
    Ok(ComparisonMatrix {
        format_version: crate::FORMAT_VERSION,
        category: category.to_string(),
        attribute_row: attr_row.to_string(),
        attribute_col: attr_col.to_string(),
        row_values,
        col_values,
        cells,
    })
}
