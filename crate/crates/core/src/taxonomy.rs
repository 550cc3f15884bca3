//! Practice taxonomies (category -> attribute -> finite value domain) and the
//! atomic formulae generated from them.

use std::fmt;
use std::io::Read;
use std::num::NonZeroUsize;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("taxonomy schema violation: {0}")]
    Schema(String),
    #[error("{path}: invalid identifier {name:?} (expected lowercase kebab-case)")]
    InvalidIdentifier { path: String, name: String },
    #[error("{path}: duplicate name {name:?}")]
    DuplicateName { path: String, name: String },
    #[error("{path}: {what}")]
    Empty { path: String, what: &'static str },
    #[error("{path}: attribute needs at least 2 values, found {found}")]
    DomainTooSmall { path: String, found: usize },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AtomicError {
    #[error("malformed atomic id {0:?}")]
    Malformed(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("category {category:?} has no attribute {attribute:?}")]
    UnknownAttribute { category: String, attribute: String },
    #[error("attribute {category}.{attribute} has no value {value:?}")]
    UnknownValue {
        category: String,
        attribute: String,
        value: String,
    },
    #[error("attribute {0:?} bound more than once")]
    DuplicateBinding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainValue {
    pub value: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<DomainValue>,
}

impl Attribute {
    pub fn value_index(&self, value: &str) -> Option<usize> {
        self.values.iter().position(|v| v.value == value)
    }

    pub fn description(&self, value: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|v| v.value == value)
            .map(|v| v.description.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub attributes: Vec<Attribute>,
}

impl Category {
    pub fn attribute(&self, name: &str) -> Option<&Attribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaxonomyDoc {
    categories: Vec<Category>,
}

/// A validated taxonomy. Immutable after load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    categories: Vec<Category>,
    fingerprint: String,
}

/// Lowercases, trims and folds spaces/underscores into `-`.
pub fn normalize_identifier(raw: &str) -> String {
    raw.trim()
        .to_lowercase()
        .split(|c: char| c.is_whitespace() || c == '_')
        .filter(|s| !s.is_empty())
        .join("-")
}

pub fn is_kebab_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.split('-').all(|part| {
            !part.is_empty()
                && part
                    .chars()
                    .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        })
}

/// Rule-language keywords; they cannot name anything in a taxonomy.
pub const RESERVED_WORDS: [&str; 3] = ["and", "or", "not"];

fn check_ident(path: &str, name: &str) -> Result<(), TaxonomyError> {
    if is_kebab_identifier(name) && !RESERVED_WORDS.contains(&name) {
        Ok(())
    } else {
        Err(TaxonomyError::InvalidIdentifier {
            path: path.to_string(),
            name: name.to_string(),
        })
    }
}

fn check_unique<'a>(
    path: &str,
    names: impl Iterator<Item = &'a str>,
) -> Result<(), TaxonomyError> {
    let mut seen = std::collections::HashSet::new();
    for name in names {
        if !seen.insert(name) {
            return Err(TaxonomyError::DuplicateName {
                path: path.to_string(),
                name: name.to_string(),
            });
        }
    }
    Ok(())
}

impl Taxonomy {
    /// Normalizes identifiers, validates every invariant and computes the
    /// fingerprint over the canonical serialization.
    pub fn new(mut categories: Vec<Category>) -> Result<Self, TaxonomyError> {
        if categories.is_empty() {
            return Err(TaxonomyError::Empty {
                path: "categories".into(),
                what: "taxonomy has no categories",
            });
        }
        for (ci, cat) in categories.iter_mut().enumerate() {
            let cpath = format!("categories[{ci}]");
            cat.name = normalize_identifier(&cat.name);
            check_ident(&format!("{cpath}.name"), &cat.name)?;
            if cat.attributes.is_empty() {
                return Err(TaxonomyError::Empty {
                    path: format!("{cpath}.attributes"),
                    what: "category has no attributes",
                });
            }
            for (ai, attr) in cat.attributes.iter_mut().enumerate() {
                let apath = format!("{cpath}.attributes[{ai}]");
                attr.name = normalize_identifier(&attr.name);
                check_ident(&format!("{apath}.name"), &attr.name)?;
                if attr.values.len() < 2 {
                    return Err(TaxonomyError::DomainTooSmall {
                        path: format!("{apath}.values"),
                        found: attr.values.len(),
                    });
                }
                for (vi, v) in attr.values.iter_mut().enumerate() {
                    let vpath = format!("{apath}.values[{vi}]");
                    v.value = normalize_identifier(&v.value);
                    check_ident(&format!("{vpath}.value"), &v.value)?;
                    v.description = v.description.trim().to_string();
                    if v.description.is_empty() {
                        return Err(TaxonomyError::Empty {
                            path: format!("{vpath}.description"),
                            what: "value description is empty",
                        });
                    }
                }
                check_unique(
                    &format!("{apath}.values"),
                    attr.values.iter().map(|v| v.value.as_str()),
                )?;
            }
            check_unique(
                &format!("{cpath}.attributes"),
                cat.attributes.iter().map(|a| a.name.as_str()),
            )?;
        }
        check_unique("categories", categories.iter().map(|c| c.name.as_str()))?;

        let canonical = serde_json::to_string(&TaxonomyDoc {
            categories: categories.clone(),
        })
        .expect("taxonomy serializes");
        let fingerprint = sha256_hex(canonical.as_bytes());
        Ok(Self {
            categories,
            fingerprint,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, TaxonomyError> {
        let doc: TaxonomyDoc = serde_json::from_str(text)
            .map_err(|e| TaxonomyError::Schema(e.to_string()))?;
        Self::new(doc.categories)
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self, TaxonomyError> {
        let mut text = String::new();
        source
            .read_to_string(&mut text)
            .map_err(|e| TaxonomyError::Schema(format!("read failed: {e}")))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&TaxonomyDoc {
            categories: self.categories.clone(),
        })
        .expect("taxonomy serializes")
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Checks an atomic against this taxonomy and returns it with bindings in
    /// taxonomy attribute order.
    pub fn resolve_atomic(&self, atomic: &AtomicFormula) -> Result<AtomicFormula, AtomicError> {
        let cat = self
            .category(&atomic.category)
            .ok_or_else(|| AtomicError::UnknownCategory(atomic.category.clone()))?;
        let mut indexed = Vec::with_capacity(atomic.bindings.len());
        for (attr, value) in &atomic.bindings {
            let ai = cat
                .attribute_index(attr)
                .ok_or_else(|| AtomicError::UnknownAttribute {
                    category: cat.name.clone(),
                    attribute: attr.clone(),
                })?;
            if cat.attributes[ai].value_index(value).is_none() {
                return Err(AtomicError::UnknownValue {
                    category: cat.name.clone(),
                    attribute: attr.clone(),
                    value: value.clone(),
                });
            }
            indexed.push((ai, attr.clone(), value.clone()));
        }
        indexed.sort_by_key(|(ai, _, _)| *ai);
        if let Some(w) = indexed.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(AtomicError::DuplicateBinding(w[0].1.clone()));
        }
        Ok(AtomicFormula {
            category: atomic.category.clone(),
            bindings: indexed.into_iter().map(|(_, a, v)| (a, v)).collect(),
        })
    }
}

/// One attribute-value assignment for a category.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomicFormula {
    pub category: String,
    pub bindings: Vec<(String, String)>,
}

impl AtomicFormula {
    /// Canonical id, `category(a1=v1,a2=v2)`.
    pub fn id(&self) -> String {
        self.to_string()
    }

    pub fn binding(&self, attribute: &str) -> Option<&str> {
        self.bindings
            .iter()
            .find(|(a, _)| a == attribute)
            .map(|(_, v)| v.as_str())
    }

    /// Parses a canonical id. Bindings are kept in the order written.
    pub fn parse_id(id: &str) -> Result<Self, AtomicError> {
        let malformed = || AtomicError::Malformed(id.to_string());
        let open = id.find('(').ok_or_else(malformed)?;
        let inner = id[open + 1..].strip_suffix(')').ok_or_else(malformed)?;
        let category = &id[..open];
        if !is_kebab_identifier(category) || inner.is_empty() {
            return Err(malformed());
        }
        let mut bindings = Vec::new();
        for part in inner.split(',') {
            let (a, v) = part.split_once('=').ok_or_else(malformed)?;
            if !is_kebab_identifier(a) || !is_kebab_identifier(v) {
                return Err(malformed());
            }
            if bindings.iter().any(|(b, _): &(String, String)| b == a) {
                return Err(AtomicError::DuplicateBinding(a.to_string()));
            }
            bindings.push((a.to_string(), v.to_string()));
        }
        Ok(Self {
            category: category.to_string(),
            bindings,
        })
    }
}

impl fmt::Display for AtomicFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.category)?;
        for (i, (a, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{a}={v}")?;
        }
        f.write_str(")")
    }
}

/// Category of an atomic id without a full parse.
pub fn category_of(id: &str) -> &str {
    id.split_once('(').map_or(id, |(c, _)| c)
}

/// Enumerates atomic formulae.
///
/// Without a cap every category contributes the full Cartesian product over
/// all its attributes. With cap `c`, every attribute subset of size exactly
/// `min(c, n)` contributes its own product. Ordering: category order, then
/// subsets in lexicographic order of attribute indices, then values with the
/// first attribute varying slowest.
pub fn generate_atomics(taxonomy: &Taxonomy, cap: Option<NonZeroUsize>) -> Vec<AtomicFormula> {
    let mut out = Vec::new();
    for cat in taxonomy.categories() {
        let n = cat.attributes.len();
        let size = cap.map_or(n, |c| c.get().min(n));
        for subset in (0..n).combinations(size) {
            let domains = subset
                .iter()
                .map(|&ai| cat.attributes[ai].values.iter().map(move |v| (ai, v)))
                .multi_cartesian_product();
            for combo in domains {
                out.push(AtomicFormula {
                    category: cat.name.clone(),
                    bindings: combo
                        .into_iter()
                        .map(|(ai, v)| (cat.attributes[ai].name.clone(), v.value.clone()))
                        .collect(),
                });
            }
        }
    }
    out
}
