use std::fmt;

use crate::taxonomy::AtomicFormula;

/// Rule-language AST. `And`/`Or` always hold at least two children and are
/// kept flat: no `And` directly contains another `And`, likewise for `Or`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Formula {
    Atom(AtomicFormula),
    Pred {
        category: String,
        attribute: String,
        value: String,
    },
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
}

impl Formula {
    pub fn atom(atomic: AtomicFormula) -> Self {
        Formula::Atom(atomic)
    }

    pub fn pred(category: &str, attribute: &str, value: &str) -> Self {
        Formula::Pred {
            category: category.into(),
            attribute: attribute.into(),
            value: value.into(),
        }
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Formula) -> Self {
        Formula::Not(Box::new(inner))
    }

    /// Flattening conjunction. A single child is returned as-is.
    ///
    /// Panics on an empty list.
    pub fn and(children: Vec<Formula>) -> Self {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Formula::And(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        assert!(!flat.is_empty(), "empty conjunction");
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::And(flat)
        }
    }

    /// Flattening disjunction. A single child is returned as-is.
    ///
    /// Panics on an empty list.
    pub fn or(children: Vec<Formula>) -> Self {
        let mut flat = Vec::with_capacity(children.len());
        for c in children {
            match c {
                Formula::Or(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        assert!(!flat.is_empty(), "empty disjunction");
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else {
            Formula::Or(flat)
        }
    }

    /// True when the formula contains no attribute predicates.
    pub fn is_desugared(&self) -> bool {
        match self {
            Formula::Atom(_) => true,
            Formula::Pred { .. } => false,
            Formula::Not(f) => f.is_desugared(),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().all(Formula::is_desugared),
        }
    }

    /// Ids of all atoms, in first-occurrence order.
    pub fn atom_ids(&self) -> Vec<String> {
        fn walk(f: &Formula, out: &mut Vec<String>) {
            match f {
                Formula::Atom(a) => {
                    let id = a.id();
                    if !out.contains(&id) {
                        out.push(id);
                    }
                }
                Formula::Pred { .. } => {}
                Formula::Not(g) => walk(g, out),
                Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Canonical text form; parses back to an equal formula.
    pub fn render(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Atom(a) => write!(f, "{a}"),
            Formula::Pred {
                category,
                attribute,
                value,
            } => write!(f, "{category}.{attribute} = {value}"),
            Formula::Not(inner) => write!(f, "NOT {inner}"),
            Formula::And(cs) | Formula::Or(cs) => {
                let op = if matches!(self, Formula::And(_)) {
                    " AND "
                } else {
                    " OR "
                };
                f.write_str("(")?;
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(op)?;
                    }
                    write!(f, "{c}")?;
                }
                f.write_str(")")
            }
        }
    }
}
