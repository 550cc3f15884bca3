//! Compile privacy-policy text into a logical representation: truth values
//! for atomic formulae generated from a practice taxonomy. Compliance rules,
//! diffs over time and cross-policy comparisons are evaluated on top of it.
//!
//! Pipeline: [`taxonomy`] generates atomics, [`translation`] renders them as
//! hypotheses, [`corpus`] and [`retrieval`] pick the relevant policy text,
//! [`entailment`] asks a model, [`compiler`] ties it together into a
//! [`logic::TruthTable`], and [`analyses`] / [`bench`] consume the results.

pub mod analyses;
pub mod bench;
pub mod cache;
pub mod compiler;
pub mod corpus;
mod digest;
pub mod entailment;
pub mod logic;
pub mod retrieval;
pub mod taxonomy;
pub mod translation;

pub use digest::sha256_hex;

/// Version stamped into every machine-readable output.
pub const FORMAT_VERSION: u32 = 1;
