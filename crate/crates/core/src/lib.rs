//! Mining multiple-choice contrast sets from existing datasets.
//!
//! Entries become vertices of an equivalence graph; an edge joins two
//! entries when each one's gold answer is semantically equivalent to a
//! distractor of the other. A maximum matching of that graph gives the
//! largest set of disjoint entry pairs, and each pair yields two two-choice
//! questions sharing the same choices with opposite gold answers. A
//! responder that ignores the question cannot beat 50% on such a set.

pub mod contrast;
pub mod eval;
pub mod error;
pub mod fingerprint;
pub mod graph;
pub mod ingest;
pub mod matching;
pub mod model;
pub mod report;
pub mod similarity;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
