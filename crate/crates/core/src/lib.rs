//! Annotation quality tooling for binary attribute datasets.
//!
//! - [`annotation`]: the label matrix, attribute files and the provenance log
//! - [`consistency`]: re-annotation disagreement tiers and random-agreement baselines
//! - [`duplicates`]: near-duplicate detection, verdict review and conflict-based inconsistency
//! - [`audit`]: stratified audit sampling, two-pass sessions and Wilson intervals
//! - [`probe`]: logistic-regression probes over frozen embeddings
//! - [`workflow`]: ensemble-agreement cleaning rounds
//!
//! Data-parallel work runs on rayon with the default `parallel` feature.
//! Every parallel entry point also takes an [`Execution`] so callers can
//! force the sequential path; both give identical results.

pub mod annotation;
pub mod audit;
pub mod consistency;
pub mod duplicates;
pub mod error;
pub mod lease;
pub mod par;
pub mod probe;
pub mod project;
pub mod report;
pub mod rng;
pub mod synth;
pub mod workflow;

pub use annotation::{AnnotationMatrix, LabelValue, ProvenanceEntry, ProvenanceLog, Split};
pub use error::{Error, ErrorKind, Result};
pub use par::Execution;
