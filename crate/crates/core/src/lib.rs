//! Faithfulness measures for black-box explanations.
//!
//! An explanation system pairs a model `f` with an explainer `e`. Given a
//! trace of observed `(x, f(x), e(x))` samples, this crate estimates
//! *consistency* (do instances with the same explanation get the same
//! prediction?) and *sufficiency* (do instances the explanation applies to
//! get the same prediction?), computes the exact measures on finite systems,
//! and provides the explainers, discretizers, and synthetic worlds used to
//! study both.

#![forbid(unsafe_code)]

pub mod discretizers;
pub mod error;
pub mod estimators;
pub mod explainers;
pub mod harness;
pub mod io;
pub mod oracle;
pub mod trace;

pub use discretizers::{discretize_trace, DiscretizerSpec};
pub use error::{Error, Result};
pub use estimators::{
    estimate_global, estimate_local, BoundDiagnostics, BoundSource, FaithfulnessReport, LocalEstimate,
    Relation,
};
pub use oracle::{FiniteSystem, SystemPoint};
pub use trace::{
    ExplanationKey, ExplanationKind, ExplanationPayload, FeatureValue, Instance, Label, Trace, TraceRecord,
};
