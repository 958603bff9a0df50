//! Disentanglement of tabular data into independent latent variables.
//!
//! The stages run in order: [`extract`] picks rows and attributes around a
//! target window, [`model`] fits latent variables with an encoder and decoder,
//! [`analyze`] estimates each latent's distribution, [`extrapolate`] conditions
//! that representation on hypothetical marginals, and [`synth`] samples and
//! decodes synthetic rows. [`metrics`] scores every stage and [`pipeline`] runs
//! them from a configuration file with persisted artifacts.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analyze;
pub mod data;
pub mod error;
pub mod extract;
pub mod extrapolate;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod request;
pub mod seed;
pub mod synth;

pub use analyze::{AnalysisConfig, DistEstimate, EstimatorKind, Representation};
pub use data::{
    AttributeSpace, Codec, DataSlice, Dataset, Domain, ExternalKnowledge, Record, Schema, Value,
};
pub use error::{Error, Result};
pub use extract::{ExtractionResult, PuParams};
pub use extrapolate::{ExtensionTaxonomy, ExtrapolatedRepresentation, Level};
pub use metrics::{DistanceKind, MetricReport, PsiKind};
pub use model::{DataModel, ModelOptions, RelationshipFamily};
pub use pipeline::{PipelineConfig, Stage};
pub use request::{CheckedRequest, ConditionExpr, Request};
pub use synth::{Synthesis, SynthesisSpec, ValidityPolicy};
