//! Core algorithms for generating and evaluating workflow-automation DSL code:
//! the DSL parser and serializer, the API catalog model, flow validation,
//! code-quality metrics, few-shot retrieval, and metaprompt grounding.
//!
//! This crate is `no_std` (alloc required). All IO, file formats, HTTP
//! clients, and the CLI live in the companion `flowgen` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod catalog;
pub mod dsl;
pub mod grounding;
pub mod metrics;
pub mod retrieval;
pub mod validator;

pub use catalog::{Catalog, FunctionDefinition, ParameterInfo};
pub use dsl::{ApiName, CallExpr, ParseError, Program, Statement};
pub use metrics::{FlowScore, MetricsSummary};
pub use validator::ValidationReport;
