//! Command-line toolkit and IO layer around `flowgen-core`: file formats,
//! chat/embedding endpoints, synthetic dataset construction, and the
//! experiment harness.

pub mod cli;
pub mod datagen;
pub mod embed;
pub mod harness;
pub mod io;
pub mod llm;
pub mod templates;
