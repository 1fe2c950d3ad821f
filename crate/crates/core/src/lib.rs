//! Probing language-model hidden states for statement truthfulness.
//!
//! The crate covers the whole offline pipeline once activations exist:
//!
//! - [`forge`]: balanced true/false statements from property tables.
//! - [`recipe`]: TOML description of all topics, tables and templates.
//! - [`store`]: the binary activation format, dataset index and few-shot scores.
//! - [`probe`]: the feedforward classifier, its gradients, Adam and training.
//! - [`eval`]: metrics and the leave-one-topic-out / generated-set protocols.
//! - [`baseline`]: few-shot ratio scoring and the sentence-embedding baseline.
//! - [`synthetic`]: synthetic activation sets with known transfer behaviour.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod forge;
pub mod probe;
pub mod recipe;
pub mod store;
pub mod synthetic;
pub mod util;

pub use error::{Error, Result};
