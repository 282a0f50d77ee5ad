//! Files, transport and command-line tooling around `ipseq-core`.

mod binio;
pub mod checkpoint;
pub mod client;
pub mod corpus;
pub mod demo;
pub mod engine;
pub mod error;
pub mod features;
pub mod manifest;
pub mod server;
pub mod simulate;
pub mod training;

pub use error::{Error, Result};
pub use ipseq_core as core;
