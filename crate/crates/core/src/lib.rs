pub mod error;
pub mod evaluator;
pub mod extractor;
pub mod fixtures;
pub mod graph;
pub mod maintenance;
pub mod pipeline;
pub mod provider;
pub mod reasoner;
pub mod retriever;
pub mod standardizer;
pub mod text;
pub mod vector;

pub use error::{Error, Result};
