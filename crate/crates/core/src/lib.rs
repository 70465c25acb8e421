pub mod cli;
pub mod click_ingest;
pub mod config;
pub mod corpus;
pub mod embedder;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod llm;
pub mod product_intent;
pub mod qa_gen;
pub mod rag;
pub mod sanitizer;
pub mod vector_index;

pub use error::{Error, Result};
