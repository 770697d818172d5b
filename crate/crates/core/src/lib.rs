//! Lifting of linear-algebra kernels to accelerator API calls by IO behavioural equivalence.

pub mod analysis;
pub mod api;
pub mod bench;
pub mod classifier;
pub mod corpus;
pub mod equivalence;
pub mod exec;
pub mod matching;
pub mod minilang;
pub mod pipeline;
pub mod profitability;
pub mod rewriter;
