//! Financial chain-of-thought corpus construction, reward scoring, and
//! benchmark evaluation.

pub mod backend;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod cotloop;
pub mod eval;
pub mod filter;
pub mod judge;
pub mod mock;
pub mod pipeline;
pub mod pool;
pub mod prompts;
pub mod reward;
pub mod synthesis;
