//! Edit extraction, association mining, learned edit merging and
//! impact ranking for grammatical error correction output.

pub mod assoc;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod edits;
pub mod embed;
pub mod error;
pub mod eval;
pub mod merge;
pub mod mining;
pub mod pipeline;
pub mod providers;
pub mod rank;
pub mod seeds;
pub mod toy;

pub use error::{Error, Result};
