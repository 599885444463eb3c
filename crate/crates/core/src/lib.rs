pub mod config;
pub mod corpus;
pub mod dual;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod extractor;
pub mod index;
pub mod nn;
pub mod parallel;
pub mod pipeline;
pub mod piqa;
pub mod seed;
pub mod selftest;

pub use error::{Error, Result};
