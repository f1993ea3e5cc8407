//! Prompt lifecycle and migration harness for natural-language-to-SQL
//! operator extraction.

pub mod operator;
pub mod output;
pub mod prompt;
pub mod provider;
pub mod runner;
pub mod taxonomy;
pub mod testbed;
