//! Persistence, prompts, submission ingestion, task scoring and reports.

pub mod ingest;
pub mod io;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod score;
pub mod submission;

#[cfg(test)]
mod tests;
