//! Capability-conditioned scaffolding: route prompts by a user's declared
//! per-domain evaluation capacity, run them on LLM substrates, and analyse
//! how often intervention markers fire.

pub mod annotate;
pub mod corpus;
pub mod profile;
pub mod router;
pub mod scaffold;
pub mod stats;
pub mod substrate;
pub mod pipeline;
pub mod report;
pub mod runlog;
pub mod cli;
