//! File formats and commands of the `maxent` tool.

pub mod commands;
pub mod format;
