//! Command implementations behind the `pflow` binary.

pub mod args;
pub mod check;
pub mod commands;
pub mod corpus;
pub mod error;
pub mod manifest;

pub use error::{ToolError, ToolResult};
