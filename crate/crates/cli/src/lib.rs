//! Configuration and staged pipeline behind the `dacesr` command.

pub mod config;
pub mod pipeline;

pub use config::ProjectConfig;
