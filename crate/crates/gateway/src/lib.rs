//! Command-line tools and the live session service.

pub mod cli;
pub mod commands;
pub mod protocol;
pub mod server;
pub mod tagger;
