//! Command line and HTTP front end for the co-creation engine.

pub mod commands;
pub mod config;
pub mod server;
