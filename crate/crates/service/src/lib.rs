//! HTTP service and command-line front end for the Holter report engine.

pub mod api;
pub mod cli;
pub mod jobs;
pub mod store;
