//! Command-line front end and local HTTP service for the assurance engine.

pub mod cli;
pub mod docs;
pub mod service;
