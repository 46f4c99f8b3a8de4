//! Command-line front end and HTTP service for the `vesselunits` engine.

pub mod config;
pub mod server;
