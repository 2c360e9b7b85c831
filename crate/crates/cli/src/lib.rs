//! Command-line front end and HTTP service for rolecast.

pub mod commands;
pub mod config;
pub mod server;
