//! Command line front end and HTTP service for labelforge projects.

pub mod cli;
pub mod server;
