//! HTTP façade over the tool suite and the `kgr` command line.

pub mod cli;
pub mod config;
pub mod server;
