//! HTTP service and command-line driver for timeweave ensembles.

pub mod api;
pub mod cli;
pub mod server;

pub use api::schemas;
pub use server::{router, ServiceConfig};
