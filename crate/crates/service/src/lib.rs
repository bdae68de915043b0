//! Network service and admin CLI around [`rbac_core`].

pub mod app;
pub mod capabilities;
pub mod cli;
pub mod config;
pub mod http;
pub mod kv;
pub mod wire;
