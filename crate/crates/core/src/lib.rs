//! A polite, host-wise breadth-first web crawler.

pub mod agent;
pub mod burl;
pub mod clock;
pub mod config;
pub mod cluster;
pub mod distributor;
pub mod filters;
pub mod pipeline;
pub mod sieve;
pub mod store;
pub mod virtualizer;
pub mod workbench;

pub use burl::{CrawlUrl, UrlError};
