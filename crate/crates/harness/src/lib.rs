//! Test harness for the hostwise crawler: a deterministic synthetic web
//! served over HTTP, request-log audits and the experiment drivers.

pub mod audit;
pub mod experiments;
pub mod server;
pub mod synth;
