pub mod rfc3986;
