pub mod artifacts;
pub mod cli;
pub mod pipeline;
pub mod service;
