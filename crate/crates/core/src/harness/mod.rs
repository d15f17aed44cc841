//! Configuration, persistence, reports and the pipelines behind the CLI.

pub mod config;
pub mod io;
pub mod pgm;
pub mod pipeline;
pub mod report;
pub mod rotate_demo;
