pub mod archive;
pub mod config;
pub mod dataset;
pub mod experiment;
pub mod metrics;
pub mod pnm;
pub mod report;
