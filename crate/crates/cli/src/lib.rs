//! Batch front end for heteroskedastic SVAR analysis: CSV ingestion,
//! restriction files, simulation, and the estimate / test / identify /
//! bounds pipeline with JSON and CSV output.

pub mod config;
pub mod error;
pub mod ingest;
pub mod pipeline;
pub mod sim;
pub mod spec_file;

pub use error::{CliError, CliResult};
