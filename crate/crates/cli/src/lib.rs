//! Configuration, CSV input/output, experiment drivers and plotting around
//! `causreg_core`.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod experiments;
pub mod svg;
pub mod table;

pub use commands::{run, Artifact, Command};
pub use config::ExperimentConfig;
pub use data::{ingest_csv, write_pair_csv};
pub use error::{CliError, CliResult, IngestError};
pub use experiments::{exp_compare, exp_convergence, exp_coverage, ExperimentOutput, Model};
pub use svg::{emit_svg, PlotSpec, XAxis};
pub use table::{ResultTable, Row};
