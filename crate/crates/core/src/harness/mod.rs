//! Experiment engine behind the command-line tool: configuration,
//! Monte-Carlo replication and result files.

pub mod cli;
pub mod config;
pub mod coverage;
pub mod emit;

pub use config::{ConfigFile, DensityChoice, ExperimentConfig, GammaChoice, MethodEntry};
pub use coverage::{bin_values, coverage_study, run_coverage, run_histogram, CoordinateCoverage, CoverageRow, CoverageStudy, HistogramRecord, MIN_SUCCESS};
pub use emit::{read_coverage_csv, write_coverage, write_coverage_csv, write_histograms, write_manifest, write_records, Format, Manifest, COVERAGE_HEADER};
