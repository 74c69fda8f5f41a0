//! Observational datasets and their on-disk formats.

mod csv_io;
mod dataset;
mod ihdp;
mod results;

pub use csv_io::{csv_header, export_csv, load_csv, write_csv, CsvSchema};
pub use dataset::{ObservationalDataset, Oracle};
pub use ihdp::{ihdp_paths, load_ihdp, population_sd, rescale_ihdp, RescaleDecision, RESCALE_THRESHOLD};
pub use results::{
    aggregate, load_results, save_results, table, to_csv_string, AggregateRecord, BenchmarkReport, DetailRecord, ResultFormat,
};
