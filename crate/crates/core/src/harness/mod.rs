//! Monte Carlo experiment driver: grids of points, parallel trials,
//! aggregation and CSV/JSON output.

mod config;
mod emit;
mod experiment;

pub use config::{ExperimentConfig, PointConfig};
pub use emit::{json_path_for, read_overlay, summary_table, to_csv_string, write_json, CsvSink, OverlayPoint, ResultDocument, COLUMNS};
pub use experiment::{clopper_pearson, run_point, sweep, tally, worker_pool, AggregateResult, Tally, GUARANTEED_FER_BELOW, SCHEMA_VERSION};
