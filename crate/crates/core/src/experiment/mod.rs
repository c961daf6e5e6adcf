//! Config-driven experiment runs: TOML description in, CSV and JSON reports
//! out.

mod config;
mod metrics;
mod run;

pub use config::{parse_config, DatasetSource, ExperimentConfig, ExperimentKind};
pub use metrics::{read_metrics, write_metrics, MetricsRow, METRICS_HEADER};
pub use run::{run, Manifest, RunOptions, RunSummary};
