//! Experiment configuration, single runs, and sweeps over settings, methods
//! and seeds.

mod config;
mod run;
mod sweep;

pub use config::{ExperimentConfig, Generator, Method};
pub use run::{run_single, Datasets, ResultRow, RowStatus};
pub use sweep::{
    read_results, run_sweep, summarise, write_plot_data, SummaryEntry, SweepOptions, SweepOutcome,
};
