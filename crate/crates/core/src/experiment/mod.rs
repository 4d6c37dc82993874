//! Experiment files, runs, sweeps, reference numbers and tools.

mod config;
mod encode_tool;
mod plot;
pub mod reference;
mod run;
mod sweep;

pub use config::{AugmentMode, DatasetSource, ExperimentConfig, ReferenceTable, SweepGrid, SweepKind};
pub use encode_tool::{encode_dir, round_trip_error, EncodeSummary};
pub use plot::bar_chart_svg;
pub use run::{
    append_row, evaluate_saved, load_splits, read_rows, reference, run_experiment, ResultRow, RunFiles, RunReport,
    Splits, CSV_HEADER,
};
pub use sweep::{cell_config, sweep, SweepCell, SweepTable};
