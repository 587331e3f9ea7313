//! Communication-cost accounting, accuracy/loss evaluation, and CSV export.

mod comm;
mod csv;
mod eval;

pub use comm::{
    cumulative_accounting, extra_round_fraction, format_mb, per_iteration_bytes,
    resnet20_gn_size_spec, resnet20_size_spec, rounds_per_iteration, CumulativeReport,
    ModelSizeSpec, BYTES_PER_GB, BYTES_PER_MB,
};
pub use csv::{export_csv, history_to_csv, parse_csv, CSV_HEADER};
pub use eval::evaluate;
