//! Error metrics, CSV exchange formats and plots.

pub mod csv;
mod errors;
mod log;
mod plots;

pub use self::csv::{
    export_csv, format_g9, read_events, read_log, read_truth, write_events, write_log, write_truth,
};
pub use errors::{compute_errors, in_nees_bounds, interpolate_truth, nees, ErrorReport, ErrorSample, NEES_BOUNDS_2DOF};
pub use log::{LogRecord, TrajectoryLog};
pub use plots::{render_plots, Plot, Series};
