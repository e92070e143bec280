//! Run configuration and the commands behind the `csst` binary: data
//! generation, training, counterfactual dumps, evaluation, gradient checks
//! and cross-run comparison reports.

mod commands;
mod config;
mod report;

pub use commands::{
    eval, fit, gen_data, gradcheck, gradcheck_suite, load_data, load_model, run_experiment, synth_dump, train,
    write_gradcheck_csv, GRADCHECK_POINTS, GRADCHECK_TOLERANCE,
};
pub use config::{Overrides, RunConfig};
pub use report::{aggregate, report, to_csv, to_svg, ReportRow, REPORT_COLUMNS};
