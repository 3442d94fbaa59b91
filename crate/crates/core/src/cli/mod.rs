//! Command-line front end: run configuration, checkpoints, metrics CSV,
//! SVG curves and the five subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod metrics_csv;
pub mod report;

pub use checkpoint::Checkpoint;
pub use commands::{
    cmd_eval, cmd_gen_data, cmd_infer, cmd_report, cmd_train, exit_code, overlay, run, Cli, Command, EvalArgs,
    GenDataArgs, InferArgs, ReportArgs, TrainArgs, TrainSummary,
};
pub use config::RunConfig;
