//! Training loops and the transfer protocols built on them, plus metric
//! aggregation and plotting.

mod aggregate;
mod config;
mod metrics;
mod plot;
mod protocols;
mod train;

pub use aggregate::{aggregate, mean_std, Stat, SummaryRow, SummaryTable};
pub use config::{
    desk_source_table, parse_source_table, ExperimentConfig, Mode, SourceTable, TrainConfig,
};
pub use metrics::{find_runs, EpisodeRecord, MetricLog, RunInfo, UpdateRecord};
pub use plot::{curves_csv, learning_curves, render_svg, Curve};
pub use protocols::*;
pub use train::{
    agent_spec, evaluate, evaluate_checkpoint, run_dir, run_stream, train_agent, Agent, RunOutput, TrainResult,
    CHECKPOINT_FILE,
};
