//! Experiment driver: training with best-F1 checkpointing, gamma sweeps,
//! results tables and the configuration format shared with the CLI.

mod cache;
mod config;
mod report;
mod sweep;
mod train;

pub use cache::{decode_bundle, encode_bundle, imaging_key, load_dataset, prepare_scan, Dataset, Prepared};
pub use config::{apply_gen, format_kv, gen_kv, KvFile, SweepConfig, TrainConfig};
pub use report::{read_results, render_markdown, write_gamma_curves, write_results, ResultRow, RowMetrics};
pub use sweep::{best_of_kind, median, median_final_scores, plan_runs, run_grid, sweep, write_outputs, SweepOutcome};
pub use train::{train, train_on, write_trajectory, EpochRecord, RunResult};
