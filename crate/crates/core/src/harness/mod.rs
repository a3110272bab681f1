//! Meta-training, evaluation, ablation sweeps, checkpoints and relation
//! heatmaps.

pub mod ablation;
pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod heatmap;
pub mod seeds;
pub mod train;

pub use ablation::{run_ablation, AblationCell, AblationGrid, AblationSummary, AblationTable};
pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint};
pub use config::TrainConfig;
pub use eval::{evaluate, evaluate_parallel, EvalReport};
pub use heatmap::export_heatmap;
pub use train::{train, train_with_observer, MetricsRow, TrainOutcome};
