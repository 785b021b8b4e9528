//! Training, checkpointing, tiled evaluation and the ablation runner.

pub mod ablation;
pub mod checkpoint;
pub mod evaluate;
pub mod history;
pub mod optim;
pub mod run_dir;
pub mod schedule;
pub mod trainer;

pub use ablation::{run_ablation, write_ablation_table, AblationResult};
pub use checkpoint::Checkpoint;
pub use evaluate::{evaluate, evaluate_model, predict_pair, EvalReport, ModelPredictor, PairPrediction};
pub use history::{select_best, EpochRecord, RunHistory};
pub use run_dir::RunDir;
pub use schedule::lr_at;
pub use trainer::{train_loop, Progress, TrainData, TrainOutcome, Trainer};
