//! Reconstruction + KL training with Adam and an EMA of the weights.

mod data;
mod objective;
mod optim;
mod run;

pub use data::{synthetic_dataset, SyntheticDataset};
pub use objective::{
    kl_on_tape, loss, sample_on_tape, LossBreakdown, LossTerm, MseTerm, Objective,
};
pub use optim::{Adam, EmaState};
pub use run::{
    outcome_paths, save_outcome, train_loop, train_step, validation_recon, DataSource, EvalPoint,
    StepMetrics, TrainConfig, TrainOutcome,
};
