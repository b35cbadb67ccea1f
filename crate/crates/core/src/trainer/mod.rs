//! Optimization: Adam, the training loop and gradient checking.

pub mod adam;
pub mod config;
pub mod gradcheck;
pub mod run;
pub mod state;

pub use adam::{adam_step, AdamOptions, AdamState};
pub use config::TrainConfig;
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, GroupResult};
pub use run::{
    moving_average, TrainData, TrainReport, Trainer, ValRecord, BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_LOG,
    STATE_FILE,
};
pub use state::TrainState;
