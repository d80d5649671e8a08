//! Losses, the optimizer, and the training loop shared by the
//! ray-embedding model and the global-code baseline.

mod adam;
mod loss;
mod model;
mod train;

pub use adam::{adam_step, AdamState};
pub use loss::{loss_mask, loss_rgb, tape_losses, total_loss, LossConfig, BCE_CLAMP};
pub use model::{global_code_baseline, mean_code, EncodedViews, Model, ModelConfig, ModelKind};
pub use train::{
    draw_gradients, draw_loss, draw_scene, load_model, save_model, train, train_step, SceneDraw, StepStats, TrainConfig,
    Trainer, LOG_HEADER,
};
