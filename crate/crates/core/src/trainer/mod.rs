//! Optimization loop: augmentation, view construction, loss, AdamW and the
//! EMA schedule.

pub mod augment;
pub mod config;
pub mod model;
pub mod optim;
pub mod run;
pub mod step;

pub use augment::{color_augment, random_resized_crop, ColorPolicy};
pub use config::{StrategyName, TrainConfig};
pub use model::{embed_images, embed_texts, init_model, with_shadow, ModelDims, EMA_PREFIXES};
pub use optim::{lr_schedule, AdamState, AdamW};
pub use run::{build_vocab, checkpoint_dir, class_prompts, LoadedModel, StepLog, Trainer, LAST_CHECKPOINT, LOG_FILE};
pub use step::{augment_sample, prepare_batch, step_loss, AugmentedSample, PreparedBatch};
