//! Layer-stack model family, weights, training and checkpoints.

mod checkpoint;
mod network;
mod spec;
mod train;

use thiserror::Error;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{mse, LstmCarry, Network};
pub use spec::{
    build_autoencoder, build_recurrent_predictor, build_scene_conditioned, build_static_schema, AutoencoderConfig,
    Layer, LayerSpec, ModelKind, ModelSpec, ParamRole, ParamSpec, RecurrentConfig, SceneConditionedConfig,
    StaticSchemaConfig, ACTION_SENSOR_DIM, SCENE_INPUT_CHANNELS,
};
pub use train::{evaluate_loss, train, Supervised, TensorPairs, TrainConfig, TrainReport, Trainer};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("image size {0} is not reachable by this architecture")]
    Resolution(usize),
    #[error("shape error: {context}")]
    Shape { context: String },
    #[error("invalid model: {0}")]
    Spec(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error("checkpoint truncated at byte {offset}: needed {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("training diverged (loss {0})")]
    Diverged(f64),
    #[error(transparent)]
    Tensor(#[from] sbs_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<crate::binio::Truncated> for ModelError {
    fn from(t: crate::binio::Truncated) -> Self {
        ModelError::Truncated {
            offset: t.offset,
            needed: t.needed,
        }
    }
}
