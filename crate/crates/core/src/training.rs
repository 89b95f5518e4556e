//! Training recipes for the three model families.

use serde::{Deserialize, Serialize};

use crate::analysis::Predictor;
use crate::datagen::{Dataset, Split, INPUT_DIM};
use crate::models::{
    build_autoencoder, build_recurrent_predictor, build_scene_conditioned, build_static_schema, train,
    AutoencoderConfig, Checkpoint, ModelError, Network, RecurrentConfig, SceneConditionedConfig, StaticSchemaConfig,
    TrainConfig, TrainReport, TrainingMeta,
};
use crate::samples::{FeatureWindows, ImageSamples, SceneSamples, StaticSamples};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    #[default]
    StaticSchema,
    SceneConditioned,
    Recurrent,
}

/// Architecture choice plus optional per-family overrides.
///
/// Image sizes inside the family configs are replaced by the dataset's.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub init_seed: u64,
    /// Input channels replaced by their training mean, in training and at inference.
    pub masked_inputs: Vec<usize>,
    pub static_schema: Option<StaticSchemaConfig>,
    pub scene_conditioned: Option<SceneConditionedConfig>,
    pub autoencoder: Option<AutoencoderConfig>,
    pub recurrent: Option<RecurrentConfig>,
    /// Frames per truncated-backpropagation window of the recurrent predictor.
    pub sequence_window: Option<usize>,
}

const DEFAULT_WINDOW: usize = 32;

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if let Some(&i) = self.masked_inputs.iter().find(|&&i| i >= INPUT_DIM) {
            return Err(ModelError::Spec(format!("masked input {i} is out of range (0..{INPUT_DIM})")));
        }
        if self.sequence_window == Some(0) {
            return Err(ModelError::Spec("sequence window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch training progress handed to the caller.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: &'static str,
    pub epoch: usize,
    pub loss: f64,
}

fn meta(ds: &Dataset, cfg: &ModelConfig, train_cfg: &TrainConfig, report: &TrainReport) -> TrainingMeta {
    TrainingMeta {
        seed: cfg.init_seed,
        epochs: train_cfg.epochs,
        final_losses: report.epoch_losses.clone(),
        norm: Some(ds.header.stats.clone()),
        masked_inputs: cfg.masked_inputs.clone(),
    }
}

fn mask_views(ds: &Dataset, masked: &[usize], views: &mut [crate::datagen::View]) {
    for v in views {
        for &i in masked {
            v.input[i] = ds.header.stats.neutral(i);
        }
    }
}

/// Trains the configured architecture on the training split.
pub fn train_model(
    ds: &Dataset,
    cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Predictor, ModelError> {
    cfg.validate()?;
    if ds.header.width != ds.header.height {
        return Err(ModelError::Shape {
            context: format!("square images required, got {}x{}", ds.header.width, ds.header.height),
        });
    }
    let size = ds.header.width;
    match cfg.architecture {
        Architecture::StaticSchema => {
            let mut arch = cfg.static_schema.clone().unwrap_or_else(|| StaticSchemaConfig::for_size(size));
            arch.image_size = size;
            let mut net = Network::init(build_static_schema(&arch)?, cfg.init_seed)?;
            let mut data = StaticSamples::new(ds, Split::Train);
            mask_views(ds, &cfg.masked_inputs, &mut data.views);
            let report = train(&mut net, &data, train_cfg, |epoch, loss| {
                on_epoch(&EpochLog { stage: "static_schema", epoch, loss })
            })?;
            Ok(Predictor::Static(Checkpoint {
                meta: meta(ds, cfg, train_cfg, &report),
                network: net,
            }))
        }
        Architecture::SceneConditioned => {
            let mut arch = cfg
                .scene_conditioned
                .clone()
                .unwrap_or_else(|| SceneConditionedConfig::for_size(size));
            arch.image_size = size;
            let mut net = Network::init(build_scene_conditioned(&arch)?, cfg.init_seed)?;
            let mut data = SceneSamples::new(ds, Split::Train);
            mask_views(ds, &cfg.masked_inputs, &mut data.views);
            let report = train(&mut net, &data, train_cfg, |epoch, loss| {
                on_epoch(&EpochLog { stage: "scene_conditioned", epoch, loss })
            })?;
            Ok(Predictor::Scene(Checkpoint {
                meta: meta(ds, cfg, train_cfg, &report),
                network: net,
            }))
        }
        Architecture::Recurrent => {
            let mut ae_cfg = cfg.autoencoder.clone().unwrap_or_default();
            ae_cfg.image_size = size;
            let mut rec_cfg = cfg.recurrent.clone().unwrap_or_default();
            rec_cfg.image_size = size;
            rec_cfg.feature_dim = ae_cfg.feature_dim;

            let mut ae = Network::init(build_autoencoder(&ae_cfg)?, cfg.init_seed)?;
            let images = ImageSamples::new(ds, Split::Train);
            let ae_report = train(&mut ae, &images, train_cfg, |epoch, loss| {
                on_epoch(&EpochLog { stage: "autoencoder", epoch, loss })
            })?;

            let features = encode_all(ds, &ae)?;
            let window = cfg.sequence_window.unwrap_or(DEFAULT_WINDOW);
            let mut windows = FeatureWindows::new(ds, Split::Train, features, window);
            for seq in &mut windows.sequences {
                mask_views(ds, &cfg.masked_inputs, seq);
            }
            let mut net = Network::init(build_recurrent_predictor(&rec_cfg)?, cfg.init_seed.wrapping_add(1))?;
            let rec_train = TrainConfig {
                batch_size: 1,
                ..train_cfg.clone()
            };
            let report = train(&mut net, &windows, &rec_train, |epoch, loss| {
                on_epoch(&EpochLog { stage: "recurrent", epoch, loss })
            })?;
            Ok(Predictor::Recurrent {
                predictor: Checkpoint {
                    meta: meta(ds, cfg, train_cfg, &report),
                    network: net,
                },
                autoencoder: Checkpoint {
                    meta: meta(ds, cfg, train_cfg, &ae_report),
                    network: ae,
                },
            })
        }
    }
}

/// Autoencoder features of every frame, indexed `[batch][t]`.
pub fn encode_all(ds: &Dataset, ae: &Network) -> Result<Vec<Vec<Vec<f32>>>, ModelError> {
    const CHUNK: usize = 64;
    let (h, w) = (ds.header.height, ds.header.width);
    let mut out = Vec::with_capacity(ds.batches.len());
    for (b, frames) in ds.batches.iter().enumerate() {
        let mut feats = Vec::with_capacity(frames.len());
        for start in (0..frames.len()).step_by(CHUNK) {
            let end = (start + CHUNK).min(frames.len());
            let data: Vec<f32> = (start..end).flat_map(|t| ds.image_floats(b, t)).collect();
            let x = sbs_tensor::Tensor::new(&[end - start, h, w, 3], data)?;
            let f = ae.encode(&x)?;
            let dim = f.len() / (end - start);
            feats.extend(f.data().chunks_exact(dim).map(<[f32]>::to_vec));
        }
        out.push(feats);
    }
    Ok(out)
}
