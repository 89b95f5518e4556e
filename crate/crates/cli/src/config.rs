//! Run configuration file: one TOML document, every field optional.

use serde::{Deserialize, Serialize};
use softschema::analysis::{LagSignal, MaskClass};
use softschema::datagen::{DatasetConfig, EpisodeConfig, MotionParams, SceneSampler, Split};
use softschema::models::TrainConfig;
use softschema::render::RenderConfig;
use softschema::sensor::SensorParams;
use softschema::sim::PhysicsParams;
use softschema::training::ModelConfig;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub batches: usize,
    pub test_batches: usize,
    pub frames: usize,
    pub dt: f64,
    /// Transport delay between emitted and applied command, frames.
    pub delay: usize,
    pub distractor: bool,
    pub normalize: bool,
    pub resample_scenes: bool,
    pub motion: MotionParams,
    pub scenes: SceneSampler,
}

impl Default for DatasetSection {
    fn default() -> Self {
        let d = DatasetConfig::default();
        Self {
            batches: d.batches,
            test_batches: d.test_batches,
            frames: d.episode.frames,
            dt: d.episode.dt,
            delay: d.episode.delay,
            distractor: d.episode.distractor,
            normalize: d.normalize,
            resample_scenes: d.resample_scenes,
            motion: d.episode.motion,
            scenes: d.scenes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub split: Split,
    pub lags: Vec<usize>,
    pub signal: LagSignal,
    /// Layer for latent segmentation; defaults to the penultimate upsampling activation.
    pub layer: Option<String>,
    pub batch: usize,
    pub frame: usize,
    pub class: MaskClass,
    pub permutation_draws: usize,
    pub panel_frames: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            split: Split::Test,
            lags: (0..=20).collect(),
            signal: LagSignal::Action,
            layer: None,
            batch: 0,
            frame: 0,
            class: MaskClass::Object,
            permutation_draws: 100,
            panel_frames: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Every other seed is derived from this one.
    pub seed: u64,
    pub sim: PhysicsParams,
    pub sensors: SensorParams,
    pub render: RenderConfig,
    pub dataset: DatasetSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ep = EpisodeConfig::default();
        Self {
            seed: 0,
            sim: ep.physics,
            sensors: ep.sensors,
            render: ep.render,
            dataset: DatasetSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: Option<&std::path::Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    /// Copies the global seed into every seeded section.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Self {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        self.sensors.layout_seed = self.seed;
        self.model.init_seed = self.seed;
        self.train.seed = self.seed;
        self
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let d = &self.dataset;
        DatasetConfig {
            batches: d.batches,
            test_batches: d.test_batches,
            scene_seed: self.seed,
            normalize: d.normalize,
            resample_scenes: d.resample_scenes,
            scenes: d.scenes.clone(),
            episode: EpisodeConfig {
                frames: d.frames,
                dt: d.dt,
                motion: d.motion,
                delay: d.delay,
                distractor: d.distractor,
                physics: self.sim,
                sensors: self.sensors,
                render: self.render.clone(),
                ..EpisodeConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.dataset_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.train.batch_size == 0 || !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return Err(CliError::Config("train.batch_size and train.lr must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}
