use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::report::write_panel_png;
use super::{evaluate_with_ids, AnalysisError, EvalReport, Ids};
use crate::datagen::{Dataset, Split};
use crate::models::TrainConfig;
use crate::training::{train_model, Architecture, EpochLog, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    pub scene_conditioned: ModelConfig,
    pub recurrent: ModelConfig,
    pub train: TrainConfig,
    pub split: Split,
    /// Frames shown per model in the PNG panel.
    pub panel_frames: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            scene_conditioned: ModelConfig {
                architecture: Architecture::SceneConditioned,
                ..Default::default()
            },
            recurrent: ModelConfig {
                architecture: Architecture::Recurrent,
                ..Default::default()
            },
            train: TrainConfig::default(),
            split: Split::Test,
            panel_frames: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset_id: String,
    pub scene_conditioned: EvalReport,
    pub recurrent: EvalReport,
    /// Wall-clock training plus evaluation time per model, seconds.
    pub seconds: [f64; 2],
    /// Which model had the lower mean error; recorded, not enforced.
    pub lower_error: String,
}

/// Trains both architectures with the same seeds and splits and scores them side by side.
///
/// With `out_dir`, writes `comparison.csv`, `comparison.png` and `comparison.json` there.
pub fn compare_architectures(
    ds: &Dataset,
    cfg: &CompareConfig,
    out_dir: Option<&Path>,
    mut log: impl FnMut(&str),
) -> Result<Comparison, AnalysisError> {
    let dataset_id = ds.digest()?;
    let mut run = |model: &ModelConfig| -> Result<(super::Predictor, EvalReport, f64), AnalysisError> {
        let started = Instant::now();
        let pred = train_model(ds, model, &cfg.train, |e: &EpochLog| {
            log(&format!("{} epoch {} loss {:.6}", e.stage, e.epoch, e.loss))
        })?;
        let ids = Ids {
            model: pred.id()?,
            dataset: dataset_id.clone(),
        };
        let report = evaluate_with_ids(&pred, ds, cfg.split, &ids)?;
        Ok((pred, report, started.elapsed().as_secs_f64()))
    };
    let (scene_pred, scene, scene_s) = run(&cfg.scene_conditioned)?;
    let (rec_pred, recurrent, rec_s) = run(&cfg.recurrent)?;
    let lower_error = if scene.mean <= recurrent.mean {
        "scene_conditioned"
    } else {
        "recurrent"
    };
    log(&format!(
        "observation: {lower_error} has the lower mean error ({:.6} vs {:.6})",
        scene.mean.min(recurrent.mean),
        scene.mean.max(recurrent.mean)
    ));
    let cmp = Comparison {
        dataset_id,
        scene_conditioned: scene,
        recurrent,
        seconds: [scene_s, rec_s],
        lower_error: lower_error.to_string(),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("comparison.csv"))?;
        w.write_record(["batch", "t", "contact", "scene_conditioned_mse", "recurrent_mse"])?;
        for (a, b) in cmp.scene_conditioned.frames.iter().zip(&cmp.recurrent.frames) {
            w.write_record([
                a.batch.to_string(),
                a.t.to_string(),
                (a.contact as u8).to_string(),
                a.mse.to_string(),
                b.mse.to_string(),
            ])?;
        }
        w.flush()?;

        let batch = ds.batch_indices(cfg.split)[0];
        let len = ds.batches[batch].len();
        let count = cfg.panel_frames.clamp(1, len);
        let frames: Vec<usize> = (0..count).map(|k| k * (len - 1) / (count - 1).max(1)).collect();
        let mut rows = vec![frames.iter().map(|&t| ds.image_floats(batch, t)).collect::<Vec<_>>()];
        for pred in [&scene_pred, &rec_pred] {
            rows.push(
                frames
                    .iter()
                    .map(|&t| pred.predict_frame(ds, batch, t))
                    .collect::<Result<_, _>>()?,
            );
        }
        write_panel_png(&dir.join("comparison.png"), ds.header.width, ds.header.height, &rows)?;
        let json = serde_json::to_vec_pretty(&cmp).map_err(|e| AnalysisError::Encode(e.to_string()))?;
        std::fs::write(dir.join("comparison.json"), json)?;
    }
    Ok(cmp)
}
