//! Evaluation procedures over trained models: error reports, input ablation,
//! lag scans, distractor filtering and latent segmentation.

mod compare;
mod predictor;
pub mod report;
mod segment;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Dataset, DatasetError, Split, ACTION_DIM, INPUT_DIM};
use crate::models::ModelError;
use crate::render::{RenderError, LABEL_DISTRACTOR, LABEL_FINGER, LABEL_OBSTACLE};

pub use compare::{compare_architectures, CompareConfig, Comparison};
pub use predictor::{Input, Predictor};
pub use segment::{
    iou, latent_segmentation, otsu_threshold, percentile, permutation_baseline, MaskClass, SegmentationReport,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown layer {name:?}; available: {available}")]
    UnknownLayer { name: String, available: String },
    #[error("lag {lag} leaves no frames in a batch of {frames}")]
    Lag { lag: usize, frames: usize },
    #[error("frame {t} of batch {batch} does not exist")]
    Frame { batch: usize, t: usize },
    #[error("split has no batches")]
    EmptySplit,
    #[error("cannot encode report: {0}")]
    Encode(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Tensor(#[from] sbs_tensor::TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub batch: usize,
    pub t: usize,
    pub mse: f64,
    pub contact: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub frames: Vec<FrameError>,
    pub mean: f64,
    pub std: f64,
    /// Mean over frames with simulator contact; `None` when there are none.
    pub contact_mean: Option<f64>,
    pub contact_frames: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

impl EvalReport {
    fn from_frames(
        pred: &Predictor,
        ids: &Ids,
        split: Split,
        frames: Vec<FrameError>,
    ) -> Result<Self, AnalysisError> {
        let (mean, std) = mean_std(frames.iter().map(|f| f.mse));
        let contact: Vec<f64> = frames.iter().filter(|f| f.contact).map(|f| f.mse).collect();
        Ok(Self {
            model: pred.describe().to_string(),
            model_id: ids.model.clone(),
            dataset_id: ids.dataset.clone(),
            split,
            mean,
            std,
            contact_mean: (!contact.is_empty()).then(|| contact.iter().sum::<f64>() / contact.len() as f64),
            contact_frames: contact.len(),
            frames,
        })
    }

    /// Mean error over the frames that satisfy `keep`.
    pub fn mean_where(&self, keep: impl Fn(&FrameError) -> bool) -> Option<f64> {
        let (s, n) = self
            .frames
            .iter()
            .filter(|f| keep(f))
            .fold((0.0, 0usize), |(s, n), f| (s + f.mse, n + 1));
        (n > 0).then(|| s / n as f64)
    }
}

/// Model and dataset identities stamped onto reports.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ids {
    pub model: String,
    pub dataset: String,
}

impl Ids {
    pub fn of(pred: &Predictor, ds: &Dataset) -> Result<Self, AnalysisError> {
        Ok(Self {
            model: pred.id()?,
            dataset: ds.digest()?,
        })
    }
}

fn split_batches(ds: &Dataset, split: Split) -> Result<Vec<usize>, AnalysisError> {
    let b = ds.batch_indices(split);
    if b.is_empty() {
        return Err(AnalysisError::EmptySplit);
    }
    Ok(b)
}

fn frame_mse(pred: &[f32], truth: &[u8]) -> f64 {
    let s: f64 = pred
        .iter()
        .zip(truth)
        .map(|(&p, &t)| {
            let d = p as f64 - (t as f32 / 255.0) as f64;
            d * d
        })
        .sum();
    s / truth.len().max(1) as f64
}

/// Per-frame errors over `batches`, scoring frames from `from` on.
///
/// `inputs(b)` supplies the network-space inputs of batch `b`.
fn frame_errors(
    pred: &Predictor,
    ds: &Dataset,
    batches: &[usize],
    from: usize,
    inputs: &(dyn Fn(usize) -> Vec<Input> + Sync),
) -> Result<Vec<FrameError>, AnalysisError> {
    pred.check(ds)?;
    let per_batch = batches
        .par_iter()
        .map(|&b| {
            let x = inputs(b);
            let mut out = Vec::with_capacity(x.len().saturating_sub(from));
            pred.predict_batch(ds, b, &x, from, &mut |t, img| {
                let f = ds.frame(b, t);
                out.push(FrameError {
                    batch: b,
                    t,
                    mse: frame_mse(img, &f.image.rgb),
                    contact: f.contact,
                });
                Ok(())
            })?;
            Ok(out)
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(per_batch.into_iter().flatten().collect())
}

/// Per-frame image error of `pred` on a dataset split.
pub fn evaluate(pred: &Predictor, ds: &Dataset, split: Split) -> Result<EvalReport, AnalysisError> {
    let ids = Ids::of(pred, ds)?;
    evaluate_with_ids(pred, ds, split, &ids)
}

pub fn evaluate_with_ids(pred: &Predictor, ds: &Dataset, split: Split, ids: &Ids) -> Result<EvalReport, AnalysisError> {
    let batches = split_batches(ds, split)?;
    let frames = frame_errors(pred, ds, &batches, 0, &|b| pred.inputs(ds, b))?;
    EvalReport::from_frames(pred, ids, split, frames)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub baseline_mse: f64,
    /// Error increase when each input element is held at its training mean.
    pub deltas: [f64; INPUT_DIM],
    /// Error increase with all elements held at once.
    pub all_delta: f64,
}

/// Mean-substitution ablation of each of the nine inputs on a pretrained model.
pub fn ablate_inputs(pred: &Predictor, ds: &Dataset, split: Split) -> Result<AblationReport, AnalysisError> {
    let ids = Ids::of(pred, ds)?;
    let batches = split_batches(ds, split)?;
    let run = |channels: &[usize]| -> Result<f64, AnalysisError> {
        let frames = frame_errors(pred, ds, &batches, 0, &|b| {
            let mut x = pred.inputs(ds, b);
            for v in &mut x {
                for &i in channels {
                    v[i] = pred.neutral(ds, i);
                }
            }
            x
        })?;
        Ok(mean_std(frames.iter().map(|f| f.mse)).0)
    };
    let all: Vec<usize> = (0..INPUT_DIM).collect();
    let mut sets: Vec<Vec<usize>> = vec![vec![]];
    sets.extend((0..INPUT_DIM).map(|i| vec![i]));
    sets.push(all);
    let errors = sets
        .par_iter()
        .map(|s| run(s))
        .collect::<Result<Vec<f64>, AnalysisError>>()?;
    let base = errors[0];
    Ok(AblationReport {
        model_id: ids.model,
        dataset_id: ids.dataset,
        split,
        baseline_mse: base,
        deltas: std::array::from_fn(|i| errors[i + 1] - base),
        all_delta: errors[INPUT_DIM + 1] - base,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagSignal {
    /// The three efferent command channels.
    Action,
    /// The six strain sensor channels.
    Tactile,
}

impl LagSignal {
    pub fn channels(self) -> std::ops::Range<usize> {
        match self {
            LagSignal::Action => 0..ACTION_DIM,
            LagSignal::Tactile => ACTION_DIM..INPUT_DIM,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagPoint {
    pub lag: usize,
    pub mse: f64,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagScan {
    pub model_id: String,
    pub dataset_id: String,
    pub split: Split,
    pub signal: LagSignal,
    pub points: Vec<LagPoint>,
}

impl LagScan {
    /// Lag with the lowest error; the first one on ties.
    pub fn argmin(&self) -> Option<usize> {
        self.points
            .iter()
            .min_by(|a, b| a.mse.total_cmp(&b.mse))
            .map(|p| p.lag)
    }

    pub fn mse_at(&self, lag: usize) -> Option<f64> {
        self.points.iter().find(|p| p.lag == lag).map(|p| p.mse)
    }
}

/// Presents `signal` delayed by each lag and scores the frames where the delayed value exists.
///
/// A lag of L feeds the model the signal from frame t - L at frame t and scores
/// frames t >= L. Lag 0 reproduces [`evaluate`] exactly.
pub fn lag_scan(
    pred: &Predictor,
    ds: &Dataset,
    split: Split,
    signal: LagSignal,
    lags: &[usize],
) -> Result<LagScan, AnalysisError> {
    let ids = Ids::of(pred, ds)?;
    let batches = split_batches(ds, split)?;
    let shortest = batches.iter().map(|&b| ds.batches[b].len()).min().unwrap_or(0);
    if let Some(&lag) = lags.iter().find(|&&l| l >= shortest) {
        return Err(AnalysisError::Lag { lag, frames: shortest });
    }
    let channels = signal.channels();
    let points = lags
        .par_iter()
        .map(|&lag| {
            let frames = frame_errors(pred, ds, &batches, lag, &|b| {
                let x = pred.inputs(ds, b);
                let mut shifted = x.clone();
                for t in 0..x.len() {
                    let src = t.saturating_sub(lag);
                    for i in channels.clone() {
                        shifted[t][i] = x[src][i];
                    }
                }
                shifted
            })?;
            Ok(LagPoint {
                lag,
                mse: mean_std(frames.iter().map(|f| f.mse)).0,
                frames: frames.len(),
            })
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    Ok(LagScan {
        model_id: ids.model,
        dataset_id: ids.dataset,
        split,
        signal,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum NoiseFilter {
    /// No pixel of the split was ever covered by the distractor alone.
    NoDistractor,
    Ratio {
        ratio: f64,
        prediction_variance: f64,
        truth_variance: f64,
        /// Region pixels summed over batches.
        pixels: usize,
    },
}

impl NoiseFilter {
    pub fn ratio(&self) -> Option<f64> {
        match self {
            NoiseFilter::Ratio { ratio, .. } => Some(*ratio),
            NoiseFilter::NoDistractor => None,
        }
    }
}

/// Pixels of a batch that show the distractor at some frame and never the finger or an object.
pub fn distractor_region(ds: &Dataset, batch: usize) -> Vec<bool> {
    let n = ds.header.width * ds.header.height;
    let mut seen = vec![false; n];
    let mut body = vec![false; n];
    for f in &ds.batches[batch] {
        for (i, &l) in f.image.mask.iter().enumerate() {
            match l {
                LABEL_DISTRACTOR => seen[i] = true,
                l if l >= LABEL_FINGER && l < LABEL_OBSTACLE => body[i] = true,
                _ => {}
            }
        }
    }
    seen.iter().zip(&body).map(|(&s, &b)| s && !b).collect()
}

#[derive(Default)]
struct Moments {
    sum: Vec<f64>,
    sq: Vec<f64>,
    n: usize,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sq: vec![0.0; len],
            n: 0,
        }
    }

    fn add(&mut self, values: impl Iterator<Item = f64>) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sq.iter_mut()).zip(values) {
            *s += v;
            *q += v * v;
        }
        self.n += 1;
    }

    /// Sum of per-entry population variances.
    fn total_variance(&self) -> f64 {
        let n = self.n.max(1) as f64;
        self.sum
            .iter()
            .zip(&self.sq)
            .map(|(s, q)| (q / n - (s / n) * (s / n)).max(0.0))
            .sum()
    }
}

/// Ratio of temporal variance in predictions to that in ground truth, over the distractor region.
pub fn noise_filter_check(pred: &Predictor, ds: &Dataset, split: Split) -> Result<NoiseFilter, AnalysisError> {
    pred.check(ds)?;
    let batches = split_batches(ds, split)?;
    let parts = batches
        .par_iter()
        .map(|&b| {
            let region: Vec<usize> = distractor_region(ds, b)
                .iter()
                .enumerate()
                .filter(|(_, &r)| r)
                .map(|(i, _)| i)
                .collect();
            if region.is_empty() {
                return Ok((0.0, 0.0, 0));
            }
            let entries = |img: &[f32]| -> Vec<f64> {
                region
                    .iter()
                    .flat_map(|&i| (0..3).map(move |c| img[3 * i + c] as f64))
                    .collect()
            };
            let mut truth = Moments::new(region.len() * 3);
            for f in &ds.batches[b] {
                let img: Vec<f32> = f.image.to_unit_floats();
                truth.add(entries(&img).into_iter());
            }
            let mut predicted = Moments::new(region.len() * 3);
            let x = pred.inputs(ds, b);
            pred.predict_batch(ds, b, &x, 0, &mut |_, img| {
                predicted.add(entries(img).into_iter());
                Ok(())
            })?;
            Ok((predicted.total_variance(), truth.total_variance(), region.len()))
        })
        .collect::<Result<Vec<_>, AnalysisError>>()?;
    let (p, t, pixels) = parts
        .iter()
        .fold((0.0, 0.0, 0), |(p, t, n), &(a, b, c)| (p + a, t + b, n + c));
    if pixels == 0 || t <= 0.0 {
        return Ok(NoiseFilter::NoDistractor);
    }
    Ok(NoiseFilter::Ratio {
        ratio: p / t,
        prediction_variance: p,
        truth_variance: t,
        pixels,
    })
}
