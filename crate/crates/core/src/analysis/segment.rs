use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbs_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, Predictor};
use crate::datagen::{Dataset, View};
use crate::models::{LstmCarry, Network};
use crate::render::{LabeledImage, LABEL_BACKGROUND, LABEL_DISTRACTOR, LABEL_FINGER, LABEL_OBJECT_BASE, LABEL_OBSTACLE};
use crate::samples::scene_input;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskClass {
    Background,
    Finger,
    /// Union of all movable objects.
    Object,
    Obstacle,
    Distractor,
}

impl MaskClass {
    pub const ALL: [MaskClass; 5] = [
        MaskClass::Background,
        MaskClass::Finger,
        MaskClass::Object,
        MaskClass::Obstacle,
        MaskClass::Distractor,
    ];

    pub fn contains(self, label: u8) -> bool {
        match self {
            MaskClass::Background => label == LABEL_BACKGROUND,
            MaskClass::Finger => label == LABEL_FINGER,
            MaskClass::Object => (LABEL_OBJECT_BASE..LABEL_OBSTACLE).contains(&label),
            MaskClass::Obstacle => label == LABEL_OBSTACLE,
            MaskClass::Distractor => label == LABEL_DISTRACTOR,
        }
    }

    pub fn mask(self, image: &LabeledImage) -> Vec<bool> {
        image.mask.iter().map(|&l| self.contains(l)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskClass::Background => "background",
            MaskClass::Finger => "finger",
            MaskClass::Object => "object",
            MaskClass::Obstacle => "obstacle",
            MaskClass::Distractor => "distractor",
        }
    }
}

/// Intersection over union of two masks; 0 when both are empty.
pub fn iou(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

const BINS: usize = 256;

fn bin(v: f32) -> usize {
    ((v.clamp(0.0, 1.0) * (BINS - 1) as f32).round() as usize).min(BINS - 1)
}

/// Otsu threshold of values in [0, 1]: the bin edge maximizing between-class variance.
///
/// Values whose bin exceeds the returned bin index are foreground.
pub fn otsu_threshold(values: &[f32]) -> usize {
    let mut hist = [0u64; BINS];
    for &v in values {
        hist[bin(v)] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0, -1.0);
    for (k, &c) in hist.iter().enumerate().take(BINS - 1) {
        w0 += c as f64;
        sum0 += k as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = k;
        }
    }
    best
}

/// Min-max normalized copy; a flat channel becomes all zeros.
fn normalize(map: &[f32]) -> Vec<f32> {
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return vec![0.0; map.len()];
    }
    map.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Foreground pixels of a normalized map at its Otsu threshold.
fn binarize(map: &[f32]) -> Vec<bool> {
    if map.iter().all(|&v| v == 0.0) {
        return vec![false; map.len()];
    }
    let k = otsu_threshold(map);
    map.iter().map(|&v| bin(v) > k).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationReport {
    pub layer: String,
    pub batch: usize,
    pub t: usize,
    pub width: usize,
    pub height: usize,
    /// Min-max normalized channel maps at image resolution, row-major.
    pub maps: Vec<Vec<f32>>,
    pub masks: Vec<Vec<bool>>,
    /// `iou[channel][class]` in [`MaskClass::ALL`] order.
    pub iou: Vec<[f64; 5]>,
    /// Best channel and its IoU per class.
    pub best: [(usize, f64); 5],
}

impl SegmentationReport {
    /// Builds the report from raw activations `[h, w, c]`, upsampled to the image.
    pub fn from_activation(
        layer: &str,
        batch: usize,
        t: usize,
        activation: &Tensor<f32>,
        image: &LabeledImage,
    ) -> Result<Self, AnalysisError> {
        let shape = activation.shape();
        let (ah, aw, channels) = match *shape {
            [h, w, c] | [1, h, w, c] => (h, w, c),
            _ => {
                return Err(AnalysisError::Shape(format!(
                    "layer {layer} is not spatial: {shape:?}"
                )))
            }
        };
        let (h, w) = (image.height, image.width);
        let data = activation.data();
        let maps: Vec<Vec<f32>> = (0..channels)
            .map(|c| {
                let up: Vec<f32> = (0..h * w)
                    .map(|p| {
                        let (r, col) = (p / w * ah / h, p % w * aw / w);
                        data[(r * aw + col) * channels + c]
                    })
                    .collect();
                normalize(&up)
            })
            .collect();
        let masks: Vec<Vec<bool>> = maps.iter().map(|m| binarize(m)).collect();
        let truth: Vec<Vec<bool>> = MaskClass::ALL.iter().map(|c| c.mask(image)).collect();
        let iou_table: Vec<[f64; 5]> = masks
            .iter()
            .map(|m| std::array::from_fn(|k| iou(m, &truth[k])))
            .collect();
        let best = std::array::from_fn(|k| {
            iou_table
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (c, row)| if row[k] > acc.1 { (c, row[k]) } else { acc })
        });
        Ok(Self {
            layer: layer.to_string(),
            batch,
            t,
            width: w,
            height: h,
            maps,
            masks,
            iou: iou_table,
            best,
        })
    }

    pub fn best_for(&self, class: MaskClass) -> (usize, f64) {
        let k = MaskClass::ALL.iter().position(|&c| c == class).expect("class listed");
        self.best[k]
    }
}

fn layer_index(net: &Network, name: &str) -> Option<usize> {
    net.spec.layers.iter().position(|l| l.name == name)
}

fn layer_names(net: &Network) -> String {
    net.spec
        .layers
        .iter()
        .map(|l| l.name.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Activations of `layer` for one frame, thresholded and scored against the frame's masks.
///
/// For recurrent models the layer is looked up in the autoencoder's decoder.
pub fn latent_segmentation(
    pred: &Predictor,
    ds: &Dataset,
    batch: usize,
    t: usize,
    layer: &str,
) -> Result<SegmentationReport, AnalysisError> {
    pred.check(ds)?;
    if batch >= ds.batches.len() || t >= ds.batches[batch].len() {
        return Err(AnalysisError::Frame { batch, t });
    }
    let unknown = |net: &Network| AnalysisError::UnknownLayer {
        name: layer.to_string(),
        available: layer_names(net),
    };
    let inputs = pred.inputs(ds, batch);
    let view = View {
        batch,
        t,
        input: inputs[t],
    };
    let activation = match pred {
        Predictor::Static(c) => {
            let net = &c.network;
            let idx = layer_index(net, layer).ok_or_else(|| unknown(net))?;
            let x = Tensor::new(&[1, inputs[t].len()], inputs[t].to_vec())?;
            net.run(&x, 0..net.spec.layers.len(), &[idx], None)?.1.remove(0)
        }
        Predictor::Scene(c) => {
            let net = &c.network;
            let idx = layer_index(net, layer).ok_or_else(|| unknown(net))?;
            let x = scene_input(ds, &[view])?;
            net.run(&x, 0..net.spec.layers.len(), &[idx], None)?.1.remove(0)
        }
        Predictor::Recurrent { predictor, autoencoder } => {
            let ae = &autoencoder.network;
            let split = ae.spec.encoder_len.unwrap_or(0);
            let idx = layer_index(ae, layer)
                .filter(|&i| i >= split)
                .ok_or_else(|| unknown(ae))?;
            let net = &predictor.network;
            let mut carry = LstmCarry::zeros(net.spec.lstm_units.unwrap_or(0));
            let views: Vec<View> = (0..=t)
                .map(|k| View {
                    batch,
                    t: k,
                    input: inputs[k],
                })
                .collect();
            let x = scene_input(ds, &views)?;
            let (features, _) = net.run(&x, 0..net.spec.layers.len(), &[], Some(&mut carry))?;
            let dim = features.len() / (t + 1);
            let last = Tensor::new(&[1, dim], features.data()[t * dim..].to_vec())?;
            ae.run(&last, split..ae.spec.layers.len(), &[idx], None)?.1.remove(0)
        }
        Predictor::Constant { .. } | Predictor::Conditioning => {
            return Err(AnalysisError::UnknownLayer {
                name: layer.to_string(),
                available: String::new(),
            })
        }
    };
    SegmentationReport::from_activation(layer, batch, t, &activation, &ds.frame(batch, t).image)
}

/// Best-channel IoU for `class` after independently shuffling each channel's pixels, once per draw.
pub fn permutation_baseline(
    report: &SegmentationReport,
    image: &LabeledImage,
    class: MaskClass,
    draws: usize,
    seed: u64,
) -> Vec<f64> {
    let truth = class.mask(image);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..draws)
        .map(|_| {
            report
                .masks
                .iter()
                .map(|m| {
                    let mut shuffled = m.clone();
                    shuffled.shuffle(&mut rng);
                    iou(&shuffled, &truth)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Nearest-rank percentile, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}
