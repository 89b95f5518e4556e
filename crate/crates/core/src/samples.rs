//! Network-ready tensors assembled from dataset frames.

use sbs_tensor::Tensor;

use crate::datagen::{make_training_views, Dataset, Split, Task, TrainingViews, View, INPUT_DIM};
use crate::models::{ModelError, Supervised, SCENE_INPUT_CHANNELS};

fn pairs(ds: &Dataset, split: Split) -> Vec<View> {
    match make_training_views(ds, Task::StaticSchema, split) {
        TrainingViews::Pairs(v) => v,
        TrainingViews::Sequences(s) => s.into_iter().flatten().collect(),
    }
}

fn stack_images(ds: &Dataset, views: &[View]) -> Result<Tensor<f32>, ModelError> {
    let (h, w) = (ds.header.height, ds.header.width);
    let mut data = Vec::with_capacity(views.len() * h * w * 3);
    for v in views {
        data.extend(ds.image_floats(v.batch, v.t));
    }
    Ok(Tensor::new(&[views.len(), h, w, 3], data)?)
}

/// Scene-conditioned input: frame-0 RGB of the batch plus nine constant planes.
pub fn scene_input(ds: &Dataset, views: &[View]) -> Result<Tensor<f32>, ModelError> {
    let (h, w) = (ds.header.height, ds.header.width);
    let mut data = Vec::with_capacity(views.len() * h * w * SCENE_INPUT_CHANNELS);
    for v in views {
        let scene = &ds.frame(v.batch, 0).image.rgb;
        for px in scene.chunks_exact(3) {
            data.extend(px.iter().map(|&b| b as f32 / 255.0));
            data.extend_from_slice(&v.input);
        }
    }
    Ok(Tensor::new(&[views.len(), h, w, SCENE_INPUT_CHANNELS], data)?)
}

pub fn vector_input(views: &[View]) -> Result<Tensor<f32>, ModelError> {
    let data = views.iter().flat_map(|v| v.input).collect();
    Ok(Tensor::new(&[views.len(), INPUT_DIM], data)?)
}

/// Input vector → target image of the same frame.
pub struct StaticSamples<'a> {
    pub ds: &'a Dataset,
    pub views: Vec<View>,
}

impl<'a> StaticSamples<'a> {
    pub fn new(ds: &'a Dataset, split: Split) -> Self {
        Self { ds, views: pairs(ds, split) }
    }
}

impl Supervised for StaticSamples<'_> {
    fn len(&self) -> usize {
        self.views.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        let v: Vec<View> = idx.iter().map(|&i| self.views[i]).collect();
        Ok((vector_input(&v)?, stack_images(self.ds, &v)?))
    }
}

/// Initial scene image plus broadcast inputs → target image.
pub struct SceneSamples<'a> {
    pub ds: &'a Dataset,
    pub views: Vec<View>,
}

impl<'a> SceneSamples<'a> {
    pub fn new(ds: &'a Dataset, split: Split) -> Self {
        Self { ds, views: pairs(ds, split) }
    }
}

impl Supervised for SceneSamples<'_> {
    fn len(&self) -> usize {
        self.views.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        let v: Vec<View> = idx.iter().map(|&i| self.views[i]).collect();
        Ok((scene_input(self.ds, &v)?, stack_images(self.ds, &v)?))
    }
}

/// Images reconstructing themselves, for autoencoder training.
pub struct ImageSamples<'a> {
    pub ds: &'a Dataset,
    pub views: Vec<View>,
}

impl<'a> ImageSamples<'a> {
    pub fn new(ds: &'a Dataset, split: Split) -> Self {
        Self { ds, views: pairs(ds, split) }
    }
}

impl Supervised for ImageSamples<'_> {
    fn len(&self) -> usize {
        self.views.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        let v: Vec<View> = idx.iter().map(|&i| self.views[i]).collect();
        let img = stack_images(self.ds, &v)?;
        Ok((img.clone(), img))
    }
}

/// Fixed-length time windows of scene inputs with per-frame feature targets.
///
/// One sample is one window; its frames occupy the batch axis in time order.
pub struct FeatureWindows<'a> {
    pub ds: &'a Dataset,
    pub sequences: Vec<Vec<View>>,
    /// `features[b][t]` for dataset batch `b`.
    pub features: Vec<Vec<Vec<f32>>>,
    pub window: usize,
    starts: Vec<(usize, usize)>,
}

impl<'a> FeatureWindows<'a> {
    pub fn new(ds: &'a Dataset, split: Split, features: Vec<Vec<Vec<f32>>>, window: usize) -> Self {
        let sequences = match make_training_views(ds, Task::Recurrent, split) {
            TrainingViews::Sequences(s) => s,
            TrainingViews::Pairs(p) => vec![p],
        };
        let window = window.max(1);
        let starts = sequences
            .iter()
            .enumerate()
            .flat_map(|(k, s)| (0..s.len() / window).map(move |w| (k, w * window)))
            .collect();
        Self {
            ds,
            sequences,
            features,
            window,
            starts,
        }
    }
}

impl Supervised for FeatureWindows<'_> {
    fn len(&self) -> usize {
        self.starts.len()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        if idx.len() != 1 {
            return Err(ModelError::Spec("feature windows are trained one window at a time".into()));
        }
        let (k, start) = self.starts[idx[0]];
        let views = &self.sequences[k][start..start + self.window];
        let f = self.features[views[0].batch][0].len();
        let target: Vec<f32> = views
            .iter()
            .flat_map(|v| self.features[v.batch][v.t].iter().copied())
            .collect();
        Ok((scene_input(self.ds, views)?, Tensor::new(&[views.len(), f], target)?))
    }
}
