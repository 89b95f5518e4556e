use std::path::Path;

use sbs_tensor::Tensor;
use sha2::{Digest, Sha256};

use super::AnalysisError;
use crate::datagen::{Dataset, NormStats, View, INPUT_DIM};
use crate::models::{Checkpoint, LstmCarry, ModelKind};
use crate::samples::scene_input;

/// Network-space input of one frame.
pub type Input = [f32; INPUT_DIM];

/// Anything that produces an image per dataset frame.
#[derive(Clone, Debug, PartialEq)]
pub enum Predictor {
    /// Nine-vector to image.
    Static(Checkpoint),
    /// Conditioning image plus broadcast nine-vector to image.
    Scene(Checkpoint),
    /// Scene inputs through an LSTM to autoencoder features, then decoded.
    Recurrent { predictor: Checkpoint, autoencoder: Checkpoint },
    /// The same image for every frame.
    Constant { width: usize, height: usize, image: Vec<f32> },
    /// Frame 0 of each batch, repeated.
    Conditioning,
}

const CHUNK: usize = 32;

impl Predictor {
    /// Wraps a checkpoint by its model kind; autoencoders need their predictor.
    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, AnalysisError> {
        match ck.network.spec.kind {
            ModelKind::StaticSchema => Ok(Predictor::Static(ck)),
            ModelKind::SceneConditioned => Ok(Predictor::Scene(ck)),
            kind => Err(AnalysisError::Model(crate::models::ModelError::Spec(format!(
                "a {kind:?} checkpoint cannot predict frames on its own"
            )))),
        }
    }

    pub fn recurrent(predictor: Checkpoint, autoencoder: Checkpoint) -> Result<Self, AnalysisError> {
        if predictor.network.spec.kind != ModelKind::RecurrentPredictor || autoencoder.network.spec.kind != ModelKind::Autoencoder
        {
            return Err(AnalysisError::Model(crate::models::ModelError::Spec(
                "expected a recurrent predictor and an autoencoder".into(),
            )));
        }
        if predictor.network.spec.output_shape != [autoencoder.network.spec.feature_dim.unwrap_or(0)] {
            return Err(AnalysisError::Shape(format!(
                "predictor emits {:?} but the autoencoder takes {:?} features",
                predictor.network.spec.output_shape, autoencoder.network.spec.feature_dim
            )));
        }
        Ok(Predictor::Recurrent { predictor, autoencoder })
    }

    /// Mean training image as a constant predictor.
    pub fn mean_image(ds: &Dataset, split: crate::datagen::Split) -> Self {
        let (h, w) = (ds.header.height, ds.header.width);
        let mut sum = vec![0f64; h * w * 3];
        let mut n = 0usize;
        for b in ds.batch_indices(split) {
            for f in &ds.batches[b] {
                for (s, &v) in sum.iter_mut().zip(&f.image.rgb) {
                    *s += v as f64 / 255.0;
                }
                n += 1;
            }
        }
        Predictor::Constant {
            width: w,
            height: h,
            image: sum.into_iter().map(|s| (s / n.max(1) as f64) as f32).collect(),
        }
    }

    /// Loads a static or scene-conditioned checkpoint file.
    pub fn load(path: &Path) -> Result<Self, AnalysisError> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Main checkpoint (the frame predictor for recurrent models).
    pub fn checkpoint(&self) -> Option<&Checkpoint> {
        match self {
            Predictor::Static(c) | Predictor::Scene(c) => Some(c),
            Predictor::Recurrent { predictor, .. } => Some(predictor),
            _ => None,
        }
    }

    pub fn describe(&self) -> &'static str {
        match self {
            Predictor::Static(_) => "static_schema",
            Predictor::Scene(_) => "scene_conditioned",
            Predictor::Recurrent { .. } => "recurrent",
            Predictor::Constant { .. } => "constant_image",
            Predictor::Conditioning => "conditioning_image",
        }
    }

    /// Content hash of the weights (or of the constant image).
    pub fn id(&self) -> Result<String, AnalysisError> {
        let mut h = Sha256::new();
        h.update(self.describe().as_bytes());
        match self {
            Predictor::Static(c) | Predictor::Scene(c) => h.update(c.to_bytes()?),
            Predictor::Recurrent { predictor, autoencoder } => {
                h.update(predictor.to_bytes()?);
                h.update(autoencoder.to_bytes()?);
            }
            Predictor::Constant { width, height, image } => {
                h.update((*width as u64).to_le_bytes());
                h.update((*height as u64).to_le_bytes());
                for v in image {
                    h.update(v.to_le_bytes());
                }
            }
            Predictor::Conditioning => {}
        }
        Ok(hex::encode(h.finalize()))
    }

    fn output_size(&self) -> Option<(usize, usize)> {
        let shape = match self {
            Predictor::Static(c) | Predictor::Scene(c) => &c.network.spec.output_shape,
            Predictor::Recurrent { autoencoder, .. } => &autoencoder.network.spec.output_shape,
            Predictor::Constant { width, height, .. } => return Some((*height, *width)),
            Predictor::Conditioning => return None,
        };
        Some((shape[0], shape[1]))
    }

    /// Rejects datasets whose images the model cannot produce.
    pub fn check(&self, ds: &Dataset) -> Result<(), AnalysisError> {
        if let Some((h, w)) = self.output_size() {
            if (h, w) != (ds.header.height, ds.header.width) {
                return Err(AnalysisError::Shape(format!(
                    "model predicts {h}x{w} images, dataset has {}x{}",
                    ds.header.height, ds.header.width
                )));
            }
        }
        if let Predictor::Constant { width, height, image } = self {
            if image.len() != width * height * 3 {
                return Err(AnalysisError::Shape("constant image has the wrong length".into()));
            }
        }
        Ok(())
    }

    /// Statistics mapping raw inputs to network space.
    pub fn stats<'a>(&'a self, ds: &'a Dataset) -> &'a NormStats {
        self.checkpoint()
            .and_then(|c| c.meta.norm.as_ref())
            .unwrap_or(&ds.header.stats)
    }

    /// Network-space value standing for channel `i` at its training mean.
    pub fn neutral(&self, ds: &Dataset, i: usize) -> f32 {
        self.stats(ds).neutral(i)
    }

    /// Network-space inputs of every frame of `batch`, with the model's masked channels applied.
    pub fn inputs(&self, ds: &Dataset, batch: usize) -> Vec<Input> {
        let stats = self.stats(ds);
        let masked = self.checkpoint().map(|c| c.meta.masked_inputs.as_slice()).unwrap_or(&[]);
        ds.batches[batch]
            .iter()
            .map(|f| {
                let mut x = stats.apply(&f.raw_input());
                for &i in masked {
                    x[i] = stats.neutral(i);
                }
                x
            })
            .collect()
    }

    /// Predicts frames `from..inputs.len()` of `batch` in time order, one `emit(t, image)` each.
    ///
    /// Recurrent models still consume the inputs before `from` to build their state.
    pub fn predict_batch(
        &self,
        ds: &Dataset,
        batch: usize,
        inputs: &[Input],
        from: usize,
        emit: &mut dyn FnMut(usize, &[f32]) -> Result<(), AnalysisError>,
    ) -> Result<(), AnalysisError> {
        let n = inputs.len();
        let px = ds.header.width * ds.header.height * 3;
        match self {
            Predictor::Constant { image, .. } => {
                for t in from..n {
                    emit(t, image)?;
                }
            }
            Predictor::Conditioning => {
                let first = ds.image_floats(batch, 0);
                for t in from..n {
                    emit(t, &first)?;
                }
            }
            Predictor::Static(c) => {
                for start in (from..n).step_by(CHUNK) {
                    let end = (start + CHUNK).min(n);
                    let data = inputs[start..end].iter().flatten().copied().collect();
                    let x = Tensor::new(&[end - start, INPUT_DIM], data)?;
                    let y = c.network.predict(&x)?;
                    for (k, img) in y.data().chunks_exact(px).enumerate() {
                        emit(start + k, img)?;
                    }
                }
            }
            Predictor::Scene(c) => {
                for start in (from..n).step_by(CHUNK) {
                    let end = (start + CHUNK).min(n);
                    let views: Vec<View> = (start..end)
                        .map(|t| View {
                            batch,
                            t,
                            input: inputs[t],
                        })
                        .collect();
                    let y = c.network.predict(&scene_input(ds, &views)?)?;
                    for (k, img) in y.data().chunks_exact(px).enumerate() {
                        emit(start + k, img)?;
                    }
                }
            }
            Predictor::Recurrent { predictor, autoencoder } => {
                let net = &predictor.network;
                let units = net.spec.lstm_units.unwrap_or(0);
                let mut carry = LstmCarry::zeros(units);
                for start in (0..n).step_by(CHUNK) {
                    let end = (start + CHUNK).min(n);
                    let views: Vec<View> = (start..end)
                        .map(|t| View {
                            batch,
                            t,
                            input: inputs[t],
                        })
                        .collect();
                    let x = scene_input(ds, &views)?;
                    let (features, _) = net.run(&x, 0..net.spec.layers.len(), &[], Some(&mut carry))?;
                    if end <= from {
                        continue;
                    }
                    let y = autoencoder.network.decode(&features)?;
                    for (k, img) in y.data().chunks_exact(px).enumerate() {
                        if start + k >= from {
                            emit(start + k, img)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Predicted image of a single frame.
    pub fn predict_frame(&self, ds: &Dataset, batch: usize, t: usize) -> Result<Vec<f32>, AnalysisError> {
        let inputs = self.inputs(ds, batch);
        let mut out = Vec::new();
        self.predict_batch(ds, batch, &inputs[..=t], t, &mut |_, img| {
            out = img.to_vec();
            Ok(())
        })?;
        Ok(out)
    }
}
