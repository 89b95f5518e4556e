use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbs_tensor::{Adam, AdamConfig, Tape, Tensor};
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::ModelError;

/// Indexable supervised samples, assembled into batches on demand.
pub trait Supervised {
    fn len(&self) -> usize;

    /// Input and target tensors, batch axis first, for the given sample indices.
    fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples held as two stacked tensors.
#[derive(Clone, Debug)]
pub struct TensorPairs {
    pub inputs: Tensor<f32>,
    pub targets: Tensor<f32>,
}

fn gather(t: &Tensor<f32>, idx: &[usize]) -> Result<Tensor<f32>, ModelError> {
    let row: usize = t.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * row);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    Ok(Tensor::new(&shape, data)?)
}

impl Supervised for TensorPairs {
    fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>), ModelError> {
        Ok((gather(&self.inputs, indices)?, gather(&self.targets, indices)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Keep sample order; needed when a sample is a time window.
    pub shuffle: bool,
    /// Caps the number of optimizer steps per epoch.
    pub max_steps_per_epoch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            lr: 1e-3,
            seed: 0,
            shuffle: true,
            max_steps_per_epoch: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Optimizer state bound to one network.
pub struct Trainer {
    adam: Adam<f32>,
}

impl Trainer {
    pub fn new(net: &Network, lr: f64) -> Self {
        Self {
            adam: Adam::new(
                AdamConfig {
                    lr,
                    ..AdamConfig::default()
                },
                &net.params,
            ),
        }
    }

    /// One forward/backward/Adam update; returns the pre-update loss.
    pub fn step(&mut self, net: &mut Network, input: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let x = tape.constant(input.clone());
        let n = net.spec.layers.len();
        let outs = net.forward_range(&mut tape, &bound, x, 0..n, None)?;
        let pred = *outs.last().ok_or_else(|| ModelError::Spec("empty network".into()))?;
        let y = tape.constant(target.clone());
        let loss = tape.mse(pred, y)?;
        let value = tape.value(loss).data()[0] as f64;
        if !value.is_finite() {
            return Err(ModelError::Diverged(value));
        }
        tape.backward(loss)?;
        let grads: Vec<_> = bound.iter().map(|v| tape.take_grad(*v)).collect();
        self.adam.step(&mut net.params, &grads);
        Ok(value)
    }
}

/// Minibatch Adam on mean squared error.
pub fn train(
    net: &mut Network,
    data: &dyn Supervised,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport, ModelError> {
    if data.is_empty() {
        return Err(ModelError::Spec("no training samples".into()));
    }
    let mut trainer = Trainer::new(net, cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut report = TrainReport::default();
    let bs = cfg.batch_size.max(1);
    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(bs) {
            if cfg.max_steps_per_epoch.is_some_and(|m| batches >= m) {
                break;
            }
            let (x, y) = data.batch(chunk)?;
            total += trainer.step(net, &x, &y)?;
            batches += 1;
            report.steps += 1;
        }
        let mean = total / batches.max(1) as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(report)
}

/// Mean loss over all samples, evaluated in chunks without gradients.
pub fn evaluate_loss(net: &Network, data: &dyn Supervised, chunk: usize) -> Result<f64, ModelError> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    for c in idx.chunks(chunk.max(1)) {
        let (x, y) = data.batch(c)?;
        let pred = net.predict(&x)?;
        total += super::network::mse(pred.data(), y.data()) * y.len() as f64;
        count += y.len();
    }
    Ok(total / count.max(1) as f64)
}
