use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbs_tensor::init::he_uniform;
use sbs_tensor::{LstmVars, Tape, Tensor, Var};

use super::spec::{Layer, ModelSpec, ParamRole, ParamSpec};
use super::ModelError;

/// LSTM state carried between consecutive chunks of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCarry {
    pub h: Tensor<f32>,
    pub c: Tensor<f32>,
}

impl LstmCarry {
    pub fn zeros(units: usize) -> Self {
        Self {
            h: Tensor::zeros(&[1, units]),
            c: Tensor::zeros(&[1, units]),
        }
    }
}

/// A model spec with concrete weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: ModelSpec,
    pub params: Vec<Tensor<f32>>,
    specs: Vec<ParamSpec>,
}

impl Network {
    /// He-uniform weights from `seed`, zero biases, LSTM forget bias 1.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let specs = spec.param_specs()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .iter()
            .map(|p| match p.role {
                ParamRole::Bias => {
                    let mut b = Tensor::zeros(&p.shape);
                    if let Layer::Lstm { units } = spec.layers[p.layer].layer {
                        for v in &mut b.data_mut()[units..2 * units] {
                            *v = 1.0;
                        }
                    }
                    b
                }
                _ => he_uniform(&p.shape, p.fan_in, &mut rng),
            })
            .collect();
        Ok(Self { spec, params, specs })
    }

    /// Wraps existing weights after checking them against the spec.
    pub fn from_parts(spec: ModelSpec, params: Vec<Tensor<f32>>) -> Result<Self, ModelError> {
        spec.validate()?;
        let specs = spec.param_specs()?;
        if specs.len() != params.len() {
            return Err(ModelError::Spec(format!("{} tensors for {} parameters", params.len(), specs.len())));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.shape != p.shape() {
                return Err(ModelError::Shape {
                    context: format!("{}: expected {:?}, found {:?}", s.name, s.shape, p.shape()),
                });
            }
        }
        Ok(Self { spec, params, specs })
    }

    pub fn param_specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Pushes every weight onto the tape, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape<f32>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| if trainable { tape.param(p.clone()) } else { tape.constant(p.clone()) })
            .collect()
    }

    fn layer_params(&self, layer: usize, bound: &[Var]) -> Vec<Var> {
        self.specs
            .iter()
            .zip(bound)
            .filter(|(s, _)| s.layer == layer)
            .map(|(_, v)| *v)
            .collect()
    }

    /// Runs `layers` on `input` (batch axis first) and returns every layer output.
    pub fn forward_range(
        &self,
        tape: &mut Tape<f32>,
        bound: &[Var],
        input: Var,
        layers: Range<usize>,
        mut carry: Option<&mut LstmCarry>,
    ) -> Result<Vec<Var>, ModelError> {
        let mut x = input;
        let mut outs = Vec::with_capacity(layers.len());
        for i in layers {
            let p = self.layer_params(i, bound);
            let batch = tape.value(x).shape()[0];
            x = match &self.spec.layers[i].layer {
                Layer::Dense { reshape, .. } => {
                    let flat = tape.value(x).len() / batch.max(1);
                    let rows = tape.reshape(x, &[batch, flat])?;
                    let y = tape.dense(rows, p[0], p[1])?;
                    match reshape {
                        Some(s) => tape.reshape(y, &[batch, s[0], s[1], s[2]])?,
                        None => y,
                    }
                }
                Layer::Conv { stride, padding, .. } => {
                    let y = tape.conv2d(x, p[0], *stride, *padding)?;
                    tape.bias_add(y, p[1])?
                }
                Layer::ConvTranspose { stride, padding, .. } => {
                    let y = tape.conv_transpose2d(x, p[0], *stride, *padding)?;
                    tape.bias_add(y, p[1])?
                }
                Layer::Relu => tape.relu(x),
                Layer::Sigmoid => tape.sigmoid(x),
                Layer::Reshape { shape } => {
                    let mut s = vec![batch];
                    s.extend(shape);
                    tape.reshape(x, &s)?
                }
                Layer::Flatten => {
                    let flat = tape.value(x).len() / batch.max(1);
                    tape.reshape(x, &[batch, flat])?
                }
                Layer::Lstm { units } => {
                    let vars = LstmVars {
                        w_x: p[0],
                        w_h: p[1],
                        bias: p[2],
                    };
                    let start = carry.as_deref().cloned().unwrap_or_else(|| LstmCarry::zeros(*units));
                    let mut h = tape.constant(start.h);
                    let mut c = tape.constant(start.c);
                    let mut hs = Vec::with_capacity(batch);
                    for t in 0..batch {
                        let xt = tape.slice_rows(x, t, 1)?;
                        (h, c) = tape.lstm_step(xt, h, c, &vars)?;
                        hs.push(h);
                    }
                    if let Some(cr) = carry.as_deref_mut() {
                        *cr = LstmCarry {
                            h: tape.value(h).clone(),
                            c: tape.value(c).clone(),
                        };
                    }
                    tape.concat_rows(&hs)?
                }
            };
            outs.push(x);
        }
        Ok(outs)
    }

    fn check_input(&self, input: &Tensor<f32>, range: &Range<usize>) -> Result<(), ModelError> {
        let expected = if range.start == 0 {
            self.spec.input_shape.clone()
        } else {
            self.spec.infer_shapes()?[range.start - 1].clone()
        };
        if input.ndim() == 0 || input.shape()[1..] != expected[..] {
            return Err(ModelError::Shape {
                context: format!("input {:?} does not match per-sample shape {expected:?}", input.shape()),
            });
        }
        Ok(())
    }

    /// Inference over a layer range; returns the outputs of the requested layers.
    pub fn run(
        &self,
        input: &Tensor<f32>,
        range: Range<usize>,
        capture: &[usize],
        carry: Option<&mut LstmCarry>,
    ) -> Result<(Tensor<f32>, Vec<Tensor<f32>>), ModelError> {
        self.check_input(input, &range)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let x = tape.constant(input.clone());
        let start = range.start;
        let outs = self.forward_range(&mut tape, &bound, x, range, carry)?;
        let last = outs.last().map(|v| tape.value(*v).clone()).unwrap_or_else(|| input.clone());
        let captured = capture
            .iter()
            .map(|&i| {
                i.checked_sub(start)
                    .and_then(|k| outs.get(k))
                    .map(|v| tape.value(*v).clone())
                    .ok_or_else(|| ModelError::Spec(format!("layer {i} not in the evaluated range")))
            })
            .collect::<Result<_, _>>()?;
        Ok((last, captured))
    }

    pub fn predict(&self, input: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        Ok(self.run(input, 0..self.spec.layers.len(), &[], None)?.0)
    }

    /// Autoencoder halves.
    pub fn encode(&self, images: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let split = self.encoder_split()?;
        Ok(self.run(images, 0..split, &[], None)?.0)
    }

    pub fn decode(&self, features: &Tensor<f32>) -> Result<Tensor<f32>, ModelError> {
        let split = self.encoder_split()?;
        Ok(self.run(features, split..self.spec.layers.len(), &[], None)?.0)
    }

    fn encoder_split(&self) -> Result<usize, ModelError> {
        self.spec
            .encoder_len
            .ok_or_else(|| ModelError::Spec("model has no encoder/decoder split".into()))
    }

    /// Mean squared error of one forward pass against `target`.
    pub fn loss(&self, input: &Tensor<f32>, target: &Tensor<f32>) -> Result<f64, ModelError> {
        let pred = self.predict(input)?;
        if pred.shape() != target.shape() {
            return Err(ModelError::Shape {
                context: format!("prediction {:?} vs target {:?}", pred.shape(), target.shape()),
            });
        }
        Ok(mse(pred.data(), target.data()))
    }
}

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum();
    s / a.len().max(1) as f64
}
