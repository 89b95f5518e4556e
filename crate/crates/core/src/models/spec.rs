use serde::{Deserialize, Serialize};

use super::ModelError;

pub const ACTION_SENSOR_DIM: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    StaticSchema,
    SceneConditioned,
    Autoencoder,
    RecurrentPredictor,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    /// Affine map over the flattened sample, optionally reshaped afterwards.
    Dense { units: usize, reshape: Option<[usize; 3]> },
    Conv { kernel: usize, stride: usize, padding: usize, channels: usize },
    ConvTranspose { kernel: usize, stride: usize, padding: usize, channels: usize },
    Relu,
    Sigmoid,
    Reshape { shape: Vec<usize> },
    Flatten,
    /// Runs along the batch axis, which holds consecutive time steps.
    Lstm { units: usize },
}

impl Layer {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            Layer::Dense { .. } | Layer::Conv { .. } | Layer::ConvTranspose { .. } | Layer::Lstm { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub layer: Layer,
}

/// Role of a parameter tensor inside its layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    InputWeight,
    RecurrentWeight,
}

impl ParamRole {
    pub fn suffix(self) -> &'static str {
        match self {
            ParamRole::Weight => "weight",
            ParamRole::Bias => "bias",
            ParamRole::InputWeight => "w_x",
            ParamRole::RecurrentWeight => "w_h",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub fan_in: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-sample input shape (no batch axis).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub output_shape: Vec<usize>,
    pub feature_dim: Option<usize>,
    pub lstm_units: Option<usize>,
    /// For autoencoders: layers `..encoder_len` map images to features.
    pub encoder_len: Option<usize>,
}

fn conv_out(size: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    sbs_tensor::conv_output_size(size, k, s, p)
}

fn layer_output(layer: &Layer, input: &[usize]) -> Option<Vec<usize>> {
    let flat: usize = input.iter().product();
    match (layer, input) {
        (Layer::Dense { units, reshape }, _) => match reshape {
            Some(s) if s.iter().product::<usize>() == *units => Some(s.to_vec()),
            Some(_) => None,
            None => Some(vec![*units]),
        },
        (Layer::Conv { kernel, stride, padding, channels }, &[h, w, _]) => Some(vec![
            conv_out(h, *kernel, *stride, *padding)?,
            conv_out(w, *kernel, *stride, *padding)?,
            *channels,
        ]),
        (Layer::ConvTranspose { kernel, stride, padding, channels }, &[h, w, _]) => {
            let up = |n: usize| sbs_tensor::conv_transpose_output_size(n, *kernel, *stride, *padding);
            Some(vec![up(h)?, up(w)?, *channels])
        }
        (Layer::Relu | Layer::Sigmoid, _) => Some(input.to_vec()),
        (Layer::Reshape { shape }, _) => (shape.iter().product::<usize>() == flat).then(|| shape.clone()),
        (Layer::Flatten, _) => Some(vec![flat]),
        (Layer::Lstm { units }, &[_]) => Some(vec![*units]),
        _ => None,
    }
}

impl ModelSpec {
    /// Number of layer descriptors.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Per-sample shape after every layer; errors on the first incompatible layer.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut cur = self.input_shape.clone();
        for (i, l) in self.layers.iter().enumerate() {
            cur = layer_output(&l.layer, &cur).ok_or_else(|| ModelError::Shape {
                context: format!("layer {i} ({}) cannot take input {cur:?}", l.name),
            })?;
            shapes.push(cur.clone());
        }
        Ok(shapes)
    }

    /// Static check that the declared output is reached and names are unique.
    pub fn validate(&self) -> Result<(), ModelError> {
        let shapes = self.infer_shapes()?;
        let last = shapes.last().cloned().unwrap_or_else(|| self.input_shape.clone());
        if last != self.output_shape {
            return Err(ModelError::Shape {
                context: format!("layers produce {last:?}, spec declares {:?}", self.output_shape),
            });
        }
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(ModelError::Spec("layer names must be unique".into()));
        }
        if self.layers.iter().filter(|l| matches!(l.layer, Layer::Lstm { .. })).count() > 1 {
            return Err(ModelError::Spec("at most one LSTM layer is supported".into()));
        }
        if let Some(e) = self.encoder_len {
            if e == 0 || e >= self.layers.len() {
                return Err(ModelError::Spec(format!("encoder split {e} out of range")));
            }
        }
        Ok(())
    }

    /// Trainable tensors in layer order.
    pub fn param_specs(&self) -> Result<Vec<ParamSpec>, ModelError> {
        let shapes = self.infer_shapes()?;
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            let input = if i == 0 { &self.input_shape } else { &shapes[i - 1] };
            let c_in = *input.last().unwrap_or(&1);
            let flat_in: usize = input.iter().product();
            let mut push = |role: ParamRole, shape: Vec<usize>, fan_in: usize| {
                out.push(ParamSpec {
                    name: format!("{}.{}", l.name, role.suffix()),
                    layer: i,
                    role,
                    shape,
                    fan_in,
                })
            };
            match l.layer {
                Layer::Dense { units, .. } => {
                    push(ParamRole::Weight, vec![flat_in, units], flat_in);
                    push(ParamRole::Bias, vec![units], 0);
                }
                Layer::Conv { kernel, channels, .. } => {
                    push(ParamRole::Weight, vec![kernel, kernel, c_in, channels], kernel * kernel * c_in);
                    push(ParamRole::Bias, vec![channels], 0);
                }
                Layer::ConvTranspose { kernel, stride, channels, .. } => {
                    let taps = (kernel * kernel / (stride * stride)).max(1);
                    push(ParamRole::Weight, vec![kernel, kernel, channels, c_in], taps * c_in);
                    push(ParamRole::Bias, vec![channels], 0);
                }
                Layer::Lstm { units } => {
                    push(ParamRole::InputWeight, vec![flat_in, 4 * units], flat_in);
                    push(ParamRole::RecurrentWeight, vec![units, 4 * units], units);
                    push(ParamRole::Bias, vec![4 * units], 0);
                }
                _ => {}
            }
        }
        Ok(out)
    }

    pub fn param_count(&self) -> Result<usize, ModelError> {
        Ok(self
            .param_specs()?
            .iter()
            .map(|p| p.shape.iter().product::<usize>())
            .sum())
    }

    /// Index of the output of the last transposed convolution's activation before
    /// the final one, used for latent inspection.
    pub fn penultimate_upsampling_activation(&self) -> Option<usize> {
        let ups: Vec<usize> = self
            .layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l.layer, Layer::ConvTranspose { .. }))
            .map(|(i, _)| i)
            .collect();
        let idx = *ups.get(ups.len().checked_sub(2)?)?;
        match self.layers.get(idx + 1).map(|l| &l.layer) {
            Some(Layer::Relu) => Some(idx + 1),
            _ => Some(idx),
        }
    }
}

struct Stack {
    layers: Vec<LayerSpec>,
}

impl Stack {
    fn new() -> Self {
        Self { layers: Vec::new() }
    }

    fn push(&mut self, prefix: &str, layer: Layer) -> &mut Self {
        let n = self.layers.iter().filter(|l| l.name.starts_with(prefix)).count();
        self.layers.push(LayerSpec {
            name: format!("{prefix}{n}"),
            layer,
        });
        self
    }

    fn conv(&mut self, kernel: usize, stride: usize, padding: usize, channels: usize) -> &mut Self {
        self.push("conv", Layer::Conv { kernel, stride, padding, channels })
    }

    fn up(&mut self, channels: usize) -> &mut Self {
        self.push(
            "up",
            Layer::ConvTranspose {
                kernel: 4,
                stride: 2,
                padding: 1,
                channels,
            },
        )
    }

    fn relu(&mut self) -> &mut Self {
        self.push("relu", Layer::Relu)
    }
}

fn doublings(from: usize, to: usize) -> Option<usize> {
    let mut n = 0;
    let mut s = from;
    while s < to {
        s *= 2;
        n += 1;
    }
    (s == to).then_some(n)
}

fn check_size(size: usize) -> Result<(), ModelError> {
    if [32, 64, 128].contains(&size) {
        Ok(())
    } else {
        Err(ModelError::Resolution(size))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSchemaConfig {
    pub image_size: usize,
    /// Channels of the 4x4 seed map; halved after each upsampling.
    pub seed_channels: usize,
    pub min_channels: usize,
    /// Number of upsampling blocks (from the top) followed by a 3x3 refinement conv.
    pub refine_blocks: usize,
}

impl Default for StaticSchemaConfig {
    fn default() -> Self {
        Self::for_size(64)
    }
}

impl StaticSchemaConfig {
    /// 13 layers at 32/64, 25 at 128.
    pub fn for_size(image_size: usize) -> Self {
        Self {
            image_size,
            seed_channels: 64,
            min_channels: 16,
            refine_blocks: if image_size >= 128 { 5 } else { 0 },
        }
    }
}

/// 9-vector reshaped to 3x3x1, dense seed map, then upsampling to an RGB image.
pub fn build_static_schema(cfg: &StaticSchemaConfig) -> Result<ModelSpec, ModelError> {
    check_size(cfg.image_size)?;
    let n = doublings(4, cfg.image_size).ok_or(ModelError::Resolution(cfg.image_size))?;
    if cfg.refine_blocks > n {
        return Err(ModelError::Spec(format!("{} refinement blocks for {n} upsamplings", cfg.refine_blocks)));
    }
    let mut s = Stack::new();
    s.push("reshape", Layer::Reshape { shape: vec![3, 3, 1] });
    let c0 = cfg.seed_channels.max(1);
    s.push(
        "dense",
        Layer::Dense {
            units: 16 * c0,
            reshape: Some([4, 4, c0]),
        },
    );
    s.relu();
    let mut c = c0;
    for b in 0..n {
        c = (c / 2).max(cfg.min_channels.max(1));
        s.up(c).relu();
        if b < cfg.refine_blocks {
            s.conv(3, 1, 1, c).relu();
        }
    }
    s.conv(3, 1, 1, 3);
    s.push("sigmoid", Layer::Sigmoid);
    let spec = ModelSpec {
        kind: ModelKind::StaticSchema,
        input_shape: vec![ACTION_SENSOR_DIM],
        layers: s.layers,
        output_shape: vec![cfg.image_size, cfg.image_size, 3],
        feature_dim: None,
        lstm_units: None,
        encoder_len: None,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConditionedConfig {
    pub image_size: usize,
    pub channels: usize,
    /// Stride-2 encoder stages (mirrored by the decoder).
    pub down: usize,
    /// 3x3 refinement convs at full resolution.
    pub refine: usize,
}

impl Default for SceneConditionedConfig {
    fn default() -> Self {
        Self::for_size(64)
    }
}

impl SceneConditionedConfig {
    /// 14 layers at 32/64, 26 at 128.
    pub fn for_size(image_size: usize) -> Self {
        let big = image_size >= 128;
        Self {
            image_size,
            channels: 16,
            down: if big { 4 } else { 2 },
            refine: if big { 4 } else { 2 },
        }
    }
}

/// Channels fed to scene-conditioned networks: RGB plus nine broadcast scalars.
pub const SCENE_INPUT_CHANNELS: usize = 3 + ACTION_SENSOR_DIM;

pub fn build_scene_conditioned(cfg: &SceneConditionedConfig) -> Result<ModelSpec, ModelError> {
    check_size(cfg.image_size)?;
    if cfg.down == 0 || cfg.image_size >> cfg.down < 2 || cfg.image_size % (1 << cfg.down) != 0 {
        return Err(ModelError::Resolution(cfg.image_size));
    }
    let mut s = Stack::new();
    let mut c = cfg.channels.max(1);
    for _ in 0..cfg.down {
        s.conv(4, 2, 1, c).relu();
        c *= 2;
    }
    for _ in 0..cfg.down {
        c /= 2;
        s.up(c).relu();
    }
    for _ in 0..cfg.refine {
        s.conv(3, 1, 1, c).relu();
    }
    s.conv(3, 1, 1, 3);
    s.push("sigmoid", Layer::Sigmoid);
    let size = cfg.image_size;
    let spec = ModelSpec {
        kind: ModelKind::SceneConditioned,
        input_shape: vec![size, size, SCENE_INPUT_CHANNELS],
        layers: s.layers,
        output_shape: vec![size, size, 3],
        feature_dim: None,
        lstm_units: None,
        encoder_len: None,
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoencoderConfig {
    pub image_size: usize,
    pub channels: usize,
    pub feature_dim: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 16,
            feature_dim: 32,
        }
    }
}

const AE_STAGES: usize = 3;

pub fn build_autoencoder(cfg: &AutoencoderConfig) -> Result<ModelSpec, ModelError> {
    check_size(cfg.image_size)?;
    let side = cfg.image_size >> AE_STAGES;
    let mut s = Stack::new();
    let mut c = cfg.channels.max(1);
    for _ in 0..AE_STAGES {
        s.conv(4, 2, 1, c).relu();
        c *= 2;
    }
    c /= 2;
    s.push("flatten", Layer::Flatten);
    s.push(
        "dense",
        Layer::Dense {
            units: cfg.feature_dim,
            reshape: None,
        },
    );
    let encoder_len = s.layers.len();
    s.push(
        "dense",
        Layer::Dense {
            units: side * side * c,
            reshape: Some([side, side, c]),
        },
    );
    s.relu();
    for _ in 0..AE_STAGES {
        c = (c / 2).max(1);
        s.up(c).relu();
    }
    s.conv(3, 1, 1, 3);
    s.push("sigmoid", Layer::Sigmoid);
    let size = cfg.image_size;
    let spec = ModelSpec {
        kind: ModelKind::Autoencoder,
        input_shape: vec![size, size, 3],
        layers: s.layers,
        output_shape: vec![size, size, 3],
        feature_dim: Some(cfg.feature_dim),
        lstm_units: None,
        encoder_len: Some(encoder_len),
    };
    spec.validate()?;
    Ok(spec)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecurrentConfig {
    pub image_size: usize,
    pub channels: usize,
    pub hidden: usize,
    pub lstm_units: usize,
    pub feature_dim: usize,
}

impl Default for RecurrentConfig {
    fn default() -> Self {
        Self {
            image_size: 64,
            channels: 16,
            hidden: 128,
            lstm_units: 60,
            feature_dim: 32,
        }
    }
}

/// Conv stack over the scene input, dense, LSTM and a dense feature head: 12 layers.
pub fn build_recurrent_predictor(cfg: &RecurrentConfig) -> Result<ModelSpec, ModelError> {
    check_size(cfg.image_size)?;
    let mut s = Stack::new();
    let mut c = cfg.channels.max(1);
    for _ in 0..3 {
        s.conv(4, 2, 1, c).relu();
        c *= 2;
    }
    s.conv(1, 1, 0, 4).relu();
    s.push("flatten", Layer::Flatten);
    s.push(
        "dense",
        Layer::Dense {
            units: cfg.hidden,
            reshape: None,
        },
    );
    s.push("lstm", Layer::Lstm { units: cfg.lstm_units });
    s.push(
        "dense",
        Layer::Dense {
            units: cfg.feature_dim,
            reshape: None,
        },
    );
    let size = cfg.image_size;
    let spec = ModelSpec {
        kind: ModelKind::RecurrentPredictor,
        input_shape: vec![size, size, SCENE_INPUT_CHANNELS],
        layers: s.layers,
        output_shape: vec![cfg.feature_dim],
        feature_dim: Some(cfg.feature_dim),
        lstm_units: Some(cfg.lstm_units),
        encoder_len: None,
    };
    spec.validate()?;
    Ok(spec)
}
