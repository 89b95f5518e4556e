use std::io::Write;
use std::path::Path;

use sbs_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::spec::ModelSpec;
use super::ModelError;
use crate::binio::ByteReader;
use crate::datagen::NormStats;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SBSM";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub final_losses: Vec<f64>,
    /// Input statistics the model was trained with.
    pub norm: Option<NormStats>,
    /// Input channels held at their training mean during training.
    #[serde(default)]
    pub masked_inputs: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct Blob {
    spec: ModelSpec,
    meta: TrainingMeta,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let blob = serde_json::to_vec(&Blob {
            spec: self.network.spec.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| ModelError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(blob.len() + 4 * self.network.param_count() + 64);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(&blob);
        for (spec, t) in self.network.param_specs().iter().zip(&self.network.params) {
            out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
            out.extend_from_slice(spec.name.as_bytes());
            out.push(t.ndim() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = ByteReader::new(bytes);
        if &r.array::<4>()? != CHECKPOINT_MAGIC {
            return Err(ModelError::Format("bad magic".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Format(format!(
                "version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let len = r.u32()? as usize;
        let blob: Blob = serde_json::from_slice(r.take(len)?).map_err(|e| ModelError::Format(e.to_string()))?;
        blob.spec.validate()?;
        let specs = blob.spec.param_specs()?;
        let mut params = Vec::with_capacity(specs.len());
        for s in &specs {
            let n = r.u16()? as usize;
            let name = String::from_utf8_lossy(r.take(n)?).into_owned();
            if name != s.name {
                return Err(ModelError::Format(format!("expected tensor {}, found {name}", s.name)));
            }
            let ndim = r.u8()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if dims != s.shape {
                return Err(ModelError::Shape {
                    context: format!("{name}: spec wants {:?}, file has {dims:?}", s.shape),
                });
            }
            let count: usize = dims.iter().product();
            let raw = r.take(4 * count)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            params.push(Tensor::new(&dims, data)?);
        }
        if r.remaining() > 0 {
            return Err(ModelError::Format(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Self {
            network: Network::from_parts(blob.spec, params)?,
            meta: blob.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&self.to_bytes()?)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rejects use on data whose per-sample input shape differs from training.
    pub fn check_input_shape(&self, shape: &[usize]) -> Result<(), ModelError> {
        if self.network.spec.input_shape != shape {
            return Err(ModelError::Shape {
                context: format!(
                    "checkpoint expects input {:?}, data provides {shape:?}",
                    self.network.spec.input_shape
                ),
            });
        }
        Ok(())
    }
}
