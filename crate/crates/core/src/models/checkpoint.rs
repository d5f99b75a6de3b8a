//! Self-describing JSON checkpoints.
//!
//! ```json
//! { "format": "aikae-checkpoint", "version": 1,
//!   "config": { ... }, "dims": { "n": 96, "p": 32, "d": 128, "m": 96, "k": 4, "w": 256 },
//!   "params": [ { "name": "phi.0.0.weight", "shape": [48, 256], "values": [...] }, ... ] }
//! ```
//!
//! Floats are written with shortest round-trip formatting and parsed with
//! exact rounding, so `load(save(m))` reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AikaeModel, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT: &str = "aikae-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Dims {
    n: usize,
    p: usize,
    d: usize,
    m: usize,
    k: usize,
    w: usize,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    dims: Dims,
    params: Vec<NamedTensor>,
}

impl AikaeModel {
    pub fn to_json(&self) -> Result<String> {
        let c = self.config();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: c.clone(),
            dims: Dims {
                n: c.n,
                p: c.p,
                d: self.d(),
                m: c.delay,
                k: c.k,
                w: c.w,
            },
            params: self
                .params()
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unexpected format tag `{}`", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let mut model = AikaeModel::zeroed(ck.config)?;
        if model.d() != ck.dims.d {
            return Err(Error::Checkpoint(format!(
                "latent size {} in header disagrees with config ({})",
                ck.dims.d,
                model.d()
            )));
        }
        if ck.params.len() != model.params().len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                model.params().len(),
                ck.params.len()
            )));
        }
        for nt in ck.params {
            let id = model
                .params()
                .find(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", nt.name)))?;
            let expected = model.params().get(id).shape().to_vec();
            if nt.shape != expected {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    nt.name, nt.shape, expected
                )));
            }
            *model.params_mut().get_mut(id) = Tensor::new(nt.shape, nt.values)
                .map_err(|e| Error::Checkpoint(format!("parameter `{}`: {e}", nt.name)))?;
        }
        Ok(model)
    }
}

pub fn save_checkpoint(model: &AikaeModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AikaeModel> {
    AikaeModel::from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Variant;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig::new(Variant::Aikae, 6, 2)
            .with_flow(3, 16)
            .with_chi_hidden(vec![8, 4])
            .with_revin(true);
        let mut m = AikaeModel::new(cfg, 11).unwrap();
        // awkward values that stress float formatting
        m.params_mut().tensors_mut()[0].data_mut()[0] = 0.1 + 0.2;
        m.params_mut().tensors_mut()[1].data_mut()[0] = f64::MIN_POSITIVE;
        m.params_mut().tensors_mut()[2].data_mut()[0] = -1.0 / 3.0;
        let back = AikaeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.config(), m.config());
        for ((na, a), (nb, b)) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(na, nb);
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b, "{na}");
        }
    }

    #[test]
    fn rejects_wrong_tag_and_shapes() {
        let m = AikaeModel::new(ModelConfig::new(Variant::Ikae, 4, 0).with_flow(1, 4), 0).unwrap();
        let json = m.to_json().unwrap();
        assert!(AikaeModel::from_json(&json.replace(CHECKPOINT_FORMAT, "other")).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["params"][0]["shape"] = serde_json::json!([3, 3]);
        assert!(AikaeModel::from_json(&v.to_string()).is_err());
    }
}
