//! Binary checkpoint format.
//!
//! ```text
//! "WVCLS1\0"
//! u32 header length, header: key-sorted JSON {classes, meta, model, tensors}
//! per tensor: u32 name length, UTF-8 name, u32 rank, u32 dims..., f32 payload
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 7] = b"WVCLS1\0";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMeta {
    pub epoch: usize,
    pub valid_accuracy: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    /// Artist name of each class index.
    pub classes: Vec<String>,
    pub meta: TrainMeta,
}

#[derive(Serialize, Deserialize)]
struct Header {
    classes: Vec<String>,
    meta: TrainMeta,
    model: ModelConfig,
    tensors: usize,
}

impl Checkpoint {
    pub fn config(&self) -> ModelConfig {
        self.model.config()
    }

    /// Fails unless the checkpoint predicts exactly `n_classes` classes.
    pub fn expect_classes(&self, n_classes: usize) -> Result<()> {
        if self.model.n_classes() != n_classes {
            return Err(Error::Config(format!(
                "checkpoint predicts {} classes but the label space has {n_classes}",
                self.model.n_classes()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let named = self.model.named_tensors();
        let header = Header {
            classes: self.classes.clone(),
            meta: self.meta.clone(),
            model: self.config(),
            tensors: named.len(),
        };
        // Value maps are BTreeMaps, so keys come out sorted at every level.
        let json = serde_json::to_string(&serde_json::to_value(&header)?)?;
        let mut out = Vec::with_capacity(64 + json.len() + 4 * self.model.param_count());
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, json.len())?;
        out.extend_from_slice(json.as_bytes());
        for (name, t) in named {
            put_u32(&mut out, name.len())?;
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut out, d)?;
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut model = Model::<f32>::build(&header.model, 0)
            .map_err(|e| Error::Checkpoint(format!("invalid model config: {e}")))?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if header.tensors != expected.len() {
            return Err(Error::Checkpoint(format!(
                "header lists {} tensors, config needs {}",
                header.tensors,
                expected.len()
            )));
        }
        let mut tensors = Vec::with_capacity(expected.len());
        for (name, shape) in &expected {
            let n = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(n)?).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            if got != name {
                return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{got}`")));
            }
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &dims != shape {
                return Err(Error::Checkpoint(format!("tensor `{name}` has shape {dims:?}, config needs {shape:?}")));
            }
            let count: usize = dims.iter().product();
            let data = r
                .take(4 * count)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor::new(dims, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        model.set_tensors(&tensors)?;
        if header.classes.len() != model.n_classes() {
            return Err(Error::Checkpoint(format!(
                "{} class names for a {}-class model",
                header.classes.len(),
                model.n_classes()
            )));
        }
        Ok(Self {
            model,
            classes: header.classes,
            meta: header.meta,
        })
    }
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, c.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::head::{HeadBlock, HeadConfig};

    fn tiny() -> Checkpoint {
        let cfg = ModelConfig {
            encoder: EncoderConfig {
                n_layers: 2,
                channels: 3,
                kernel: 2,
                seg_len: 64,
            },
            head: HeadConfig {
                blocks: vec![HeadBlock::new(4, 3, 4, 4)],
                n_classes: 3,
            },
        };
        Checkpoint {
            model: Model::build(&cfg, 5).unwrap(),
            classes: vec!["a".into(), "b".into(), "c".into()],
            meta: TrainMeta {
                epoch: 4,
                valid_accuracy: 0.75,
                seed: 5,
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = tiny();
        let bytes = c.to_bytes().unwrap();
        assert!(bytes.starts_with(MAGIC));
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_json_is_key_sorted() {
        let bytes = tiny().to_bytes().unwrap();
        let len = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let json = std::str::from_utf8(&bytes[11..11 + len]).unwrap();
        assert!(json.starts_with(r#"{"classes":["a","b","c"],"meta":{"epoch":4,"seed":5,"valid_accuracy":0.75},"model":{"encoder":"#));
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = tiny().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncation_is_detected_everywhere() {
        let bytes = tiny().to_bytes().unwrap();
        for cut in [3, 9, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn class_count_mismatch_is_a_config_error() {
        let c = tiny();
        assert!(c.expect_classes(3).is_ok());
        assert!(matches!(c.expect_classes(19), Err(Error::Config(_))));
    }
}
