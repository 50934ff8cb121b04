//! Binary checkpoint codec.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PRZK" | version u32 | descriptor_len u32 | descriptor (UTF-8 TOML)
//!        | array_count u32 | array_count × [u32; 4] dims
//!        | parameters as f32, arrays in storage order
//! ```
//!
//! The descriptor holds the network spec and the checkpoint metadata; the
//! shape table is redundant with the spec and is checked against it on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec};
use crate::error::{CheckpointError, Error, Result};
use crate::tensor::{Layer, LayerParams, Tensor4};

pub const MAGIC: [u8; 4] = *b"PRZK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    /// `pretrain`, `stage1`, `stage2`, `baseline1` or `baseline2`.
    pub stage: String,
    /// Stored as a decimal string: TOML integers stop at `i64::MAX`.
    #[serde(with = "decimal_u64")]
    pub seed: u64,
    pub config_digest: String,
    /// Unix seconds; left unset by the pipeline so reruns are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_unix: Option<u64>,
}

mod decimal_u64 {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        String::deserialize(d)?.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Network<f32>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    meta: CheckpointMeta,
    spec: NetworkSpec,
}

impl Checkpoint {
    pub fn new(model: Network<f32>, meta: CheckpointMeta) -> Self {
        Checkpoint { model, meta }
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.model.spec()
    }

    /// Checks that the stored parameters have exactly the shapes `spec`
    /// would produce.
    pub fn verify_spec(&self, spec: &NetworkSpec) -> std::result::Result<(), CheckpointError> {
        let expected = spec
            .param_shapes()
            .map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
        let actual = self.model.param_shapes();
        if expected != actual {
            return Err(CheckpointError::ShapeMismatch(format!(
                "checkpoint arrays {actual:?} do not match spec arrays {expected:?}"
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let descriptor = toml::to_string(&Descriptor {
            meta: self.meta.clone(),
            spec: self.model.spec().clone(),
        })
        .expect("descriptor serializes");
        let shapes = self.model.param_shapes();
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(descriptor.as_bytes());
        out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
        for d in &shapes {
            for &v in d {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        for arr in self.model.param_arrays() {
            for v in arr {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let len = r.u32("descriptor length")? as usize;
        let text = std::str::from_utf8(r.take(len, "descriptor")?)
            .map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
        let desc: Descriptor =
            toml::from_str(text).map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
        desc.spec
            .validate()
            .map_err(|e| CheckpointError::Descriptor(e.to_string()))?;

        let count = r.u32("array count")? as usize;
        let mut shapes = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let mut d = [0usize; 4];
            for v in &mut d {
                *v = r.u32("shape table")? as usize;
            }
            shapes.push(d);
        }
        let expected = desc
            .spec
            .param_shapes()
            .map_err(|e| CheckpointError::Descriptor(e.to_string()))?;
        if shapes != expected {
            return Err(CheckpointError::ShapeMismatch(format!(
                "shape table {shapes:?} does not match descriptor spec {expected:?}"
            )));
        }

        let mut arrays = Vec::with_capacity(shapes.len());
        for d in &shapes {
            let n: usize = d.iter().product();
            let raw = r.take(n * 4, "parameters")?;
            arrays.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect::<Vec<f32>>(),
            );
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.pos
            )));
        }
        let model = assemble(&desc.spec, &shapes, arrays)?;
        Ok(Checkpoint {
            model,
            meta: desc.meta,
        })
    }
}

/// Rebuilds the layer stack from raw arrays; the spec fixes which layers
/// are parametric.
fn assemble(
    spec: &NetworkSpec,
    shapes: &[[usize; 4]],
    arrays: Vec<Vec<f32>>,
) -> std::result::Result<Network<f32>, CheckpointError> {
    let mut it = shapes.iter().zip(arrays);
    let mut next_params = || -> std::result::Result<LayerParams<f32>, CheckpointError> {
        let (wd, w) = it.next().expect("counted");
        let (_, b) = it.next().expect("counted");
        let weight = Tensor4::from_vec(*wd, w).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))?;
        LayerParams::new(weight, b).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))
    };
    let mut layers = Vec::new();
    for b in &spec.blocks {
        for _ in 0..b.convs {
            layers.push(Layer::Conv(next_params()?));
            layers.push(Layer::Relu);
        }
        layers.push(Layer::MaxPool2);
    }
    for _ in &spec.head.hidden {
        layers.push(Layer::Linear(next_params()?));
        layers.push(Layer::Relu);
    }
    layers.push(Layer::Linear(next_params()?));
    Network::from_parts(spec.clone(), layers).map_err(|e| CheckpointError::ShapeMismatch(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CheckpointError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|kind| Error::Checkpoint {
        path: path.to_path_buf(),
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::build_network;

    fn ckpt() -> Checkpoint {
        let spec = NetworkSpec::vgg(&[4, 8], 1, vec![6], 3, 8, 1);
        Checkpoint::new(
            build_network(&spec, 9).unwrap(),
            CheckpointMeta {
                stage: "stage1".into(),
                seed: 9,
                config_digest: "abc".into(),
                created_unix: None,
            },
        )
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = ckpt();
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn full_range_seed() {
        let mut c = ckpt();
        c.meta.seed = u64::MAX;
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn corrupt_magic() {
        let mut b = ckpt().to_bytes();
        b[..4].copy_from_slice(b"XXXX");
        assert_eq!(Checkpoint::from_bytes(&b), Err(CheckpointError::BadMagic(*b"XXXX")));
    }

    #[test]
    fn wrong_version() {
        let mut b = ckpt().to_bytes();
        b[4..8].copy_from_slice(&7u32.to_le_bytes());
        assert_eq!(Checkpoint::from_bytes(&b), Err(CheckpointError::UnsupportedVersion(7)));
    }

    #[test]
    fn truncated_payload() {
        let b = ckpt().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&b[..b.len() - 3]),
            Err(CheckpointError::Truncated(_))
        ));
    }

    #[test]
    fn verify_against_other_spec() {
        let c = ckpt();
        let other = NetworkSpec::vgg(&[4, 16], 1, vec![6], 3, 8, 1);
        assert!(matches!(c.verify_spec(&other), Err(CheckpointError::ShapeMismatch(_))));
        assert!(c.verify_spec(c.spec()).is_ok());
    }

    #[test]
    fn tampered_shape_table() {
        let c = ckpt();
        let mut b = c.to_bytes();
        let desc_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let first_dim = 12 + desc_len + 4;
        b[first_dim..first_dim + 4].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            Checkpoint::from_bytes(&b),
            Err(CheckpointError::ShapeMismatch(_))
        ));
    }
}
