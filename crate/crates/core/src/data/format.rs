//! MFLF: one utterance's 25 precomputed layer features.
//!
//! Little-endian layout:
//!
//! | field        | type                               |
//! |--------------|------------------------------------|
//! | magic        | `b"MFLF"`                          |
//! | version      | u32 = 1                            |
//! | num_layers   | u32 = 25                           |
//! | frames (T)   | u32                                |
//! | dim (S)      | u32                                |
//! | label        | u8: 0 spoof, 1 bonafide, 255 none  |
//! | id length    | u32                                |
//! | id           | UTF-8 bytes                        |
//! | payload      | `25·T·S` f32, layer-major, row-major |
//!
//! Values are stored at 32-bit precision and promoted to `f64` on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::STORED_LAYERS;
use crate::label::Label;
use crate::numkit::Tensor;

pub const MAGIC: &[u8; 4] = b"MFLF";
pub const VERSION: u32 = 1;
const UNLABELED: u8 = 255;

/// The 25 `T×S` feature matrices of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerFeatureSet {
    layers: Vec<Tensor>,
}

impl LayerFeatureSet {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        if layers.len() != STORED_LAYERS {
            return Err(Error::Config(format!(
                "a feature set needs {STORED_LAYERS} layers, got {}",
                layers.len()
            )));
        }
        let shape = layers[0].shape().to_vec();
        if shape.len() != 2 {
            return Err(crate::numkit::TensorError::Rank {
                op: "feature set",
                expected: 2,
                shape,
            }
            .into());
        }
        if let Some((i, bad)) = layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.shape() != shape.as_slice())
        {
            return Err(Error::Config(format!(
                "layer {i} has shape {:?}, layer 0 has {shape:?}",
                bad.shape()
            )));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub fn frames(&self) -> usize {
        self.layers[0].shape()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[0].shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFile {
    pub id: String,
    pub label: Option<Label>,
    pub features: LayerFeatureSet,
}

fn label_byte(label: Option<Label>) -> u8 {
    match label {
        Some(l) => l.index() as u8,
        None => UNLABELED,
    }
}

/// Header length in bytes for an id of `id_len` bytes.
pub fn header_len(id_len: usize) -> usize {
    4 + 4 + 4 + 4 + 4 + 1 + 4 + id_len
}

pub fn encode(features: &LayerFeatureSet, label: Option<Label>, id: &str) -> Result<Vec<u8>> {
    let (t, s) = (features.frames(), features.feature_dim());
    let payload = STORED_LAYERS * t * s * 4;
    let mut out = Vec::with_capacity(header_len(id.len()) + payload);
    out.extend_from_slice(MAGIC);
    for v in [VERSION, STORED_LAYERS as u32, t as u32, s as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(label_byte(label));
    out.extend_from_slice(&(id.len() as u32).to_le_bytes());
    out.extend_from_slice(id.as_bytes());
    for (i, layer) in features.layers().iter().enumerate() {
        for &v in layer.data() {
            let f = v as f32;
            if !f.is_finite() {
                return Err(Error::Config(format!(
                    "utterance {id:?}: layer {i} has a value not finite at f32 precision"
                )));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated {what}: expected {n} bytes, found {}",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
}

/// Parses an MFLF byte buffer. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<FeatureFile> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if cur.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, "bad magic, not an MFLF file"));
    }
    let version = cur.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported version {version}"),
        ));
    }
    let layers = cur.u32("layer count")? as usize;
    if layers != STORED_LAYERS {
        return Err(Error::format(
            path,
            format!("expected {STORED_LAYERS} layers, header says {layers}"),
        ));
    }
    let t = cur.u32("frame count")? as usize;
    let s = cur.u32("feature dim")? as usize;
    if t == 0 || s == 0 {
        return Err(Error::format(path, format!("empty geometry T={t} S={s}")));
    }
    let label = match cur.take(1, "label")?[0] {
        0 => Some(Label::Spoof),
        1 => Some(Label::Bonafide),
        UNLABELED => None,
        other => return Err(Error::format(path, format!("invalid label byte {other}"))),
    };
    let id_len = cur.u32("id length")? as usize;
    let id = std::str::from_utf8(cur.take(id_len, "utterance id")?)
        .map_err(|e| Error::format(path, format!("utterance id is not UTF-8: {e}")))?
        .to_string();

    let expected = STORED_LAYERS * t * s * 4;
    let actual = bytes.len() - cur.pos;
    if actual != expected {
        return Err(Error::format(
            path,
            format!("payload: expected {expected} bytes, found {actual}"),
        ));
    }
    let values: Vec<f64> = bytes[cur.pos..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(
            path,
            format!("non-finite value in layer {}", pos / (t * s)),
        ));
    }
    let layers = values
        .chunks_exact(t * s)
        .map(|c| Tensor::new(vec![t, s], c.to_vec()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FeatureFile {
        id,
        label,
        features: LayerFeatureSet::new(layers)?,
    })
}

pub fn write_feature_file(
    path: impl AsRef<Path>,
    features: &LayerFeatureSet,
    label: Option<Label>,
    id: &str,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(features, label, id)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureFile> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
