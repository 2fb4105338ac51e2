//! Model checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FSLM" | u32 version = 1 | u32 layer count L | (L + 1) × u32 layer dims
//! | per layer: weight block (rows × cols f64, row-major), bias block (rows f64)
//! | u32 metadata line count | per line: u32 byte length, UTF-8 "key=value"
//! ```
//!
//! A supervised model is stored as its backbone layers followed by the head
//! layer; metadata `kind=sup` tells the loader to split the last layer off.

use std::path::Path;

use crate::encoder::MlpParams;
use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::supervised::SupModel;

pub const MODEL_MAGIC: &[u8; 4] = b"FSLM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Ssl(MlpParams),
    Sup(SupModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Ssl(_) => "ssl",
            Model::Sup(_) => "sup",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Ssl(p) => p.input_dim(),
            Model::Sup(m) => m.backbone.input_dim(),
        }
    }

    fn stack(&self) -> Result<MlpParams> {
        match self {
            Model::Ssl(p) => Ok(p.clone()),
            Model::Sup(m) => {
                let mut weights = m.backbone.weights.clone();
                let mut biases = m.backbone.biases.clone();
                weights.extend(m.head.weights.iter().cloned());
                biases.extend(m.head.biases.iter().cloned());
                MlpParams::from_layers(weights, biases)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Extra `key=value` metadata; `kind` is written from the model itself.
    pub meta: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let stack = ck.model.stack()?;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    put_u32(&mut out, stack.num_layers())?;
    for &d in stack.layer_dims() {
        put_u32(&mut out, d)?;
    }
    for v in stack.blocks().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let mut lines = vec![format!("kind={}", ck.model.kind())];
    lines.extend(
        ck.meta
            .iter()
            .filter(|(k, _)| k != "kind")
            .map(|(k, v)| format!("{k}={v}")),
    );
    put_u32(&mut out, lines.len())?;
    for l in lines {
        put_u32(&mut out, l.len())?;
        out.extend_from_slice(l.as_bytes());
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.at < n {
            return Err(Error::Format(format!("model file short while reading {what}")));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("block too large".into()))?, what)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { buf, at: 0 };
    if c.take(4, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("bad magic, not a model file".into()));
    }
    let version = c.u32("version")?;
    if version != MODEL_VERSION as usize {
        return Err(Error::Format(format!("unsupported model file version {version}")));
    }
    let layers = c.u32("layer count")?;
    if layers == 0 {
        return Err(Error::Format("model has no layers".into()));
    }
    let dims = (0..=layers)
        .map(|_| c.u32("layer dims"))
        .collect::<Result<Vec<_>>>()?;
    let mut weights = Vec::with_capacity(layers);
    let mut biases = Vec::with_capacity(layers);
    for w in dims.windows(2) {
        weights.push(Matrix::from_vec(w[1], w[0], c.f64s(w[1] * w[0], "weights")?)?);
        biases.push(c.f64s(w[1], "biases")?);
    }
    let n_meta = c.u32("metadata count")?;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let len = c.u32("metadata length")?;
        let line = std::str::from_utf8(c.take(len, "metadata")?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("metadata line {line:?} lacks '='")))?;
        meta.push((k.to_string(), v.to_string()));
    }
    if c.at != buf.len() {
        return Err(Error::Format("trailing bytes after model metadata".into()));
    }
    let kind = meta
        .iter()
        .find(|(k, _)| k == "kind")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::Format("model metadata lacks kind".into()))?;
    let model = match kind.as_str() {
        "ssl" => Model::Ssl(MlpParams::from_layers(weights, biases)?),
        "sup" => {
            if layers < 2 {
                return Err(Error::Format("supervised model needs a backbone and a head".into()));
            }
            let hw = weights.pop().unwrap();
            let hb = biases.pop().unwrap();
            SupModel::new(
                MlpParams::from_layers(weights, biases)?,
                MlpParams::from_layers(vec![hw], vec![hb])?,
            )
            .map(Model::Sup)?
        }
        other => return Err(Error::Format(format!("unknown model kind {other:?}"))),
    };
    meta.retain(|(k, _)| k != "kind");
    Ok(Checkpoint { model, meta })
}

pub fn save(path: &Path, ck: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ck)?).map_err(Error::at(path))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path).map_err(Error::at(path))?)
}
