//! The canonical checkpoint container used by every stage.
//!
//! Layout: magic `NSCK`, a little-endian `u32` format version, a `u64`
//! header length, a JSON header `{kind, meta, tensors: [{name, shape}]}`,
//! then the raw tensor data as little-endian `f32` in header order. JSON
//! object keys serialize sorted, so identical contents produce identical
//! bytes and checkpoint hashes are meaningful.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{Activation, Dense, Mlp};

const MAGIC: &[u8; 4] = b"NSCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// A versioned, self-describing bundle of named tensors plus JSON metadata.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        let name = name.into();
        debug_assert_eq!(shape.iter().product::<usize>(), data.len(), "{name}");
        self.tensors.push(NamedTensor { name, shape, data });
    }

    pub fn tensor(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field `{key}`")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field `{key}`")))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let header = serde_json::json!({
            "kind": self.kind,
            "meta": self.meta,
            "tensors": self.tensors.iter().map(|t| {
                serde_json::json!({"name": t.name, "shape": t.shape})
            }).collect::<Vec<_>>(),
        });
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialization failed: {e}")))?;
        let io = |e| Error::io(path, e);
        out.write_all(MAGIC).map_err(io)?;
        out.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        out.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(io)?;
        out.write_all(&header_bytes).map_err(io)?;
        for t in &self.tensors {
            for v in &t.data {
                out.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        out.flush().map_err(io)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut input = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{} is not a checkpoint (bad magic)",
                path.display()
            )));
        }
        let mut word = [0u8; 4];
        input.read_exact(&mut word).map_err(io)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {VERSION})"
            )));
        }
        let mut len = [0u8; 8];
        input.read_exact(&mut len).map_err(io)?;
        let mut header_bytes = vec![0u8; u64::from_le_bytes(len) as usize];
        input.read_exact(&mut header_bytes).map_err(io)?;
        let header: serde_json::Value = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
        let kind = header
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Checkpoint("header missing `kind`".into()))?
            .to_string();
        let meta = header.get("meta").cloned().unwrap_or(serde_json::Value::Null);
        let mut tensors = Vec::new();
        for entry in header
            .get("tensors")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Checkpoint("header missing `tensors`".into()))?
        {
            let name = entry
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Checkpoint("tensor entry missing `name`".into()))?
                .to_string();
            let shape: Vec<usize> = entry
                .get("shape")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Checkpoint("tensor entry missing `shape`".into()))?
                .iter()
                .map(|v| v.as_u64().unwrap_or(0) as usize)
                .collect();
            let count: usize = shape.iter().product();
            let mut buf = vec![0u8; count * 4];
            input.read_exact(&mut buf).map_err(io)?;
            let data = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint { kind, meta, tensors })
    }
}

/// SHA-256 of a file, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

/// SHA-256 of a byte slice, lowercase hex.
pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

// Helpers for moving layers in and out of checkpoints.

pub fn push_dense(ck: &mut Checkpoint, prefix: &str, layer: &Dense<f32>) {
    ck.push(
        format!("{prefix}.weight"),
        vec![layer.weight.nrows(), layer.weight.ncols()],
        layer.weight.iter().copied().collect(),
    );
    ck.push(
        format!("{prefix}.bias"),
        vec![layer.bias.len()],
        layer.bias.to_vec(),
    );
}

pub fn read_dense(ck: &Checkpoint, prefix: &str) -> Result<Dense<f32>> {
    let w = ck.tensor(&format!("{prefix}.weight"))?;
    if w.shape.len() != 2 {
        return Err(Error::Checkpoint(format!("{prefix}.weight is not 2-D")));
    }
    let weight = ndarray::Array2::from_shape_vec((w.shape[0], w.shape[1]), w.data.clone())
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let b = ck.tensor(&format!("{prefix}.bias"))?;
    Ok(Dense {
        weight,
        bias: ndarray::Array1::from_vec(b.data.clone()),
    })
}

pub fn push_mlp(ck: &mut Checkpoint, prefix: &str, mlp: &Mlp<f32>) {
    for (i, layer) in mlp.layers.iter().enumerate() {
        push_dense(ck, &format!("{prefix}.{i}"), layer);
    }
}

pub fn read_mlp(
    ck: &Checkpoint,
    prefix: &str,
    n_layers: usize,
    hidden: Activation,
    output: Activation,
    skip_at: Option<usize>,
) -> Result<Mlp<f32>> {
    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        layers.push(read_dense(ck, &format!("{prefix}.{i}"))?);
    }
    Ok(Mlp {
        layers,
        hidden,
        output,
        skip_at,
    })
}
