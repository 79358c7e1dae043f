//! Checkpoint container: magic `VSCK`, `u16` version, `u32` JSON header
//! length, the JSON header, `u32` tensor count, then one VSGC blob per tensor.
//! Tensor names live in the header, in blob order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ParamStore;
use crate::optim::Adam;
use crate::tensor::Float;
use crate::vsgc::{self, Blob};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// What the file holds, e.g. `"classifier"` or `"gan"`.
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Blob)>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<String>,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        Checkpoint {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    /// Appends a store's tensors under `prefix/`.
    pub fn push_params<F: Float>(&mut self, prefix: &str, params: &ParamStore<F>) {
        for (name, blob) in params.to_blobs() {
            self.tensors.push((format!("{prefix}/{name}"), blob));
        }
    }

    pub fn push_optimizer<F: Float>(&mut self, prefix: &str, opt: &Adam<F>) {
        for (i, blob) in opt.to_blobs().into_iter().enumerate() {
            self.tensors.push((format!("{prefix}/{i}"), blob));
        }
    }

    /// Tensors stored under `prefix/`, with the prefix stripped.
    pub fn group(&self, prefix: &str) -> Vec<(String, Blob)> {
        let p = format!("{prefix}/");
        self.tensors
            .iter()
            .filter_map(|(n, b)| n.strip_prefix(&p).map(|s| (s.to_string(), b.clone())))
            .collect()
    }

    pub fn load_params<F: Float>(&self, prefix: &str, params: &mut ParamStore<F>) -> Result<()> {
        params.load_blobs(&self.group(prefix))
    }

    pub fn load_optimizer<F: Float>(
        &self,
        prefix: &str,
        opt: &mut Adam<F>,
        steps: u64,
    ) -> Result<()> {
        let blobs: Vec<Blob> = self.group(prefix).into_iter().map(|(_, b)| b).collect();
        opt.load_blobs(&blobs, steps)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(n, _)| n.clone()).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (_, blob) in &self.tensors {
            out.extend_from_slice(&vsgc::encode(blob)?);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(origin, reason);
        if bytes.len() < 10 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!(
                "checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let json_len = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let json_end = 10 + json_len;
        if bytes.len() < json_end + 4 {
            return Err(bad(format!(
                "truncated header ({} bytes, need {})",
                bytes.len(),
                json_end + 4
            )));
        }
        let header: Header = serde_json::from_slice(&bytes[10..json_end])
            .map_err(|e| bad(format!("header: {e}")))?;
        let count =
            u32::from_le_bytes(bytes[json_end..json_end + 4].try_into().expect("4 bytes")) as usize;
        if count != header.tensors.len() {
            return Err(bad(format!(
                "{count} tensors, header names {}",
                header.tensors.len()
            )));
        }
        let mut pos = json_end + 4;
        let mut tensors = Vec::with_capacity(count);
        for name in header.tensors {
            let (blob, used) = vsgc::decode_prefix(&bytes[pos..], origin)?;
            pos += used;
            tensors.push((name, blob));
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            kind: header.kind,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        vsgc::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and checks the kind.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.kind != kind {
            return Err(Error::format(
                path,
                format!("expected a {kind} checkpoint, found {}", ck.kind),
            ));
        }
        Ok(ck)
    }

    pub fn meta_as<T: serde::de::DeserializeOwned>(&self, origin: &Path) -> Result<T> {
        serde_json::from_value(self.meta.clone())
            .map_err(|e| Error::format(origin, format!("checkpoint metadata: {e}")))
    }
}

/// FNV-1a over the bit patterns of every parameter, used to tie a GAN run to
/// the exact classifier it was trained against.
pub fn params_fingerprint<F: Float>(params: &ParamStore<F>) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    };
    for (name, v) in params.names().iter().zip(params.values()) {
        eat(name.as_bytes());
        for x in v.data() {
            eat(&x.as_f64().to_bits().to_le_bytes());
        }
    }
    format!("{h:016x}")
}
