//! VSGC tensor container.
//!
//! Layout: magic `VSGC`, `u16` version (1), `u8` dtype, `u8` rank, `rank`
//! dims as `u32`, then the row-major payload. All integers little-endian.
//! Clips are rank 4 (`T, H, W, C`); checkpoints store parameter tensors of
//! any rank with dtype 2 (f64).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::clip::VideoClip;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"VSGC";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::U8 => 0,
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    U8(Vec<u8>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl Payload {
    pub fn dtype(&self) -> DType {
        match self {
            Payload::U8(_) => DType::U8,
            Payload::F32(_) => DType::F32,
            Payload::F64(_) => DType::F64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Payload::U8(v) => v.len(),
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub dims: Vec<usize>,
    pub payload: Payload,
}

pub fn header_len(rank: usize) -> usize {
    8 + 4 * rank
}

pub fn encode(blob: &Blob) -> Result<Vec<u8>> {
    let n: usize = blob.dims.iter().product();
    if n != blob.payload.len() {
        return Err(Error::shape(format!(
            "dims {:?} do not match payload of {} values",
            blob.dims,
            blob.payload.len()
        )));
    }
    if blob.dims.len() > u8::MAX as usize {
        return Err(Error::invalid("tensor rank exceeds 255"));
    }
    let dtype = blob.payload.dtype();
    let mut out = Vec::with_capacity(header_len(blob.dims.len()) + n * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(blob.dims.len() as u8);
    for &d in &blob.dims {
        let d =
            u32::try_from(d).map_err(|_| Error::invalid(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &blob.payload {
        Payload::U8(v) => out.extend_from_slice(v),
        Payload::F32(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        Payload::F64(v) => v
            .iter()
            .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

/// Decodes one blob from the front of `bytes`, returning it and the number
/// of bytes consumed. `origin` only labels errors.
pub fn decode_prefix(bytes: &[u8], origin: &Path) -> Result<(Blob, usize)> {
    let bad = |reason: String| Error::format(origin, reason);
    if bytes.len() < 8 {
        return Err(bad(format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let dtype = DType::from_code(bytes[6])
        .ok_or_else(|| bad(format!("unknown dtype code {}", bytes[6])))?;
    let rank = bytes[7] as usize;
    let head = header_len(rank);
    if bytes.len() < head {
        return Err(bad("truncated dimension list".into()));
    }
    let dims: Vec<usize> = bytes[8..head]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
    let body = n
        .checked_mul(dtype.size())
        .ok_or_else(|| bad(format!("dims {dims:?} overflow")))?;
    if bytes.len() < head + body {
        return Err(bad(format!(
            "payload is {} bytes, header {dims:?} needs {body}",
            bytes.len() - head
        )));
    }
    let raw = &bytes[head..head + body];
    let payload = match dtype {
        DType::U8 => Payload::U8(raw.to_vec()),
        DType::F32 => Payload::F32(
            raw.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        DType::F64 => Payload::F64(
            raw.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect(),
        ),
    };
    Ok((Blob { dims, payload }, head + body))
}

/// Decodes exactly one blob; trailing bytes are an error.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<Blob> {
    let (blob, used) = decode_prefix(bytes, origin)?;
    if used != bytes.len() {
        return Err(Error::format(
            origin,
            format!("{} trailing bytes after payload", bytes.len() - used),
        ));
    }
    Ok(blob)
}

/// Maps a stored byte to `[-1, 1]`.
pub fn u8_to_unit(v: u8) -> f32 {
    v as f32 / 127.5 - 1.0
}

pub fn unit_to_u8(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn clip_to_blob(clip: &VideoClip, dtype: DType) -> Result<Blob> {
    let payload = match dtype {
        DType::U8 => Payload::U8(clip.data().iter().map(|&v| unit_to_u8(v)).collect()),
        DType::F32 => Payload::F32(clip.data().to_vec()),
        DType::F64 => return Err(Error::invalid("clips are stored as u8 or f32")),
    };
    Ok(Blob {
        dims: clip.dims().to_vec(),
        payload,
    })
}

pub fn blob_to_clip(blob: Blob, origin: &Path) -> Result<VideoClip> {
    if blob.dims.len() != 4 {
        return Err(Error::format(
            origin,
            format!("clip must have rank 4, got {:?}", blob.dims),
        ));
    }
    let data = match blob.payload {
        Payload::U8(v) => v.into_iter().map(u8_to_unit).collect(),
        Payload::F32(v) => v,
        Payload::F64(_) => return Err(Error::format(origin, "clip payload must be u8 or f32")),
    };
    let d = &blob.dims;
    VideoClip::new(d[0], d[1], d[2], d[3], data).map_err(|e| Error::format(origin, e.to_string()))
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    blob_to_clip(decode(&bytes, path)?, path)
}

pub fn write_clip(path: &Path, clip: &VideoClip, dtype: DType) -> Result<()> {
    write_atomic(path, &encode(&clip_to_blob(clip, dtype)?)?)
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
