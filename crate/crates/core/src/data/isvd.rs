//! `ISVD1` dataset files.
//!
//! ```text
//! "ISVD1"              5 bytes magic
//! version              u16 (= 1)
//! N                    u64 rows
//! d                    u32 vector dim
//! source               u32 length + UTF-8
//! seed                 u8 flag (0/1) + u64
//! label count          u32
//! label directory      per label: u16 name length + UTF-8 name,
//!                      u8 kind (0 none, 1 binary, 2 categorical), u32 k
//! vectors              N x d f32, row-major
//! labels               per label column: N x i32
//! ```
//!
//! All integers and floats little-endian.

use std::path::Path;

use ndarray::Array2;

use super::{LabelColumn, LabelKind, Metadata, VectorDataset};
use crate::binio::Reader;
use crate::error::{Error, Result};

const MAGIC: &[u8; 5] = b"ISVD1";
const VERSION: u16 = 1;

pub fn write_dataset(ds: &VectorDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + ds.vectors.len() * 4 + ds.labels.len() * ds.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    out.extend_from_slice(&(ds.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.metadata.source.len() as u32).to_le_bytes());
    out.extend_from_slice(ds.metadata.source.as_bytes());
    match ds.metadata.seed {
        Some(seed) => {
            out.push(1);
            out.extend_from_slice(&seed.to_le_bytes());
        }
        None => {
            out.push(0);
            out.extend_from_slice(&0u64.to_le_bytes());
        }
    }
    out.extend_from_slice(&(ds.labels.len() as u32).to_le_bytes());
    for col in &ds.labels {
        out.extend_from_slice(&(col.name.len() as u16).to_le_bytes());
        out.extend_from_slice(col.name.as_bytes());
        let (tag, k) = match col.kind {
            LabelKind::None => (0u8, 0u32),
            LabelKind::Binary => (1, 2),
            LabelKind::Categorical(k) => (2, k),
        };
        out.push(tag);
        out.extend_from_slice(&k.to_le_bytes());
    }
    for v in ds.vectors.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for col in &ds.labels {
        for v in &col.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_dataset(bytes: &[u8]) -> Result<VectorDataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5, "magic")? != MAGIC {
        return Err(r.error_at(0, "bad magic, not an ISVD1 dataset"));
    }
    let version_pos = r.pos;
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(r.error_at(version_pos, &format!("unsupported version {version}")));
    }
    let n = r.u64("row count")? as usize;
    let d = r.u32("dim")? as usize;
    let src_len = r.u32("source length")? as usize;
    let src_pos = r.pos;
    let source = String::from_utf8(r.take(src_len, "source")?.to_vec())
        .map_err(|_| r.error_at(src_pos, "source is not UTF-8"))?;
    let flag_pos = r.pos;
    let seed = match (r.u8("seed flag")?, r.u64("seed")?) {
        (0, _) => None,
        (1, s) => Some(s),
        _ => return Err(r.error_at(flag_pos, "seed flag must be 0 or 1")),
    };
    let label_count = r.u32("label count")? as usize;
    let mut directory = Vec::with_capacity(label_count.min(1024));
    for _ in 0..label_count {
        let name_len = r.u16("label name length")? as usize;
        let name_pos = r.pos;
        let name = String::from_utf8(r.take(name_len, "label name")?.to_vec())
            .map_err(|_| r.error_at(name_pos, "label name is not UTF-8"))?;
        let kind_pos = r.pos;
        let kind = match (r.u8("label kind")?, r.u32("class count")?) {
            (0, _) => LabelKind::None,
            (1, _) => LabelKind::Binary,
            (2, k) => LabelKind::Categorical(k),
            _ => return Err(r.error_at(kind_pos, "unknown label kind")),
        };
        directory.push((name, kind));
    }

    let cells = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| r.error_at(r.pos, "vector block size overflows"))?;
    let raw = r.take(cells, "vectors")?;
    let vectors = Array2::from_shape_vec(
        (n, d),
        raw.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect(),
    )
    .expect("length checked");

    let mut labels = Vec::with_capacity(directory.len());
    for (name, kind) in directory {
        let pos = r.pos;
        let raw = r.take(n * 4, "label values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let col = LabelColumn { name, kind, values };
        col.validate().map_err(|e| r.error_at(pos, &e.to_string()))?;
        labels.push(col);
    }
    if r.pos != bytes.len() {
        return Err(r.error_at(r.pos, "trailing bytes after dataset"));
    }
    VectorDataset::new(vectors, labels, Metadata { source, seed }).map_err(|e| match e {
        Error::Data(m) => Error::Format {
            offset: 0,
            message: m,
        },
        other => other,
    })
}

pub fn save_dataset(ds: &VectorDataset, path: &Path) -> Result<()> {
    std::fs::write(path, write_dataset(ds)).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<VectorDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_dataset(&bytes)
}
