//! The `WSKCKPT1` binary container.
//!
//! ```text
//! magic        8 bytes  "WSKCKPT1"
//! version      u32 LE   (1)
//! meta_len     u32 LE
//! metadata     meta_len bytes of UTF-8 JSON
//! count        u32 LE   number of tensors
//! index        per tensor: u32 name_len, name bytes, u32 rank,
//!              rank × u64 extents, u64 absolute byte offset of the payload
//! payloads     per tensor, in index order: f64 LE, row-major
//! ```
//!
//! All integers are little-endian. A file is exactly the sum of these parts;
//! trailing bytes are rejected.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{validate_shape, Tensor};

pub const MAGIC: &[u8; 8] = b"WSKCKPT1";
pub const VERSION: u32 = 1;

/// Fixed bytes before the metadata blob: magic, version, metadata length.
pub const HEADER_LEN: usize = 8 + 4 + 4;

/// Bytes of index entry for a tensor with this name and rank.
pub fn index_entry_len(name: &str, rank: usize) -> usize {
    4 + name.len() + 4 + 8 * rank + 8
}

/// Exact container size for the given metadata length and tensors.
pub fn container_len(meta_len: usize, tensors: &[(String, Tensor)]) -> usize {
    HEADER_LEN
        + meta_len
        + 4
        + tensors
            .iter()
            .map(|(n, t)| index_entry_len(n, t.rank()))
            .sum::<usize>()
        + tensors.iter().map(|(_, t)| 8 * t.len()).sum::<usize>()
}

pub fn encode(meta: &[u8], tensors: &[(String, Tensor)]) -> Vec<u8> {
    let total = container_len(meta.len(), tensors);
    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(meta);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    let index_len: usize = tensors
        .iter()
        .map(|(n, t)| index_entry_len(n, t.rank()))
        .sum();
    let mut offset = (buf.len() + index_len) as u64;
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u64).to_le_bytes());
        }
        buf.extend_from_slice(&offset.to_le_bytes());
        offset += 8 * t.len() as u64;
    }
    for (_, t) in tensors {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    debug_assert_eq!(buf.len(), total);
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Truncated {
                path: self.path.to_path_buf(),
                detail: format!("{} needs {} bytes at offset {}", what, n, self.pos),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes a container into its metadata bytes and named tensors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<(String, Tensor)>)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
        path,
    };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
        });
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta = r.take(meta_len, "metadata")?.to_vec();
    let count = r.u32("tensor count")? as usize;
    let mut index = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec()).map_err(|_| {
            Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("tensor {} name is not UTF-8", i),
            }
        })?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > crate::tensor::MAX_RANK {
            return Err(Error::ArchMismatch(format!(
                "tensor {} has unsupported rank {}",
                name, rank
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("extent")? as usize);
        }
        validate_shape(&shape)?;
        let offset = r.u64("payload offset")? as usize;
        index.push((name, shape, offset));
    }
    let mut expected_offset = r.pos;
    let mut tensors = Vec::with_capacity(index.len());
    for (name, shape, offset) in index {
        let n: usize = shape.iter().product();
        if offset != expected_offset {
            return Err(Error::Truncated {
                path: path.to_path_buf(),
                detail: format!(
                    "tensor {} payload offset {} does not follow the previous payload at {}",
                    name, offset, expected_offset
                ),
            });
        }
        let raw = n
            .checked_mul(8)
            .and_then(|len| offset.checked_add(len).map(|end| (len, end)))
            .filter(|&(_, end)| end <= bytes.len())
            .map(|(len, _)| &bytes[offset..offset + len])
            .ok_or_else(|| Error::Truncated {
                path: path.to_path_buf(),
                detail: format!("tensor {} payload runs past end of file", name),
            })?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        expected_offset = offset + 8 * n;
        tensors.push((name, Tensor::new(shape, data)?));
    }
    if expected_offset != bytes.len() {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            detail: format!(
                "{} trailing bytes after the last payload",
                bytes.len().saturating_sub(expected_offset)
            ),
        });
    }
    Ok((meta, tensors))
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{}.tmp{}", file_name, std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}
