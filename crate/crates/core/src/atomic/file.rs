//! Binary table file, little-endian throughout:
//!
//! ```text
//! "BAHE" | version u32 | pool u8 | fingerprint u64 | dim u32 | count u64
//! | count × (text_len u32 | UTF-8 text | dim × f32) | CRC-32 u32
//! ```
//!
//! The CRC covers every byte between the magic and the trailer.

use std::fs;
use std::path::Path;

use super::{BehaviorEmbeddingTable, TableError};
use crate::nn::PoolMode;

pub const TABLE_MAGIC: &[u8; 4] = b"BAHE";
pub const TABLE_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4 + 8;

pub fn encode_table(table: &BehaviorEmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + table.len() * (16 + 4 * table.dim()) + 4);
    out.extend_from_slice(TABLE_MAGIC);
    out.extend_from_slice(&TABLE_VERSION.to_le_bytes());
    out.push(table.pool_mode().as_byte());
    out.extend_from_slice(&table.fingerprint().to_le_bytes());
    out.extend_from_slice(&(table.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for (key, v) in table.iter() {
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out[4..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TableError> {
        let end = self.pos.checked_add(n).ok_or(TableError::TruncatedFile)?;
        let s = self.buf.get(self.pos..end).ok_or(TableError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, TableError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TableError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Walks record lengths only, to tell a short file from a corrupted one.
fn body_fits(body: &[u8], dim: usize, count: u64) -> bool {
    let mut r = Reader { buf: body, pos: 0 };
    for _ in 0..count {
        let Ok(len) = r.u32() else { return false };
        if r.take(len as usize).is_err() || r.take(dim * 4).is_err() {
            return false;
        }
    }
    true
}

pub fn decode_table(bytes: &[u8]) -> Result<BehaviorEmbeddingTable, TableError> {
    if bytes.len() < 4 {
        return Err(TableError::TruncatedFile);
    }
    if &bytes[..4] != TABLE_MAGIC {
        return Err(TableError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(TableError::TruncatedFile);
    }
    let mut r = Reader { buf: &bytes[..bytes.len() - 4], pos: 4 };
    let version = r.u32()?;
    if version != TABLE_VERSION {
        return Err(TableError::VersionMismatch { found: version, expected: TABLE_VERSION });
    }
    let pool_byte = r.take(1)?[0];
    let fingerprint = r.u64()?;
    let dim = r.u32()? as usize;
    let count = r.u64()?;

    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[4..bytes.len() - 4]);
    if stored != computed {
        if !body_fits(&bytes[HEADER_LEN..bytes.len() - 4], dim, count) {
            return Err(TableError::TruncatedFile);
        }
        return Err(TableError::ChecksumMismatch { stored, computed });
    }

    let pool = PoolMode::from_byte(pool_byte).ok_or_else(|| TableError::Corrupt(format!("pool byte {pool_byte}")))?;
    if dim == 0 {
        return Err(TableError::Corrupt("zero dimension".into()));
    }
    let mut table = BehaviorEmbeddingTable::new(dim, pool, fingerprint);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|e| TableError::Corrupt(format!("key is not UTF-8: {e}")))?
            .to_string();
        let raw = r.take(dim * 4)?;
        let v = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        table.insert_raw(text, v)?;
    }
    if r.pos != r.buf.len() {
        return Err(TableError::Corrupt(format!("{} trailing bytes before checksum", r.buf.len() - r.pos)));
    }
    Ok(table)
}

pub fn save_table(table: &BehaviorEmbeddingTable, path: &Path) -> Result<(), TableError> {
    fs::write(path, encode_table(table)).map_err(|source| TableError::Io { path: path.to_path_buf(), source })
}

pub fn load_table(path: &Path) -> Result<BehaviorEmbeddingTable, TableError> {
    let bytes = fs::read(path).map_err(|source| TableError::Io { path: path.to_path_buf(), source })?;
    decode_table(&bytes)
}
