//! `EMBS` binary embedding store.
//!
//! ```text
//! "EMBS" | version u32 | dim u32 | count u64 | kind u8
//! | count × (len u32, UTF-8 id) | count·dim × f32 | crc32 u32
//! ```
//! All integers and floats little-endian; the CRC covers every preceding byte.

use std::path::Path;

use super::{push_crc, read_all, verify_crc, write_atomic, Reader};
use crate::error::{Error, Result};
use crate::store::{EmbeddingStore, StoreKind};

const MAGIC: &[u8; 4] = b"EMBS";
pub const STORE_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 1;

pub fn encode_store(store: &EmbeddingStore) -> Vec<u8> {
    let mut buf = Vec::with_capacity(HEADER_LEN + store.as_slice().len() * 4 + 8 * store.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&STORE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(store.len() as u64).to_le_bytes());
    buf.push(store.kind().code());
    for id in store.ids() {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for v in store.as_slice() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    push_crc(&mut buf);
    buf
}

pub fn decode_store(bytes: &[u8]) -> Result<EmbeddingStore> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected EMBS".into(),
        });
    }
    if bytes.len() >= 8 {
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != STORE_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                supported: STORE_VERSION,
            });
        }
    }
    let payload = verify_crc(bytes, HEADER_LEN)?;
    let mut r = Reader::new(payload);
    r.take(8, "magic and version")?;
    let dim = r.u32("dimension")? as usize;
    let count = r.u64("row count")?;
    let kind_code = r.u8("kind")?;
    let kind = StoreKind::from_code(kind_code).ok_or_else(|| r.err(format!("unknown store kind {kind_code}")))?;
    // every row needs at least a 4-byte id length, so a larger count cannot be honest
    if count > (r.remaining() / 4) as u64 {
        return Err(r.err(format!("row count {count} exceeds file size")));
    }
    let count = count as usize;
    let mut ids = Vec::with_capacity(count);
    for i in 0..count {
        let len = r.u32("id length")? as usize;
        let at = r.offset();
        let raw = r.take(len, "id bytes")?;
        let id = std::str::from_utf8(raw).map_err(|_| Error::Format {
            offset: at,
            message: format!("id {i} is not valid UTF-8"),
        })?;
        ids.push(id.to_owned());
    }
    let n = count.checked_mul(dim).ok_or_else(|| r.err("matrix size overflow"))?;
    let at = r.offset();
    let raw = r.take(n.checked_mul(4).ok_or_else(|| r.err("matrix size overflow"))?, "matrix")?;
    if r.remaining() != 0 {
        return Err(r.err(format!("{} unexpected trailing bytes", r.remaining())));
    }
    let mut store = EmbeddingStore::new(dim, kind);
    let mut row = vec![0.0f64; dim];
    for (i, id) in ids.into_iter().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            let o = (i * dim + c) * 4;
            *v = f32::from_le_bytes(raw[o..o + 4].try_into().expect("4 bytes")) as f64;
        }
        store.push(id, &row).map_err(|e| Error::Format {
            offset: at + (i * dim * 4) as u64,
            message: e.to_string(),
        })?;
    }
    Ok(store)
}

pub fn write_store(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<()> {
    write_atomic(path.as_ref(), &encode_store(store))
}

pub fn read_store(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    decode_store(&read_all(path.as_ref())?)
}
