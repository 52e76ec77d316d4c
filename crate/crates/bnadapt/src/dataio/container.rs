//! "BNAD" chunked binary container.
//!
//! Layout, everything little-endian:
//!
//! ```text
//! magic   b"BNAD"
//! version u16
//! count   u32
//! count x chunk:
//!   name_len u16, name bytes (utf-8)
//!   ndim     u8,  ndim x dim u32
//!   payload  prod(dims) x f32
//! crc32   u32 over all preceding bytes (IEEE)
//! ```

use crate::error::{Error, Result};
use std::path::Path;

pub const CONTAINER_VERSION: u16 = 1;
const MAGIC: [u8; 4] = *b"BNAD";
const MAX_NDIM: usize = 8;
const MAX_NAME: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Chunk {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        let n: usize = shape.iter().product();
        assert_eq!(n, data.len(), "chunk shape does not match payload");
        Chunk { name: name.into(), shape, data }
    }

    /// Scalar convenience chunk.
    pub fn scalar(name: impl Into<String>, value: f32) -> Self {
        Chunk::new(name, vec![1], vec![value])
    }
}

// -- crc32 (IEEE, reflected) ------------------------------------------------

const fn crc_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 { 0xedb8_8320 ^ (c >> 1) } else { c >> 1 };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
}

static CRC_TABLE: [u32; 256] = crc_table();

pub(crate) fn crc32(bytes: &[u8]) -> u32 {
    let mut c = 0xffff_ffffu32;
    for &b in bytes {
        c = CRC_TABLE[((c ^ b as u32) & 0xff) as usize] ^ (c >> 8);
    }
    c ^ 0xffff_ffff
}

// -- writing ------------------------------------------------------------------

pub fn write_container(chunks: &[Chunk]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(chunks.len() as u32).to_le_bytes());
    for chunk in chunks {
        let name = chunk.name.as_bytes();
        assert!(name.len() <= MAX_NAME, "chunk name too long");
        assert!(chunk.shape.len() <= MAX_NDIM, "chunk rank too high");
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(chunk.shape.len() as u8);
        for &d in &chunk.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &chunk.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn save_container(path: &Path, chunks: &[Chunk]) -> Result<()> {
    Ok(std::fs::write(path, write_container(chunks))?)
}

// -- reading ------------------------------------------------------------------

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, context: &'static str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated { context });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u16(&mut self, context: &'static str) -> Result<u16> {
        let b = self.take(2, context)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, context: &'static str) -> Result<u32> {
        let b = self.take(4, context)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_container(bytes: &[u8]) -> Result<Vec<Chunk>> {
    // magic + version + count + crc
    if bytes.len() < 4 + 2 + 4 + 4 {
        return Err(Error::Truncated { context: "header" });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic { got: [bytes[0], bytes[1], bytes[2], bytes[3]] });
    }
    let body_len = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[body_len..].try_into().unwrap());
    let computed = crc32(&bytes[..body_len]);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let mut cur = Cursor { bytes: &bytes[..body_len], pos: 4 };
    let version = cur.u16("version")?;
    if version > CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion { got: version, max: CONTAINER_VERSION });
    }
    let count = cur.u32("chunk count")? as usize;
    let mut chunks = Vec::new();
    for i in 0..count {
        let name_len = cur.u16("chunk name length")? as usize;
        if name_len > MAX_NAME {
            return Err(Error::Malformed { detail: format!("chunk {i}: name length {name_len}") });
        }
        let name = std::str::from_utf8(cur.take(name_len, "chunk name")?)
            .map_err(|_| Error::Malformed { detail: format!("chunk {i}: name is not utf-8") })?
            .to_string();
        let ndim = cur.take(1, "chunk rank")?[0] as usize;
        if ndim > MAX_NDIM {
            return Err(Error::Malformed { detail: format!("chunk {name:?}: rank {ndim}") });
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut elems = 1u64;
        for _ in 0..ndim {
            let d = cur.u32("chunk dim")? as u64;
            elems = elems.saturating_mul(d);
            shape.push(d as usize);
        }
        let payload_bytes = elems.saturating_mul(4);
        if payload_bytes > (cur.bytes.len() - cur.pos) as u64 {
            return Err(Error::Truncated { context: "chunk payload" });
        }
        let raw = cur.take(payload_bytes as usize, "chunk payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        chunks.push(Chunk { name, shape, data });
    }
    if cur.pos != body_len {
        return Err(Error::Malformed {
            detail: format!("{} unparsed bytes before crc", body_len - cur.pos),
        });
    }
    Ok(chunks)
}

pub fn load_container(path: &Path) -> Result<Vec<Chunk>> {
    read_container(&std::fs::read(path)?)
}

/// Name-indexed view over loaded chunks with shape-checked getters.
pub struct ChunkMap {
    chunks: Vec<Chunk>,
}

impl ChunkMap {
    pub fn new(chunks: Vec<Chunk>) -> Self {
        ChunkMap { chunks }
    }

    pub fn get(&self, name: &str) -> Result<&Chunk> {
        self.chunks.iter().find(|c| c.name == name).ok_or_else(|| Error::Malformed {
            detail: format!("missing chunk {name:?}"),
        })
    }

    pub fn get_shaped(&self, name: &str, shape: &[usize]) -> Result<&Chunk> {
        let c = self.get(name)?;
        if c.shape != shape {
            return Err(Error::Malformed {
                detail: format!("chunk {name:?}: expected shape {shape:?}, found {:?}", c.shape),
            });
        }
        Ok(c)
    }

    pub fn scalar(&self, name: &str) -> Result<f32> {
        let c = self.get(name)?;
        if c.data.len() != 1 {
            return Err(Error::Malformed {
                detail: format!("chunk {name:?}: expected scalar, found {:?}", c.shape),
            });
        }
        Ok(c.data[0])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.chunks.iter().map(|c| c.name.as_str())
    }
}
