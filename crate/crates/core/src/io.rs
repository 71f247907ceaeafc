//! Binary file formats.
//!
//! Tensor file (`.features` and friends): little-endian, magic `TNSR`,
//! `u32` rank, `u64` dims, then the f64 payload in row-major order.
//!
//! Checkpoint container: little-endian, magic `CKPT`, `u32` version,
//! a plain-text header (`u64` length + UTF-8 `key=value` lines holding the
//! architecture hyperparameters), then `u32` tensor count followed by named
//! tensor records (`u32` name length, name bytes, embedded `TNSR` blob).
//! Round-trips are bitwise lossless: f64 bit patterns pass through untouched.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_tensor_bytes(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn tensor_to_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + t.rank() * 8 + t.len() * 8);
    write_tensor_bytes(t, &mut out);
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!(
                "{}: truncated (need {} bytes at offset {}, have {})",
                self.name,
                n,
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn read_tensor_cursor(cur: &mut Cursor) -> Result<Tensor> {
    let magic = cur.take(4)?;
    if magic != TENSOR_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad tensor magic {magic:?}",
            cur.name
        )));
    }
    let rank = cur.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cur.u64()? as usize);
    }
    let len: usize = shape.iter().product();
    let payload = cur.take(len * 8)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn tensor_from_bytes(buf: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor {
        buf,
        pos: 0,
        name: "tensor",
    };
    let t = read_tensor_cursor(&mut cur)?;
    if cur.pos != buf.len() {
        return Err(Error::Format(format!(
            "tensor: {} trailing bytes",
            buf.len() - cur.pos
        )));
    }
    Ok(t)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    w.write_all(&tensor_to_bytes(t))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    tensor_from_bytes(&buf).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// In-memory checkpoint: a plain-text hyperparameter header plus named
/// parameter tensors, in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint {
            header: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.header
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint header missing key {key:?}")))
    }

    pub fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("checkpoint header key {key:?}: bad value {raw:?}")))
    }

    pub fn push_tensor(&mut self, name: &str, t: Tensor) {
        self.tensors.push((name.to_string(), t));
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint missing tensor {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header_text = String::new();
        for (k, v) in &self.header {
            header_text.push_str(k);
            header_text.push('=');
            header_text.push_str(v);
            header_text.push('\n');
        }
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_text.len() as u64).to_le_bytes());
        out.extend_from_slice(header_text.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            write_tensor_bytes(t, &mut out);
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut cur = Cursor {
            buf,
            pos: 0,
            name: "checkpoint",
        };
        let magic = cur.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("checkpoint: bad magic {magic:?}")));
        }
        let version = cur.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "checkpoint: unsupported version {version}"
            )));
        }
        let header_len = cur.u64()? as usize;
        let header_text = std::str::from_utf8(cur.take(header_len)?)
            .map_err(|_| Error::Format("checkpoint: header is not UTF-8".into()))?;
        let mut header = Vec::new();
        for line in header_text.lines() {
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("checkpoint: malformed header line {line:?}"))
            })?;
            header.push((k.to_string(), v.to_string()));
        }
        let count = cur.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|_| Error::Format("checkpoint: tensor name is not UTF-8".into()))?
                .to_string();
            let t = read_tensor_cursor(&mut cur)?;
            tensors.push((name, t));
        }
        if cur.pos != buf.len() {
            return Err(Error::Format(format!(
                "checkpoint: {} trailing bytes",
                buf.len() - cur.pos
            )));
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        w.write_all(&self.to_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
            .read_to_end(&mut buf)
            .map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&buf).map_err(|e| match e {
            Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

impl Default for Checkpoint {
    fn default() -> Self {
        Checkpoint::new()
    }
}
