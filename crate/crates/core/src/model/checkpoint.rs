//! MFC1 checkpoint files.
//!
//! Layout, little endian: magic `MFC1`; `u32` length and UTF-8 `key=value`
//! lines (model config, then `meta.*` entries); normalization mean and std as
//! 8 `f64`; `u32` tensor count; per tensor a `u16`-prefixed name, a
//! `u8`-prefixed dtype tag, `u8` rank, `u32` dims and the payload; finally a
//! CRC32 of everything before it.

use std::path::Path;

use diffcore::{Scalar, Tensor};

use super::{ModelConfig, ModelParams, NormStats};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFC1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub cfg: ModelConfig,
    pub norm: NormStats,
    pub params: ModelParams<T>,
    /// Free-form provenance entries (seed, epoch, ...).
    pub meta: Vec<(String, String)>,
}

fn put_f<T: Scalar>(out: &mut Vec<u8>, v: T) {
    match T::DTYPE {
        "f32" => out.extend_from_slice(&(v.to_f64c() as f32).to_le_bytes()),
        _ => out.extend_from_slice(&v.to_f64c().to_le_bytes()),
    }
}

pub fn encode_checkpoint<T: Scalar>(ck: &Checkpoint<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let mut text = String::new();
    for (k, v) in ck.cfg.to_pairs() {
        text.push_str(&format!("{k}={v}\n"));
    }
    for (k, v) in &ck.meta {
        text.push_str(&format!("meta.{k}={v}\n"));
    }
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for v in ck.norm.mean.iter().chain(&ck.norm.std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ck.params.tensors.len() as u32).to_le_bytes());
    for (name, t) in ck.params.names.iter().zip(&ck.params.tensors) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.len() as u8);
        out.extend_from_slice(T::DTYPE.as_bytes());
        out.push(t.ndim() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            put_f(&mut out, v);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
    name: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::Format(format!("{}: truncated checkpoint", self.name)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Format(format!("{}: invalid UTF-8", self.name)))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], name: &str) -> Result<Checkpoint<T>> {
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{name}: not an MFC1 checkpoint")));
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(Error::ChecksumMismatch(name.to_string()));
    }
    let mut r = Reader { buf: body, at: 4, name };
    let len = r.u32()? as usize;
    let mut cfg = ModelConfig::desk();
    let mut meta = Vec::new();
    for line in r.text(len)?.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("{name}: bad config line {line:?}")))?;
        match k.strip_prefix("meta.") {
            Some(key) => meta.push((key.to_string(), v.to_string())),
            None => cfg.set(k, v)?,
        }
    }
    let mut norm = NormStats::default();
    for k in 0..4 {
        norm.mean[k] = r.f64()?;
    }
    for k in 0..4 {
        norm.std[k] = r.f64()?;
    }
    let count = r.u32()? as usize;
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        names.push(r.text(n)?.to_string());
        let n = r.u8()? as usize;
        let dtype = r.text(n)?;
        let rank = r.u8()? as usize;
        let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
        let total: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            "f32" => r
                .take(4 * total)?
                .chunks_exact(4)
                .map(|c| T::from_f64c(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            "f64" => r
                .take(8 * total)?
                .chunks_exact(8)
                .map(|c| T::from_f64c(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
            other => return Err(Error::Format(format!("{name}: unknown dtype {other:?}"))),
        };
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.at != body.len() {
        return Err(Error::Format(format!("{name}: trailing bytes")));
    }
    Ok(Checkpoint { cfg, norm, params: ModelParams { names, tensors }, meta })
}

pub fn save_checkpoint<T: Scalar>(path: &Path, ck: &Checkpoint<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_checkpoint(ck)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::MissingRecord(path.display().to_string()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    decode_checkpoint(&bytes, &path.display().to_string())
}
