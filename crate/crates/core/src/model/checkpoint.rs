//! Binary checkpoint container.
//!
//! ```text
//! magic       "ECHO1"
//! config      u32 length, TOML text
//! count       u32
//! per tensor  u16 name length, name, u8 ndim, ndim x u32 dims, f64 data
//! ```
//!
//! All integers and floats are little-endian. Tensors appear in
//! [`HasParams`] visiting order, so equal models give equal bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::HasParams;

pub const MAGIC: &[u8; 5] = b"ECHO1";

fn format_err(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

pub fn write_model(model: &Model, out: &mut impl Write) -> Result<()> {
    let io = |e: std::io::Error| format_err(e.to_string());
    let config = toml::to_string(&model.config).map_err(|e| Error::Config(e.to_string()))?;
    let params = model.named_params();
    out.write_all(MAGIC).map_err(io)?;
    out.write_all(&(config.len() as u32).to_le_bytes()).map_err(io)?;
    out.write_all(config.as_bytes()).map_err(io)?;
    out.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in &params {
        let name_len = u16::try_from(name.len()).map_err(|_| format_err(format!("name too long: {name}")))?;
        out.write_all(&name_len.to_le_bytes()).map_err(io)?;
        out.write_all(name.as_bytes()).map_err(io)?;
        out.write_all(&[tensor.shape().len() as u8]).map_err(io)?;
        for &dim in tensor.shape() {
            out.write_all(&(dim as u32).to_le_bytes()).map_err(io)?;
        }
        for v in tensor.data().iter() {
            out.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    Ok(())
}

pub fn to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    Ok(buf)
}

pub fn save(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| format_err(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| format_err(e.to_string()))
    }
}

/// Parses a checkpoint, rebuilding the model from the embedded config and
/// checking every tensor name and shape against it.
pub fn from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len()).ok() != Some(&MAGIC[..]) {
        return Err(format_err("bad magic"));
    }
    let config_len = r.u32()?;
    let config: ModelConfig = toml::from_str(r.utf8(config_len)?).map_err(|e| Error::Config(e.to_string()))?;
    let model = Model::new(config, 0)?;
    let params = model.named_params();
    let count = r.u32()?;
    if count != params.len() {
        return Err(format_err(format!("expected {} tensors, found {count}", params.len())));
    }
    for (name, tensor) in &params {
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let found = r.utf8(name_len)?;
        if found != name {
            return Err(format_err(format!("expected tensor {name}, found {found}")));
        }
        let ndim = r.array::<1>()?[0] as usize;
        let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if shape != tensor.shape() {
            return Err(format_err(format!(
                "{name}: expected shape {:?}, found {shape:?}",
                tensor.shape()
            )));
        }
        let data = r
            .take(tensor.numel() * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        tensor.set_data(data)?;
    }
    if r.pos != bytes.len() {
        return Err(format_err(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn read_model(input: &mut impl Read) -> Result<Model> {
    let mut buf = Vec::new();
    input.read_to_end(&mut buf).map_err(|e| format_err(e.to_string()))?;
    from_bytes(&buf)
}

pub fn load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
