//! Single-file tensor container shared by embedding banks and model checkpoints.
//!
//! Layout: a little-endian `u64` header length, the UTF-8 JSON header, then every
//! tensor as row-major little-endian `f32` in the order listed under the header's
//! `tensors` key. Any other header keys are free-form metadata.

use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A decoded tensor file.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub header: Value,
    pub tensors: Vec<(TensorInfo, Vec<f32>)>,
}

impl TensorFile {
    /// Metadata plus tensors; `header` must be a JSON object.
    pub fn new(header: Value, tensors: Vec<(TensorInfo, Vec<f32>)>) -> Result<Self> {
        if !header.is_object() {
            return Err(Error::Format("tensor file header must be a JSON object".into()));
        }
        for (info, data) in &tensors {
            if info.len() != data.len() {
                return Err(Error::shape(format!(
                    "tensor {} declares {} values, has {}",
                    info.name,
                    info.len(),
                    data.len()
                )));
            }
        }
        Ok(Self { header, tensors })
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = self.header.clone();
        let infos: Vec<&TensorInfo> = self.tensors.iter().map(|(i, _)| i).collect();
        header
            .as_object_mut()
            .expect("checked in new")
            .insert("tensors".into(), serde_json::to_value(infos)?);
        let json = serde_json::to_vec(&header)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for (_, data) in &self.tensors {
            buf.clear();
            buf.reserve(data.len() * 4);
            for x in data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Format("truncated tensor file".into());
        let len = bytes.get(..8).ok_or_else(truncated)?;
        let len = usize::try_from(u64::from_le_bytes(len.try_into().unwrap()))
            .map_err(|_| truncated())?;
        let json = bytes.get(8..8usize.checked_add(len).ok_or_else(truncated)?).ok_or_else(truncated)?;
        let mut header: Value = serde_json::from_slice(json)?;
        let infos: Vec<TensorInfo> = match header.as_object_mut().and_then(|o| o.remove("tensors")) {
            Some(v) => serde_json::from_value(v)?,
            None => return Err(Error::Format("tensor file header lacks a tensors list".into())),
        };
        let mut off = 8 + len;
        let mut tensors = Vec::with_capacity(infos.len());
        for info in infos {
            let n = info.len();
            let end = n.checked_mul(4).and_then(|b| b.checked_add(off)).ok_or_else(truncated)?;
            let raw = bytes.get(off..end).ok_or_else(truncated)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            tensors.push((info, data));
            off = end;
        }
        if off != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after tensors", bytes.len() - off)));
        }
        Ok(Self { header, tensors })
    }

    pub fn read(path: &std::path::Path) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut f)?;
        f.flush()?;
        Ok(())
    }
}
