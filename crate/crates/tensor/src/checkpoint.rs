//! `DICM` binary checkpoints.
//!
//! ```text
//! "DICM" | u32 version | u32 param_count
//! per parameter: u32 name_len | name (UTF-8) | u32 rank | u32 dims[rank] | f32 payload
//! optional:      "ADAM" | u64 step | u32 entry_count | entries in the layout above
//!                (two per parameter, named "<name>/m" and "<name>/v")
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};

use crate::error::CheckpointError;
use crate::param::ParamStore;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"DICM";
pub const ADAM_MAGIC: [u8; 4] = *b"ADAM";
pub const VERSION: u32 = 1;

/// One named array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSection {
    pub step: u64,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub params: Vec<Entry>,
    pub adam: Option<AdamSection>,
}

impl Checkpoint {
    pub fn from_store<T: Real>(store: &ParamStore<T>, with_adam: bool) -> Self {
        let params = store
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                dims: p.value.shape().to_vec(),
                data: to_f32(p.value.data()),
            })
            .collect();
        let adam = with_adam.then(|| AdamSection {
            step: store.iter().map(|p| p.adam.step).max().unwrap_or(0),
            entries: store
                .iter()
                .flat_map(|p| {
                    let dims = p.value.shape().to_vec();
                    [
                        Entry {
                            name: format!("{}/m", p.name),
                            dims: dims.clone(),
                            data: to_f32(&p.adam.m),
                        },
                        Entry {
                            name: format!("{}/v", p.name),
                            dims,
                            data: to_f32(&p.adam.v),
                        },
                    ]
                })
                .collect(),
        });
        Self {
            version: VERSION,
            params,
            adam,
        }
    }

    /// Copy values (and Adam state, when present) into a store with matching
    /// names and shapes.
    pub fn apply_to<T: Real>(&self, store: &mut ParamStore<T>) -> Result<(), CheckpointError> {
        if self.params.len() != store.len() {
            return Err(CheckpointError::Malformed(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for e in &self.params {
            let id = store
                .id(&e.name)
                .ok_or_else(|| CheckpointError::Malformed(format!("unknown parameter `{}`", e.name)))?;
            let p = store.get_mut(id);
            if p.value.shape() != e.dims.as_slice() {
                return Err(CheckpointError::Malformed(format!(
                    "`{}` has shape {:?}, model expects {:?}",
                    e.name,
                    e.dims,
                    p.value.shape()
                )));
            }
            p.value = Tensor::from_vec(&e.dims, from_f32(&e.data))?;
        }
        if let Some(adam) = &self.adam {
            for e in &adam.entries {
                let (base, which) = e
                    .name
                    .rsplit_once('/')
                    .ok_or_else(|| CheckpointError::Malformed(format!("adam entry `{}`", e.name)))?;
                let id = store
                    .id(base)
                    .ok_or_else(|| CheckpointError::Malformed(format!("adam entry for unknown `{base}`")))?;
                let p = store.get_mut(id);
                if e.data.len() != p.value.numel() {
                    return Err(CheckpointError::Malformed(format!("adam entry `{}` size", e.name)));
                }
                match which {
                    "m" => p.adam.m = from_f32(&e.data),
                    "v" => p.adam.v = from_f32(&e.data),
                    _ => return Err(CheckpointError::Malformed(format!("adam entry `{}`", e.name))),
                }
                p.adam.step = adam.step;
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(&MAGIC)?;
        w.write_all(&self.version.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for e in &self.params {
            write_entry(&mut w, e)?;
        }
        if let Some(adam) = &self.adam {
            w.write_all(&ADAM_MAGIC)?;
            w.write_all(&adam.step.to_le_bytes())?;
            w.write_all(&(adam.entries.len() as u32).to_le_bytes())?;
            for e in &adam.entries {
                write_entry(&mut w, e)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cur = Cursor { buf: &buf, pos: 0 };
        let magic = cur.magic()?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic {
                expected: MAGIC,
                found: magic,
            });
        }
        let version = cur.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let count = cur.u32()? as usize;
        let params = (0..count).map(|_| cur.entry()).collect::<Result<Vec<_>, _>>()?;
        let adam = if cur.remaining() == 0 {
            None
        } else {
            let magic = cur.magic()?;
            if magic != ADAM_MAGIC {
                return Err(CheckpointError::BadMagic {
                    expected: ADAM_MAGIC,
                    found: magic,
                });
            }
            let step = cur.u64()?;
            let n = cur.u32()? as usize;
            let entries = (0..n).map(|_| cur.entry()).collect::<Result<Vec<_>, _>>()?;
            Some(AdamSection { step, entries })
        };
        if cur.remaining() != 0 {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", cur.remaining())));
        }
        Ok(Self {
            version,
            params,
            adam,
        })
    }
}

fn to_f32<T: Real>(v: &[T]) -> Vec<f32> {
    v.iter().map(|x| x.as_f64() as f32).collect()
}

fn from_f32<T: Real>(v: &[f32]) -> Vec<T> {
    v.iter().map(|&x| T::from_f64(x as f64)).collect()
}

fn write_entry<W: Write>(w: &mut W, e: &Entry) -> Result<(), CheckpointError> {
    w.write_all(&(e.name.len() as u32).to_le_bytes())?;
    w.write_all(e.name.as_bytes())?;
    w.write_all(&(e.dims.len() as u32).to_le_bytes())?;
    for &d in &e.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(e.data.len() * 4);
    for v in &e.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&[u8], CheckpointError> {
        if self.remaining() < n {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self) -> Result<[u8; 4], CheckpointError> {
        Ok(self.take(4)?.try_into().expect("4 bytes"))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn entry(&mut self) -> Result<Entry, CheckpointError> {
        let len = self.u32()? as usize;
        let name = String::from_utf8(self.take(len)?.to_vec())
            .map_err(|_| CheckpointError::Malformed("parameter name is not UTF-8".into()))?;
        let rank = self.u32()? as usize;
        if rank > 8 {
            return Err(CheckpointError::Malformed(format!("rank {rank} for `{name}`")));
        }
        let dims = (0..rank).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let raw = self.take(n.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Entry { name, dims, data })
    }
}
