//! Binary tensor dumps and named checkpoints.
//!
//! Tensor record: magic `SCST`, `u8` rank, `u8` dtype code (0 = f64,
//! 1 = f32), `rank` little-endian `u32` extents, then the row-major
//! little-endian payload.
//!
//! Checkpoint: magic `SCSK`, `u32` entry count, then per entry a `u32`
//! name length, the UTF-8 name, a `u8` kind (0 = trainable parameter,
//! 1 = buffer) and one tensor record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{DType, Tensor, MAX_RANK};

pub const TENSOR_MAGIC: &[u8; 4] = b"SCST";
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SCSK";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor, dtype: DType) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[t.rank() as u8, dtype.code()])?;
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("extent {d} exceeds u32")))?;
        w.write_all(&d.to_le_bytes())?;
    }
    match dtype {
        DType::F64 => {
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DType::F32 => {
            for v in t.data() {
                w.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads one tensor record; returns the tensor and its stored dtype.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<(Tensor, DType)> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let [rank, code] = read_array::<2, _>(r)?;
    let rank = rank as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    let dtype = DType::from_code(code)?;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u32::from_le_bytes(read_array(r)?) as usize);
    }
    let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let numel = numel.ok_or_else(|| Error::Format(format!("shape {shape:?} overflows")))?;
    let mut payload = vec![0u8; numel * dtype.size()];
    r.read_exact(&mut payload)?;
    let data = match dtype {
        DType::F64 => payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect(),
        DType::F32 => payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64).collect(),
    };
    Ok((Tensor::new(&shape, data).map_err(|e| Error::Format(e.to_string()))?, dtype))
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor, dtype: DType) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t, dtype)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Ok(read_tensor(&mut BufReader::new(File::open(path)?))?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub trainable: bool,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let entries = store
            .iter()
            .map(|(_, p)| CheckpointEntry { name: p.name.clone(), trainable: p.trainable, tensor: p.value.clone() })
            .collect();
        Self { entries }
    }

    pub fn write<W: Write>(&self, w: &mut W, dtype: DType) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for e in &self.entries {
            w.write_all(&(e.name.len() as u32).to_le_bytes())?;
            w.write_all(e.name.as_bytes())?;
            w.write_all(&[u8::from(!e.trainable)])?;
            write_tensor(w, &e.tensor, dtype)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let magic: [u8; 4] = read_array(r)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let count = u32::from_le_bytes(read_array(r)?) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u32::from_le_bytes(read_array(r)?) as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Format(format!("parameter name: {e}")))?;
            let [kind] = read_array::<1, _>(r)?;
            let trainable = match kind {
                0 => true,
                1 => false,
                k => return Err(Error::Format(format!("unknown entry kind {k} for {name}"))),
            };
            let (tensor, _) = read_tensor(r)?;
            entries.push(CheckpointEntry { name, trainable, tensor });
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>, dtype: DType) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w, dtype)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }

    /// Copies every entry into the same-named parameter of `store`.
    pub fn restore_into(&self, store: &mut ParamStore) -> Result<()> {
        for e in &self.entries {
            let id = store
                .id(&e.name)
                .ok_or_else(|| Error::Format(format!("checkpoint entry {} has no matching parameter", e.name)))?;
            store.set_value(id, e.tensor.clone())?;
        }
        Ok(())
    }
}
