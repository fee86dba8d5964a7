//! Binary tensor container.
//!
//! Layout: magic `ADVCA1`, tensor count (u32 LE), then per tensor the name length
//! (u32 LE), UTF-8 name, rank (u32 LE), dims (u32 LE each) and values (f32 LE).

use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::io::write_atomic;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"ADVCA1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn u32_of(v: usize, what: &str) -> Result<u32, CheckpointError> {
    u32::try_from(v).map_err(|_| CheckpointError::Format(format!("{what} {v} exceeds u32")))
}

pub fn write_checkpoint<W: Write>(tensors: &[(String, Tensor)], mut out: W) -> Result<(), CheckpointError> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&u32_of(tensors.len(), "tensor count")?.to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&u32_of(name.len(), "name length")?.to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&u32_of(t.rank(), "rank")?.to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&u32_of(d, "dimension")?.to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf).map_err(truncated)?;
    Ok(u32::from_le_bytes(buf))
}

fn truncated(e: io::Error) -> CheckpointError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        CheckpointError::Format("truncated checkpoint".into())
    } else {
        e.into()
    }
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 6];
    input.read_exact(&mut magic).map_err(truncated)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::Format("bad magic".into()));
    }
    let count = read_u32(&mut input)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = read_u32(&mut input)? as usize;
        let mut name = vec![0u8; name_len];
        input.read_exact(&mut name).map_err(truncated)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut input)? as usize;
        let shape = (0..rank)
            .map(|_| read_u32(&mut input).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        input.read_exact(&mut bytes).map_err(truncated)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| CheckpointError::Format(format!("tensor {name:?}: {e}")))?;
        tensors.push((name, t));
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(CheckpointError::Format("trailing bytes after last tensor".into()));
    }
    Ok(tensors)
}

pub fn save_checkpoint(tensors: &[(String, Tensor)], path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    write_checkpoint(tensors, &mut buf)?;
    write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
