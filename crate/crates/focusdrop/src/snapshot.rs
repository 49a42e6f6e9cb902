//! Binary tensor snapshots: magic `FNT1`, little-endian `u32` rank, `u32`
//! dims, then `f32` values in row-major order.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use focusdrop_core::Tensor;

use crate::error::{io_err, Result};

pub const MAGIC: &[u8; 4] = b"FNT1";
const MAX_RANK: usize = 8;

pub fn write_tensor<W: Write>(out: &mut W, tensor: &Tensor<f32>) -> io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(tensor.rank() as u32).to_le_bytes())?;
    for &d in tensor.shape() {
        let d = u32::try_from(d).map_err(|_| invalid_data(format!("dimension {d} exceeds u32")))?;
        out.write_all(&d.to_le_bytes())?;
    }
    for &v in tensor.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(input: &mut R) -> io::Result<Tensor<f32>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(invalid_data(format!("bad magic {magic:?}, expected FNT1")));
    }
    let rank = read_u32(input)? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(invalid_data(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut len = 1usize;
    for _ in 0..rank {
        let d = read_u32(input)? as usize;
        len = len
            .checked_mul(d)
            .ok_or_else(|| invalid_data("element count overflows".to_string()))?;
        shape.push(d);
    }
    let mut bytes = vec![0u8; len.checked_mul(4).ok_or_else(|| invalid_data("payload too large".into()))?];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Tensor::new(&shape, data).map_err(|e| invalid_data(e.to_string()))
}

pub fn save_tensor(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_tensor(&mut w, tensor).and_then(|_| w.flush()).map_err(io_err(path))
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_tensor(&mut BufReader::new(file)).map_err(io_err(path))
}

fn read_u32<R: Read>(input: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn invalid_data(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}
