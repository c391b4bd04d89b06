//! Binary container shared by the tensor cache and model checkpoints.
//!
//! Layout (little endian):
//! `magic[8] | header_len u64 | header (JSON) | rank u64 | dims u64* | payload_len u64 | payload`

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_CACHE: &[u8; 8] = b"EAQTENS1";
pub const DIFFUSION_CHECKPOINT: &[u8; 8] = b"EAQDIFF1";
pub const LEARNER_CHECKPOINT: &[u8; 8] = b"EAQMARL1";

pub fn write(path: &Path, magic: &[u8; 8], header: &[u8], shape: &[usize], payload: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(magic)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(header)?;
    w.write_all(&(shape.len() as u64).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()?;
    Ok(())
}

pub type Parts = (Vec<u8>, Vec<usize>, Vec<u8>);

pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Parts> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != magic {
        return Err(Error::Checkpoint(format!(
            "{}: unexpected file magic",
            path.display()
        )));
    }
    let header_len = cur.u64()? as usize;
    let header = cur.take(header_len)?.to_vec();
    let rank = cur.u64()? as usize;
    let shape = (0..rank)
        .map(|_| cur.u64().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let payload_len = cur.u64()? as usize;
    let payload = cur.take(payload_len)?.to_vec();
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((header, shape, payload))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        let raw: [u8; 8] = self.take(8)?.try_into().expect("eight bytes");
        Ok(u64::from_le_bytes(raw))
    }
}

pub fn f64_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of f64".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
        .collect())
}

pub fn f32_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_f32(bytes: &[u8]) -> Result<Vec<f32>> {
    if bytes.len() % 4 != 0 {
        return Err(Error::Checkpoint("payload is not a whole number of f32".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("four bytes")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write(&path, TENSOR_CACHE, b"{}", &[2], &f64_bytes(&[1.0, -0.0])).unwrap();
        let (h, shape, p) = read(&path, TENSOR_CACHE).unwrap();
        assert_eq!((h.as_slice(), shape.as_slice()), (&b"{}"[..], &[2usize][..]));
        assert_eq!(bytes_f64(&p).unwrap()[1].to_bits(), (-0.0f64).to_bits());
        assert!(read(&path, DIFFUSION_CHECKPOINT).is_err());

        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 3]).unwrap();
        assert!(read(&path, TENSOR_CACHE).is_err());
    }
}
