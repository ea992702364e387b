//! Binary tensor blobs: `"SPTN"`, `u32` version, `u32` rank, one `u64` per
//! extent, then the row-major payload as little-endian IEEE-754 `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BLOB_MAGIC: &[u8; 4] = b"SPTN";
pub const BLOB_VERSION: u32 = 1;

pub fn write_tensor<S: Scalar>(w: &mut impl Write, t: &Tensor<S>) -> Result<()> {
    w.write_all(BLOB_MAGIC)?;
    w.write_all(&BLOB_VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("tensor blob truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

pub fn read_tensor<S: Scalar>(r: &mut impl Read) -> Result<Tensor<S>> {
    let magic: [u8; 4] = read_array(r)?;
    if &magic != BLOB_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != BLOB_VERSION {
        return Err(Error::Format(format!("unsupported tensor blob version {version}")));
    }
    let rank = u32::from_le_bytes(read_array(r)?) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(u64::from_le_bytes(read_array(r)?) as usize);
    }
    let count: usize = shape.iter().product();
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        data.push(S::lit(f64::from_le_bytes(read_array(r)?)));
    }
    Tensor::new(shape, data)
}

pub fn write_tensor_file<S: Scalar>(path: &Path, t: &Tensor<S>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn read_tensor_file<S: Scalar>(path: &Path) -> Result<Tensor<S>> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f64>::matrix(1, 2, vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[0..4], b"SPTN");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[28..36].try_into().unwrap()), 1.5);
        assert_eq!(buf.len(), 44);
        let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::<f64>::vector(vec![1.0, 2.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor::<f64>(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read_tensor::<f64>(&mut &short[..]), Err(Error::Format(_))));
    }
}
