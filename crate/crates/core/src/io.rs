//! MSCT binary tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"MSCT" | version: u32 = 1 | dtype: u8 (0 = f32, 1 = f64) | ndim: u8
//!        | ndim x u32 dims | row-major payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSCT";
pub const VERSION: u32 = 1;

/// Header length in bytes for a tensor of rank `ndim`.
pub fn header_len(ndim: usize) -> usize {
    4 + 4 + 1 + 1 + 4 * ndim
}

pub fn encode<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.ndim() > u8::MAX as usize {
        return Err(Error::format(format!("rank {} does not fit the header", t.ndim())));
    }
    let mut out = Vec::with_capacity(header_len(t.ndim()) + t.numel() * T::BYTES);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE);
    out.push(t.ndim() as u8);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::format(format!("dim {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// A decoded tensor of either supported precision.
#[derive(Debug, Clone)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dims(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.dims(),
            AnyTensor::F64(t) => t.dims(),
        }
    }

    pub fn into_f64(self) -> Tensor<f64> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t,
        }
    }
}

struct Header {
    dtype: u8,
    dims: Vec<usize>,
}

fn read_header<R: Read>(r: &mut R) -> Result<Header> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format(format!("bad magic {magic:?}, expected MSCT")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::format(format!("unsupported MSCT version {version}")));
    }
    let mut pair = [0u8; 2];
    r.read_exact(&mut pair)?;
    let [dtype, ndim] = pair;
    if dtype > 1 {
        return Err(Error::format(format!("unknown dtype code {dtype}")));
    }
    let mut dims = Vec::with_capacity(ndim as usize);
    for _ in 0..ndim {
        r.read_exact(&mut word)?;
        dims.push(u32::from_le_bytes(word) as usize);
    }
    Ok(Header { dtype, dims })
}

fn read_payload<T: Scalar, R: Read>(r: &mut R, dims: &[usize]) -> Result<Tensor<T>> {
    let numel: usize = dims.iter().product();
    let mut bytes = vec![0u8; numel * T::BYTES];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(T::BYTES).map(T::read_le).collect();
    Tensor::new(dims, data).map_err(|e| Error::format(e.to_string()))
}

pub fn read_any<R: Read>(r: &mut R) -> Result<AnyTensor> {
    let header = read_header(r)?;
    Ok(match header.dtype {
        0 => AnyTensor::F32(read_payload(r, &header.dims)?),
        _ => AnyTensor::F64(read_payload(r, &header.dims)?),
    })
}

/// Reads a tensor whose stored dtype must equal `T`.
pub fn read<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let header = read_header(r)?;
    if header.dtype != T::DTYPE {
        return Err(Error::format(format!(
            "file holds dtype code {}, requested {}",
            header.dtype,
            T::NAME
        )));
    }
    read_payload(r, &header.dims)
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut cursor = bytes;
    let t = read(&mut cursor)?;
    if !cursor.is_empty() {
        return Err(Error::format(format!("{} trailing bytes after tensor", cursor.len())));
    }
    Ok(t)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(t)?)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    read(&mut BufReader::new(File::open(path)?))
}

pub fn load_any(path: impl AsRef<Path>) -> Result<AnyTensor> {
    read_any(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let t = Tensor::<f32>::new(&[1, 2], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t).unwrap();
        let mut want = b"MSCT".to_vec();
        want.extend([1, 0, 0, 0, 0, 2, 1, 0, 0, 0, 2, 0, 0, 0]);
        want.extend(1.0f32.to_le_bytes());
        want.extend((-2.0f32).to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn dtype_mismatch_rejected() {
        let bytes = encode(&Tensor::<f64>::ones(&[3])).unwrap();
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Format(_))));
        assert!(matches!(read_any(&mut bytes.as_slice()).unwrap(), AnyTensor::F64(_)));
    }

    #[test]
    fn truncated_payload_rejected() {
        let bytes = encode(&Tensor::<f32>::ones(&[4])).unwrap();
        assert!(decode::<f32>(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&Tensor::<f32>::ones(&[1])).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode::<f32>(&bytes), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(dims in prop::collection::vec(1usize..5, 1..5), seed in any::<u64>()) {
            let t = Tensor::<f64>::from_fn(&dims, |i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2));
            let back = decode::<f64>(&encode(&t).unwrap()).unwrap();
            prop_assert!(back.bit_eq(&t));
        }
    }
}
