//! SGTF binary tensor container.
//!
//! Layout: magic `SGTF`, `u8` version (1), `u8` dtype (0 = f64, 1 = f32),
//! `u32` rank, `rank` x `u64` dims, then raw little-endian element data.
//! Everything is little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"SGTF";
pub const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

impl Precision {
    fn code(self) -> u8 {
        match self {
            Precision::F64 => 0,
            Precision::F32 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Precision::F64),
            1 => Ok(Precision::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(Precision::F64),
            "f32" => Ok(Precision::F32),
            other => Err(Error::InvalidArgument(format!("precision must be f32 or f64, got {other:?}"))),
        }
    }
}

pub fn encode(t: &Tensor, precision: Precision) -> Vec<u8> {
    let width = match precision {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    let mut out = Vec::with_capacity(10 + 8 * t.rank() + width * t.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(precision.code());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match precision {
        Precision::F64 => t.data().iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Precision::F32 => t.data().iter().for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

/// Decodes a tensor and reports the stored precision.
pub fn decode(mut bytes: &[u8]) -> Result<(Tensor, Precision)> {
    let mut header = [0u8; 10];
    bytes
        .read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("bad magic, not an SGTF file".into()));
    }
    if header[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", header[4])));
    }
    let precision = Precision::from_code(header[5])?;
    let rank = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 8];
        bytes
            .read_exact(&mut d)
            .map_err(|_| Error::Format("truncated dims".into()))?;
        let dim = usize::try_from(u64::from_le_bytes(d)).map_err(|_| Error::Format("dimension overflow".into()))?;
        shape.push(dim);
    }
    let n = numel(&shape);
    let width = match precision {
        Precision::F64 => 8,
        Precision::F32 => 4,
    };
    if bytes.len() != n * width {
        return Err(Error::Format(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            bytes.len(),
            n * width
        )));
    }
    let data = match precision {
        Precision::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Precision::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok((Tensor::new(shape, data)?, precision))
}

pub fn write(path: impl AsRef<Path>, t: &Tensor, precision: Precision) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t, precision))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    read_with_precision(path).map(|(t, _)| t)
}

pub fn read_with_precision(path: impl AsRef<Path>) -> Result<(Tensor, Precision)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = encode(&t, Precision::F64);
        assert_eq!(&b[..4], b"SGTF");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 0);
        assert_eq!(&b[6..10], &2u32.to_le_bytes());
        assert_eq!(&b[10..18], &2u64.to_le_bytes());
        assert_eq!(&b[18..26], &3u64.to_le_bytes());
        assert_eq!(&b[26..34], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 26 + 48);
    }

    #[test]
    fn rejects_corrupt_input() {
        let t = Tensor::ones(&[4]);
        let mut b = encode(&t, Precision::F64);
        assert!(decode(&b[..b.len() - 1]).is_err());
        b[0] = b'X';
        assert!(decode(&b).is_err());
        let mut b = encode(&t, Precision::F64);
        b[5] = 9;
        assert!(decode(&b).is_err());
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::scalar(-0.5);
        let (back, _) = decode(&encode(&t, Precision::F64)).unwrap();
        assert_eq!(back, t);
    }

    proptest! {
        #[test]
        fn f64_round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::randn(&dims, &mut rng).map(|v| v * 1e3);
            let bytes = encode(&t, Precision::F64);
            let (back, p) = decode(&bytes).unwrap();
            prop_assert_eq!(p, Precision::F64);
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode(&back, Precision::F64), bytes);
        }

        #[test]
        fn f32_round_trip_is_stable(v in proptest::collection::vec(-1e6f64..1e6, 1..30)) {
            let t = Tensor::vector(&v);
            let bytes = encode(&t, Precision::F32);
            let (back, p) = decode(&bytes).unwrap();
            prop_assert_eq!(p, Precision::F32);
            prop_assert_eq!(encode(&back, Precision::F32), bytes);
        }
    }
}
