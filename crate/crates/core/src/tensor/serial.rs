//! Little-endian binary tensor records:
//! `"ETMA"`, version `u16`, rank `u32`, extents `u64 × rank`, `f64` payload.

use std::io::{Read, Write};

use super::Tensor;
use crate::error::{EtmaError, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"ETMA";
pub const TENSOR_FORMAT_VERSION: u16 = 1;

const MAX_RANK: usize = 8;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> std::io::Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

fn truncated(what: &str) -> EtmaError {
    EtmaError::Format {
        expected: what.to_string(),
        found: "end of input".into(),
    }
}

pub(crate) fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => truncated(what),
        _ => EtmaError::Format {
            expected: what.to_string(),
            found: e.to_string(),
        },
    })
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic, "tensor magic")?;
    if &magic != TENSOR_MAGIC {
        return Err(EtmaError::Format {
            expected: "magic ETMA".into(),
            found: format!("{magic:?}"),
        });
    }
    let mut v = [0u8; 2];
    read_exact(r, &mut v, "format version")?;
    let version = u16::from_le_bytes(v);
    if version != TENSOR_FORMAT_VERSION {
        return Err(EtmaError::Format {
            expected: format!("tensor format version {TENSOR_FORMAT_VERSION}"),
            found: format!("version {version}"),
        });
    }
    let mut rb = [0u8; 4];
    read_exact(r, &mut rb, "rank")?;
    let rank = u32::from_le_bytes(rb) as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(EtmaError::Format {
            expected: format!("rank in 1..={MAX_RANK}"),
            found: rank.to_string(),
        });
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut e = [0u8; 8];
        read_exact(r, &mut e, "extent")?;
        shape.push(u64::from_le_bytes(e) as usize);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .filter(|&n| n > 0 && n < (1 << 32))
        .ok_or_else(|| EtmaError::Format {
            expected: "positive extents".into(),
            found: format!("{shape:?}"),
        })?;
    let mut payload = vec![0u8; n * 8];
    read_exact(r, &mut payload, "tensor payload")?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn header_layout_is_little_endian() {
        let t = Tensor::new(&[2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"ETMA");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[2, 0, 0, 0]);
        assert_eq!(&buf[10..18], &2u64.to_le_bytes());
        assert_eq!(buf.len(), 4 + 2 + 4 + 16 + 16);
    }

    #[test]
    fn version_mismatch_names_both_versions() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::scalar(1.0)).unwrap();
        buf[4] = 9;
        let err = read_tensor(&mut buf.as_slice()).unwrap_err().to_string();
        assert!(err.contains("version 1") && err.contains("version 9"), "{err}");
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::ones(&[3, 3])).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(EtmaError::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            shape in proptest::collection::vec(1usize..5, 1..4),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::tensor::Rng::new(seed);
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| rng.normal() * 1e3).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            prop_assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}
