//! Portable tensor file format.
//!
//! Layout: the 8-byte magic `OPGTNSR\0`, one UTF-8 JSON header line
//! `{"byte_order":"LE","dtype":"real64","shape":[..]}` terminated by `\n`,
//! then the raw little-endian payload (real64: 8 bytes per element;
//! complex128: interleaved re, im).

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{numel, Dtype, Tensor, TensorData};

pub const MAGIC: &[u8; 8] = b"OPGTNSR\0";

#[derive(Serialize, Deserialize)]
struct Header {
    byte_order: String,
    dtype: Dtype,
    shape: Vec<usize>,
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let header = Header { byte_order: "LE".into(), dtype: t.dtype(), shape: t.shape().to_vec() };
    let mut out = Vec::with_capacity(64 + t.len() * 16);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
    out.push(b'\n');
    match t.data() {
        TensorData::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::Complex(v) => v.iter().for_each(|z| {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let rest = &bytes[MAGIC.len()..];
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptHeader("missing header terminator".into()))?;
    let text = std::str::from_utf8(&rest[..nl]).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    let header: Header = serde_json::from_str(text).map_err(|e| Error::CorruptHeader(e.to_string()))?;
    if header.byte_order != "LE" {
        return Err(Error::CorruptHeader(format!("unsupported byte_order {}", header.byte_order)));
    }
    if header.shape.is_empty() || header.shape.contains(&0) {
        return Err(Error::CorruptHeader(format!("invalid shape {:?}", header.shape)));
    }
    let n = numel(&header.shape);
    let width = match header.dtype {
        Dtype::Real64 => 8,
        Dtype::Complex128 => 16,
    };
    let payload = &rest[nl + 1..];
    let expected = n * width;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() });
    }
    let f = |chunk: &[u8]| f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
    match header.dtype {
        Dtype::Real64 => Tensor::real(header.shape, payload.chunks_exact(8).map(f).collect()),
        Dtype::Complex128 => Tensor::complex(
            header.shape,
            payload.chunks_exact(16).map(|c| Complex64::new(f(&c[..8]), f(&c[8..]))).collect(),
        ),
    }
}

pub fn save_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_tensor(t))?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode_tensor(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn real_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let t = Tensor::real(vec![2], vec![1.5, -2.0]).unwrap();
        save_tensor(&t, &p).unwrap();
        assert_eq!(load_tensor(&p).unwrap(), t);
    }

    #[test]
    fn complex_keeps_dtype() {
        let t = Tensor::complex(
            vec![2, 2],
            (0..4).map(|i| Complex64::new(i as f64, -(i as f64) * 0.5)).collect(),
        )
        .unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.dtype(), Dtype::Complex128);
        assert_eq!(back, t);
    }

    #[test]
    fn distinct_errors_for_corruption() {
        let t = Tensor::real(vec![2], vec![1.0, 2.0]).unwrap();
        let mut bytes = encode_tensor(&t);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_tensor(&bad).unwrap_err().to_string(), "bad magic");
        let mut hdr = bytes.clone();
        hdr[9] = b'#';
        assert!(matches!(decode_tensor(&hdr), Err(Error::CorruptHeader(_))));
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_tensor(&bytes), Err(Error::TruncatedPayload { .. })));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(vals in proptest::collection::vec(-1e300f64..1e300, 1..40), cplx in any::<bool>()) {
            let t = if cplx && vals.len() % 2 == 0 {
                let z: Vec<Complex64> = vals.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
                Tensor::complex(vec![z.len()], z).unwrap()
            } else {
                Tensor::real(vec![vals.len()], vals.clone()).unwrap()
            };
            let back = decode_tensor(&encode_tensor(&t)).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
