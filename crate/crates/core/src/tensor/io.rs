//! `LIFT` binary tensor dumps: magic `LIFT`, five little-endian `u32`
//! (dtype code, n, c, h, w), then little-endian elements in flat order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DType, Real, Shape, Tensor4};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LIFT";
pub const HEADER_LEN: usize = 24;

impl<T: Real> Tensor4<T> {
    pub fn to_lift_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        let s = self.shape();
        for v in [
            T::DTYPE.code(),
            s.n as u32,
            s.c as u32,
            s.h as u32,
            s.w as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &x in self.data() {
            x.write_le(&mut out);
        }
        out
    }

    pub fn write_lift(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_lift_bytes())
    }

    /// Reads one dump, converting from the stored dtype to `T` if they differ.
    /// `base_offset` is only used to position parse errors.
    pub fn read_lift(r: &mut impl Read, base_offset: u64) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        read_exact(r, &mut header, base_offset)?;
        if &header[..4] != MAGIC {
            return Err(Error::Parse {
                offset: base_offset,
                msg: "missing LIFT magic".into(),
            });
        }
        let word = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let dtype = DType::from_code(word(0)).ok_or_else(|| Error::Parse {
            offset: base_offset + 4,
            msg: format!("unknown dtype code {}", word(0)),
        })?;
        let shape = Shape::new(
            word(1) as usize,
            word(2) as usize,
            word(3) as usize,
            word(4) as usize,
        );
        let mut raw = vec![0u8; shape.len() * dtype.size()];
        read_exact(r, &mut raw, base_offset + HEADER_LEN as u64)?;
        let data = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|b| T::lit(f32::read_le(b) as f64))
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|b| T::lit(f64::read_le(b)))
                .collect(),
        };
        Tensor4::from_vec(shape, data)
    }

    pub fn save_lift(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(f);
        self.write_lift(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load_lift(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_lift(&mut BufReader::new(f), 0)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], offset: u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Parse {
        offset,
        msg: format!("truncated tensor dump: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_fixed() {
        let x = Tensor4::<f32>::from_vec([1, 2, 1, 1], vec![1.0, -2.0]).unwrap();
        let b = x.to_lift_bytes();
        assert_eq!(&b[..4], b"LIFT");
        assert_eq!(&b[4..8], &0u32.to_le_bytes());
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(&b[12..16], &2u32.to_le_bytes());
        assert_eq!(&b[24..28], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24 + 8);
        let y = Tensor4::<f64>::from_vec([1, 1, 1, 1], vec![0.5]).unwrap();
        assert_eq!(&y.to_lift_bytes()[4..8], &1u32.to_le_bytes());
    }

    #[test]
    fn bad_magic_and_truncation_are_parse_errors() {
        let mut b = Tensor4::<f32>::zeros([1, 1, 2, 2]).to_lift_bytes();
        let short = &b[..b.len() - 1];
        assert!(matches!(
            Tensor4::<f32>::read_lift(&mut &short[..], 0),
            Err(Error::Parse { offset: 24, .. })
        ));
        b[0] = b'X';
        assert!(matches!(
            Tensor4::<f32>::read_lift(&mut &b[..], 0),
            Err(Error::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(n in 0usize..3, c in 0usize..4, h in 0usize..4, w in 0usize..4, seed in any::<u64>()) {
            let x = Tensor4::<f64>::from_fn([n, c, h, w], |i| ((i as u64 ^ seed) as f64).sin() * 1e3);
            let y = Tensor4::<f64>::read_lift(&mut &x.to_lift_bytes()[..], 0).unwrap();
            prop_assert_eq!(x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            y.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(x.shape(), y.shape());
        }
    }
}
