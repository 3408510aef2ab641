//! Middlebury `.flo` reader/writer.
//!
//! Layout (little-endian): `f32` magic 202021.25, `i32` width, `i32` height,
//! then `height` rows of `width` interleaved `(u, v)` `f32` pairs.

use std::io::{self, Read, Write};
use std::path::Path;

use super::FlowField;
use crate::{Error, Result};

pub const FLO_MAGIC: f32 = 202021.25;

/// Upper bound on either dimension; guards against allocating garbage sizes.
const MAX_DIM: i32 = 1 << 16;

pub fn write_flo<W: Write>(field: &FlowField, mut out: W) -> io::Result<()> {
    let (w, h) = (field.width(), field.height());
    let mut buf = Vec::with_capacity(12 + 8 * w * h);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(w as i32).to_le_bytes());
    buf.extend_from_slice(&(h as i32).to_le_bytes());
    for y in 0..h {
        for x in 0..w {
            let (u, v) = field.get(x, y);
            buf.extend_from_slice(&(u as f32).to_le_bytes());
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}

/// Reads a `.flo` stream. A short payload surfaces as [`io::ErrorKind::UnexpectedEof`].
pub fn read_flo<R: Read>(mut input: R, source: &Path) -> Result<FlowField> {
    let mut header = [0u8; 12];
    input
        .read_exact(&mut header)
        .map_err(|e| Error::io(source, e))?;
    let magic = f32::from_le_bytes(header[0..4].try_into().unwrap());
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!(
            "bad .flo magic {magic} in {}",
            source.display()
        )));
    }
    let w = i32::from_le_bytes(header[4..8].try_into().unwrap());
    let h = i32::from_le_bytes(header[8..12].try_into().unwrap());
    if !(0..=MAX_DIM).contains(&w) || !(0..=MAX_DIM).contains(&h) {
        return Err(Error::Format(format!(
            "implausible .flo dimensions {w}x{h} in {}",
            source.display()
        )));
    }
    let (w, h) = (w as usize, h as usize);
    let mut payload = vec![0u8; 8 * w * h];
    input
        .read_exact(&mut payload)
        .map_err(|e| Error::io(source, e))?;
    let mut u = Vec::with_capacity(w * h);
    let mut v = Vec::with_capacity(w * h);
    for pair in payload.chunks_exact(8) {
        u.push(f32::from_le_bytes(pair[0..4].try_into().unwrap()) as f64);
        v.push(f32::from_le_bytes(pair[4..8].try_into().unwrap()) as f64);
    }
    FlowField::from_planes(w, h, u, v)
}

pub fn save_flow(field: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_flo(field, io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_flo(io::BufReader::new(file), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(field: &FlowField) -> Vec<u8> {
        let mut buf = Vec::new();
        write_flo(field, &mut buf).unwrap();
        buf
    }

    #[test]
    fn two_by_two_is_44_bytes() {
        let f = FlowField::constant(2, 2, 1.0, -1.0);
        let bytes = encode(&f);
        assert_eq!(bytes.len(), 44);
        assert_eq!(&bytes[0..4], &FLO_MAGIC.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[16..20], &(-1.0f32).to_le_bytes());
    }

    #[test]
    fn zero_magic_is_format_error() {
        let mut bytes = encode(&FlowField::zeros(2, 2));
        bytes[0..4].copy_from_slice(&0.0f32.to_le_bytes());
        let err = read_flo(&bytes[..], Path::new("mem")).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn truncated_payload_is_io_error() {
        let bytes = encode(&FlowField::zeros(3, 3));
        let err = read_flo(&bytes[..bytes.len() - 3], Path::new("mem")).unwrap_err();
        match err {
            Error::Io { source, .. } => assert_eq!(source.kind(), io::ErrorKind::UnexpectedEof),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn row_major_interleaving() {
        let f = FlowField::from_fn(3, 2, |x, y| (x as f64, 10.0 + y as f64));
        let bytes = encode(&f);
        // pixel (x=2, y=0) is the third pair
        let off = 12 + 2 * 8;
        assert_eq!(&bytes[off..off + 4], &2.0f32.to_le_bytes());
        assert_eq!(&bytes[off + 4..off + 8], &10.0f32.to_le_bytes());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(w in 1usize..10, h in 1usize..10, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..w * h).map(|_| (rng.random::<f32>() * 100.0 - 50.0) as f64).collect();
            let v: Vec<f64> = (0..w * h).map(|_| f32::from_bits(rng.random::<u32>() & 0x7f7f_ffff) as f64).collect();
            let f = FlowField::from_planes(w, h, u, v).unwrap();
            let bytes = encode(&f);
            let back = read_flo(&bytes[..], Path::new("mem")).unwrap();
            for (a, b) in f.as_slice().iter().zip(back.as_slice()) {
                prop_assert_eq!((*a as f32).to_bits(), (*b as f32).to_bits());
            }
            prop_assert_eq!(encode(&back), bytes);
        }
    }
}
