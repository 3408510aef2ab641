use std::io::{BufRead, Write};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::motion_field::ReferenceImage;
use crate::{Error, Result};

/// Dense descriptor map: `dp` channels over an `h x w` grid, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dp: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(dp: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if dp == 0 {
            return Err(Error::Dimension("feature map needs at least one channel".into()));
        }
        if data.len() != dp * height * width {
            return Err(Error::shape("feature map", &[dp, height, width], &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite feature value".into()));
        }
        Ok(FeatureMap { dp, height, width, data })
    }

    pub fn from_fn(dp: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dp * height * width);
        for c in 0..dp {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(dp, height, width, data)
    }

    pub fn dp(&self) -> usize {
        self.dp
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Descriptor at pixel `(x, y)`.
    pub fn column(&self, x: usize, y: usize) -> Vec<f64> {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        (0..self.dp).map(|c| self.data[c * plane + i]).collect()
    }

    pub fn scaled(&self, a: f64) -> Self {
        FeatureMap {
            data: self.data.iter().map(|v| v * a).collect(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FeatureHeader {
    dp: usize,
    h: usize,
    w: usize,
}

/// Writes a feature file: one JSON header line `{"dp":..,"h":..,"w":..}` then the
/// raw little-endian `f32` payload, channel-major.
pub fn write_features<W: Write>(map: &FeatureMap, mut out: W) -> std::io::Result<()> {
    let header = serde_json::to_string(&FeatureHeader {
        dp: map.dp,
        h: map.height,
        w: map.width,
    })
    .expect("header serializes");
    out.write_all(header.as_bytes())?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(4 * map.data.len());
    for v in &map.data {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn read_features<R: BufRead>(mut input: R, source: &Path) -> Result<FeatureMap> {
    let mut line = String::new();
    input.read_line(&mut line).map_err(|e| Error::io(source, e))?;
    let header: FeatureHeader = serde_json::from_str(line.trim_end()).map_err(|e| Error::Parse {
        field: "feature header".into(),
        message: e.to_string(),
    })?;
    let n = header.dp * header.h * header.w;
    let mut payload = vec![0u8; 4 * n];
    input.read_exact(&mut payload).map_err(|e| Error::io(source, e))?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeatureMap::new(header.dp, header.h, header.w, data)
}

pub fn save_features(map: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_features(map, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(std::io::BufReader::new(file), path)
}

/// Source of semantic descriptors for a reference image.
pub trait FeatureProvider {
    fn features(&self, image: &ReferenceImage) -> Result<FeatureMap>;
}

/// Gives every pixel a fixed Gaussian random code (seeded), so columns are pairwise
/// non-parallel with probability one. Image content is ignored; only its size matters.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticProvider {
    pub dp: usize,
    pub seed: u64,
}

impl FeatureProvider for SyntheticProvider {
    fn features(&self, image: &ReferenceImage) -> Result<FeatureMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.dp * image.width() * image.height();
        let data = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        FeatureMap::new(self.dp, image.height(), image.width(), data)
    }
}

/// Features exported by an external extractor, read from a feature file.
#[derive(Debug, Clone)]
pub struct FileProvider {
    pub path: std::path::PathBuf,
}

impl FeatureProvider for FileProvider {
    fn features(&self, _image: &ReferenceImage) -> Result<FeatureMap> {
        load_features(&self.path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let map = FeatureMap::from_fn(3, 4, 5, |c, y, x| (c * 100 + y * 10 + x) as f64 * 0.5).unwrap();
        let mut buf = Vec::new();
        write_features(&map, &mut buf).unwrap();
        let header_len = buf.iter().position(|b| *b == b'\n').unwrap() + 1;
        assert_eq!(buf.len(), header_len + 4 * 60);
        assert_eq!(std::str::from_utf8(&buf[..header_len - 1]).unwrap(), r#"{"dp":3,"h":4,"w":5}"#);
        let back = read_features(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, map);
    }

    #[test]
    fn truncated_payload_errors() {
        let map = FeatureMap::from_fn(2, 2, 2, |_, _, _| 1.0).unwrap();
        let mut buf = Vec::new();
        write_features(&map, &mut buf).unwrap();
        assert!(matches!(read_features(&buf[..buf.len() - 1], Path::new("mem")), Err(Error::Io { .. })));
    }

    #[test]
    fn synthetic_provider_is_deterministic() {
        let img = ReferenceImage::uniform(6, 4, [0.0; 3]);
        let p = SyntheticProvider { dp: 8, seed: 3 };
        let a = p.features(&img).unwrap();
        assert_eq!(a, p.features(&img).unwrap());
        assert_eq!((a.dp(), a.height(), a.width()), (8, 4, 6));
    }
}
