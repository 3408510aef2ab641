//! Reference-point correspondence: point embeddings sampled from a feature map at
//! the reference keypoints, placed along each keypoint's trajectory per frame.

mod features;

pub use features::{
    load_features, read_features, save_features, write_features, FeatureMap, FeatureProvider, FileProvider,
    SyntheticProvider,
};

use crate::trajectory::TrajectoryMap;
use crate::{Error, Result};

/// Snaps an image coordinate to its nearest in-bounds pixel, then maps that pixel
/// to the cell of a `grid_len`-wide grid containing it. Pixels that coincide at full
/// resolution therefore coincide at every coarser grid.
fn to_grid(coord: f64, image_len: usize, grid_len: usize) -> usize {
    let pixel = coord.round().clamp(0.0, (image_len - 1) as f64) as usize;
    (pixel * grid_len / image_len).min(grid_len - 1)
}

/// One embedding per keypoint, taken at the keypoint's reference-frame position.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEmbeddings {
    dp: usize,
    vectors: Vec<Vec<f64>>,
    valid: Vec<bool>,
}

impl PointEmbeddings {
    pub fn new(dp: usize, vectors: Vec<Vec<f64>>, valid: Vec<bool>) -> Result<Self> {
        if vectors.len() != valid.len() || vectors.iter().any(|v| v.len() != dp) {
            return Err(Error::shape("point embeddings", &[valid.len(), dp], &[vectors.len()]));
        }
        Ok(PointEmbeddings { dp, vectors, valid })
    }

    pub fn dp(&self) -> usize {
        self.dp
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, k: usize) -> Option<&[f64]> {
        self.valid[k].then(|| self.vectors[k].as_slice())
    }
}

pub fn extract_point_embeddings(features: &FeatureMap, traj: &TrajectoryMap) -> Result<PointEmbeddings> {
    if traj.width() == 0 || traj.height() == 0 {
        return Err(Error::Dimension("trajectory image size is zero".into()));
    }
    let k = traj.keypoint_count();
    let mut vectors = Vec::with_capacity(k);
    let mut valid = Vec::with_capacity(k);
    for k in 0..k {
        let (x, y) = traj.point(0, k);
        let fx = to_grid(x, traj.width(), features.width());
        let fy = to_grid(y, traj.height(), features.height());
        vectors.push(features.column(fx, fy));
        valid.push(traj.is_valid(0, k));
    }
    PointEmbeddings::new(features.dp(), vectors, valid)
}

/// One frame of a sparse correspondence map: a few `(x, y, k)` columns, zero elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceFrame {
    pub width: usize,
    pub height: usize,
    pub dp: usize,
    /// `(x, y, keypoint, embedding)` in ascending keypoint order.
    pub columns: Vec<(usize, usize, usize, Vec<f64>)>,
}

impl CorrespondenceFrame {
    /// Dense `dp x height x width` array, channel-major.
    pub fn to_dense(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; self.dp * plane];
        for (x, y, _, emb) in &self.columns {
            for (c, v) in emb.iter().enumerate() {
                out[c * plane + y * self.width + x] = *v;
            }
        }
        out
    }

    /// Pixels with at least one nonzero channel.
    pub fn nonzero_pixels(&self) -> usize {
        self.columns.iter().filter(|(_, _, _, e)| e.iter().any(|v| *v != 0.0)).count()
    }
}

/// Correspondence map for driven frames `1..=N` at one resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceStack {
    pub width: usize,
    pub height: usize,
    pub dp: usize,
    pub frames: Vec<CorrespondenceFrame>,
}

/// Places each valid embedding at its keypoint's rounded position, per driven frame,
/// on a `width x height` grid. Positions are re-quantized from the trajectory onto
/// that grid, so values are copied and never pooled. Collisions keep the lowest index.
pub fn rescale_correspondence(
    emb: &PointEmbeddings,
    traj: &TrajectoryMap,
    height: usize,
    width: usize,
) -> Result<CorrespondenceStack> {
    if height == 0 || width == 0 {
        return Err(Error::Dimension(format!("correspondence level {width}x{height}")));
    }
    if height > traj.height() || width > traj.width() {
        return Err(Error::Dimension(format!(
            "level {width}x{height} exceeds image {}x{}",
            traj.width(),
            traj.height()
        )));
    }
    if emb.len() != traj.keypoint_count() {
        return Err(Error::shape("embeddings vs trajectory", &[traj.keypoint_count()], &[emb.len()]));
    }
    let frames = (1..=traj.driven_frames())
        .map(|n| {
            let mut taken = std::collections::HashSet::new();
            let mut columns = Vec::new();
            for k in 0..emb.len() {
                let Some(e) = emb.get(k) else { continue };
                if !traj.is_valid(n, k) {
                    continue;
                }
                let (x, y) = traj.point(n, k);
                let (gx, gy) = (to_grid(x, traj.width(), width), to_grid(y, traj.height(), height));
                if taken.insert((gx, gy)) {
                    columns.push((gx, gy, k, e.to_vec()));
                }
            }
            CorrespondenceFrame {
                width,
                height,
                dp: emb.dp(),
                columns,
            }
        })
        .collect();
    Ok(CorrespondenceStack {
        width,
        height,
        dp: emb.dp(),
        frames,
    })
}

/// Full-resolution correspondence map.
pub fn build_correspondence_map(emb: &PointEmbeddings, traj: &TrajectoryMap) -> Result<CorrespondenceStack> {
    rescale_correspondence(emb, traj, traj.height(), traj.width())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Target pixel whose descriptor has the highest cosine similarity to the source
/// descriptor at `src_point`; ties go to the first pixel in row-major order.
pub fn retrieve_point(src: &FeatureMap, src_point: (usize, usize), tgt: &FeatureMap) -> Result<(usize, usize)> {
    if src.dp() != tgt.dp() {
        return Err(Error::shape("retrieval channels", &[src.dp()], &[tgt.dp()]));
    }
    let (sx, sy) = src_point;
    if sx >= src.width() || sy >= src.height() {
        return Err(Error::Index {
            index: sy * src.width() + sx,
            len: src.width() * src.height(),
        });
    }
    let query = src.column(sx, sy);
    if query.iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateFeature);
    }
    let mut best = (f64::NEG_INFINITY, (0, 0));
    for y in 0..tgt.height() {
        for x in 0..tgt.width() {
            let s = cosine(&query, &tgt.column(x, y));
            if s > best.0 {
                best = (s, (x, y));
            }
        }
    }
    Ok(best.1)
}
