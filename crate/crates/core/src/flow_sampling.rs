//! Watershed-style sampling of sparse flow from a dense forward flow: motion
//! edges from Sobel gradients, Euclidean distance to the nearest edge, then
//! non-maximum suppression over a `K_f x K_f` window.

use crate::motion_field::{FlowSample, SparseFlow};
use crate::pose_io::FlowField;
use crate::{Error, Result};

pub const DEFAULT_EDGE_THRESHOLD: f64 = 1.0;
pub const DEFAULT_KERNEL: usize = 5;

/// Non-negative edge strength per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: usize,
    pub height: usize,
    pub strength: Vec<f64>,
}

/// Binary motion-edge mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
}

impl EdgeMask {
    pub fn new(width: usize, height: usize, edges: Vec<bool>) -> Result<Self> {
        if edges.len() != width * height {
            return Err(Error::shape("edge mask", &[width * height], &[edges.len()]));
        }
        Ok(EdgeMask { width, height, edges })
    }

    pub fn count(&self) -> usize {
        self.edges.iter().filter(|e| **e).count()
    }
}

/// Distance (pixels) from each pixel to the nearest edge pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMap {
    pub width: usize,
    pub height: usize,
    pub distance: Vec<f64>,
}

impl DistanceMap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.distance[y * self.width + x]
    }
}

/// Sobel gradient magnitude of the flow: per-channel 3x3 Sobel (scaled by 1/8 so a
/// unit ramp gives 1), all four derivatives combined by Euclidean norm. Borders replicate.
pub fn sobel_magnitude(flow: &FlowField) -> EdgeMap {
    let (w, h) = (flow.width(), flow.height());
    let mut strength = vec![0.0; w * h];
    for c in 0..2 {
        let plane = flow.channel(c);
        let at = |x: isize, y: isize| {
            let xc = x.clamp(0, w as isize - 1) as usize;
            let yc = y.clamp(0, h as isize - 1) as usize;
            plane[yc * w + xc]
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
                let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                    - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
                strength[y as usize * w + x as usize] += (gx / 8.0).powi(2) + (gy / 8.0).powi(2);
            }
        }
    }
    strength.iter_mut().for_each(|s| *s = s.sqrt());
    EdgeMap { width: w, height: h, strength }
}

impl EdgeMap {
    /// Edge wherever strength strictly exceeds `threshold`.
    pub fn binarize(&self, threshold: f64) -> EdgeMask {
        EdgeMask {
            width: self.width,
            height: self.height,
            edges: self.strength.iter().map(|s| *s > threshold).collect(),
        }
    }
}

pub fn flow_edges(flow: &FlowField, edge_threshold: f64) -> Result<EdgeMask> {
    if !(edge_threshold >= 0.0) {
        return Err(Error::Param(format!("edge threshold must be >= 0, got {edge_threshold}")));
    }
    Ok(sobel_magnitude(flow).binarize(edge_threshold))
}

/// Exact squared Euclidean distance transform of a 1-D sampled function
/// (lower envelope of parabolas). `f` holds `0` at sites and `None` elsewhere.
fn edt_1d(f: &[Option<i64>], out: &mut [Option<i64>]) {
    let n = f.len();
    let sites: Vec<usize> = (0..n).filter(|&q| f[q].is_some()).collect();
    if sites.is_empty() {
        out.iter_mut().for_each(|o| *o = None);
        return;
    }
    let val = |q: usize| f[q].unwrap();
    // intersection abscissa of parabolas rooted at p and q (p < q), as a rational compared exactly
    let sep = |p: usize, q: usize| -> f64 {
        let (p, q) = (p as i64, q as i64);
        ((val(q as usize) + q * q) - (val(p as usize) + p * p)) as f64 / (2 * (q - p)) as f64
    };
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    for &q in &sites {
        while let Some(&p) = v.last() {
            if sep(p, q) <= *z.last().unwrap() {
                v.pop();
                z.pop();
            } else {
                break;
            }
        }
        if v.is_empty() {
            z.push(f64::NEG_INFINITY);
        } else {
            z.push(sep(*v.last().unwrap(), q));
        }
        v.push(q);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as i64 - v[k] as i64;
        *o = Some(d * d + val(v[k]));
    }
}

/// Squared distances to the nearest `true` pixel, exact in integers; `None` when there is no edge.
pub(crate) fn squared_edt(mask: &EdgeMask) -> Option<Vec<i64>> {
    let (w, h) = (mask.width, mask.height);
    if mask.count() == 0 {
        return None;
    }
    let mut cols: Vec<Option<i64>> = vec![None; w * h];
    let mut buf_in = vec![None; h];
    let mut buf_out = vec![None; h];
    for x in 0..w {
        for (y, b) in buf_in.iter_mut().enumerate() {
            *b = mask.edges[y * w + x].then_some(0);
        }
        edt_1d(&buf_in, &mut buf_out);
        for y in 0..h {
            cols[y * w + x] = buf_out[y];
        }
    }
    let mut out = vec![0i64; w * h];
    let mut row_out = vec![None; w];
    for y in 0..h {
        edt_1d(&cols[y * w..(y + 1) * w], &mut row_out);
        for x in 0..w {
            out[y * w + x] = row_out[x].expect("mask has at least one edge");
        }
    }
    Some(out)
}

/// Euclidean distance to the nearest edge pixel.
///
/// With no edge pixels at all, each pixel instead gets its distance to the
/// nearest image border row/column (so border pixels are 0).
pub fn watershed_distance_map(edges: &EdgeMask) -> DistanceMap {
    let (w, h) = (edges.width, edges.height);
    let distance = match squared_edt(edges) {
        Some(sq) => sq.into_iter().map(|d| (d as f64).sqrt()).collect(),
        None => (0..h)
            .flat_map(|y| (0..w).map(move |x| x.min(y).min(w - 1 - x).min(h - 1 - y) as f64))
            .collect(),
    };
    DistanceMap { width: w, height: h, distance }
}

/// Local maxima of the distance map.
///
/// Pixel `p` survives when, for every other `q` in its clipped `K_f x K_f` window,
/// `d(q) < d(p)`, or `d(q) == d(p)` and `q` comes later in row-major order. Pixels
/// with zero distance and pixels on the outermost 1-px border are never selected.
/// Returns row-major `(x, y)` positions.
pub fn nms_peaks(dist: &DistanceMap, kernel: usize) -> Result<Vec<(usize, usize)>> {
    if kernel < 3 || kernel.is_multiple_of(2) {
        return Err(Error::Param(format!("K_f must be odd and >= 3, got {kernel}")));
    }
    let (w, h) = (dist.width, dist.height);
    let r = (kernel / 2) as isize;
    let mut peaks = Vec::new();
    if w < 3 || h < 3 {
        return Ok(peaks);
    }
    for y in 1..h - 1 {
        'px: for x in 1..w - 1 {
            let i = y * w + x;
            let d = dist.distance[i];
            if !(d > 0.0) {
                continue;
            }
            for qy in (y as isize - r).max(0)..=(y as isize + r).min(h as isize - 1) {
                for qx in (x as isize - r).max(0)..=(x as isize + r).min(w as isize - 1) {
                    let j = qy as usize * w + qx as usize;
                    if j == i {
                        continue;
                    }
                    let dq = dist.distance[j];
                    if dq > d || (dq == d && j < i) {
                        continue 'px;
                    }
                }
            }
            peaks.push((x, y));
        }
    }
    Ok(peaks)
}

/// NMS peaks of the distance map, each carrying the dense flow vector at that pixel.
pub fn sample_keypoints_nms(dist: &DistanceMap, kernel: usize, flow: &FlowField) -> Result<SparseFlow> {
    if (dist.width, dist.height) != (flow.width(), flow.height()) {
        return Err(Error::shape(
            "distance map vs flow",
            &[flow.height(), flow.width()],
            &[dist.height, dist.width],
        ));
    }
    let samples = nms_peaks(dist, kernel)?
        .into_iter()
        .map(|(x, y)| {
            let (u, v) = flow.get(x, y);
            FlowSample { x, y, u, v }
        })
        .collect();
    SparseFlow::new(flow.width(), flow.height(), samples)
}

/// Full watershed sampling pipeline: edges, distance map, NMS.
pub fn sample_sparse_flow(flow: &FlowField, edge_threshold: f64, kernel: usize) -> Result<SparseFlow> {
    let edges = flow_edges(flow, edge_threshold)?;
    let dist = watershed_distance_map(&edges);
    sample_keypoints_nms(&dist, kernel, flow)
}
