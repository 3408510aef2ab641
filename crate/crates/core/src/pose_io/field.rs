use crate::{Error, Result};

/// One dense two-channel displacement field, stored channel-major (u plane then v plane).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![0.0; 2 * width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        let mut f = Self::zeros(width, height);
        let n = width * height;
        f.data[..n].fill(u);
        f.data[n..].fill(v);
        f
    }

    /// Builds a field from separate u and v planes (row-major, `height * width` each).
    pub fn from_planes(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if u.len() != n || v.len() != n {
            return Err(Error::shape("flow planes", &[n, n], &[u.len(), v.len()]));
        }
        if u.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite flow value".into()));
        }
        let mut data = u;
        data.extend(v);
        Ok(FlowField {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> Self {
        let mut field = Self::zeros(width, height);
        for y in 0..height {
            for x in 0..width {
                field.set(x, y, f(x, y));
            }
        }
        field
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.data[i], self.data[self.width * self.height + i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, (u, v): (f64, f64)) {
        let i = y * self.width + x;
        let n = self.width * self.height;
        self.data[i] = u;
        self.data[n + i] = v;
    }

    #[inline]
    pub fn add_at(&mut self, x: usize, y: usize, (u, v): (f64, f64)) {
        let i = y * self.width + x;
        let n = self.width * self.height;
        self.data[i] += u;
        self.data[n + i] += v;
    }

    pub fn u(&self) -> &[f64] {
        &self.data[..self.width * self.height]
    }

    pub fn v(&self) -> &[f64] {
        &self.data[self.width * self.height..]
    }

    /// Channel plane 0 (u) or 1 (v).
    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Channel-major `2 * H * W` view.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max_magnitude(&self) -> f64 {
        self.u()
            .iter()
            .zip(self.v())
            .map(|(u, v)| u.hypot(*v))
            .fold(0.0, f64::max)
    }

    /// Fraction of pixels whose vector is not exactly zero.
    pub fn nonzero_fraction(&self) -> f64 {
        let n = self.width * self.height;
        if n == 0 {
            return 0.0;
        }
        let nz = self
            .u()
            .iter()
            .zip(self.v())
            .filter(|(u, v)| **u != 0.0 || **v != 0.0)
            .count();
        nz as f64 / n as f64
    }

    pub fn scaled(&self, a: f64) -> Self {
        FlowField {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|x| x * a).collect(),
        }
    }
}

/// A stack of dense fields sharing one size: `frames x 2 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionFieldStack {
    width: usize,
    height: usize,
    frames: Vec<FlowField>,
}

impl MotionFieldStack {
    pub fn new(width: usize, height: usize, frames: Vec<FlowField>) -> Result<Self> {
        for (i, f) in frames.iter().enumerate() {
            if f.width != width || f.height != height {
                return Err(Error::shape(
                    format!("motion field frame {i}"),
                    &[height, width],
                    &[f.height, f.width],
                ));
            }
        }
        Ok(MotionFieldStack {
            width,
            height,
            frames,
        })
    }

    pub fn zeros(frames: usize, width: usize, height: usize) -> Self {
        MotionFieldStack {
            width,
            height,
            frames: vec![FlowField::zeros(width, height); frames],
        }
    }

    pub fn single(field: FlowField) -> Self {
        MotionFieldStack {
            width: field.width,
            height: field.height,
            frames: vec![field],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[FlowField] {
        &self.frames
    }

    pub fn frame(&self, index: usize) -> Result<&FlowField> {
        self.frames.get(index).ok_or(Error::Index {
            index,
            len: self.frames.len(),
        })
    }

    pub fn into_frames(self) -> Vec<FlowField> {
        self.frames
    }

    /// Shape as `[frames, 2, H, W]`.
    pub fn shape(&self) -> [usize; 4] {
        [self.frames.len(), 2, self.height, self.width]
    }
}
