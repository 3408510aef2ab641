//! Keypoint trajectories and the two displacement representations built from them:
//! frame-to-frame tracks and reference-anchored displacements.
//!
//! Displacement stacks are indexed by driven frame `n = 1..=N`; slot `n - 1` holds frame `n`.

use crate::pose_io::PoseSequence;
use crate::{Error, Result};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.3;

/// Keypoint coordinates over frames `0..=N` with a confidence-derived validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMap {
    width: usize,
    height: usize,
    keypoints: usize,
    /// `points[n][k]`
    points: Vec<Vec<(f64, f64)>>,
    valid: Vec<Vec<bool>>,
}

impl TrajectoryMap {
    /// Builds a trajectory directly from coordinates; every entry is valid.
    pub fn from_points(width: usize, height: usize, points: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        let valid = points.iter().map(|f| vec![true; f.len()]).collect();
        Self::with_mask(width, height, points, valid)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        points: Vec<Vec<(f64, f64)>>,
        valid: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let keypoints = points.first().map_or(0, Vec::len);
        if points.len() != valid.len() {
            return Err(Error::shape("trajectory mask", &[points.len()], &[valid.len()]));
        }
        for (n, (p, m)) in points.iter().zip(&valid).enumerate() {
            if p.len() != keypoints || m.len() != keypoints {
                return Err(Error::shape(
                    format!("trajectory frame {n}"),
                    &[keypoints, keypoints],
                    &[p.len(), m.len()],
                ));
            }
            if p.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                return Err(Error::Schema(format!("non-finite coordinate in frame {n}")));
            }
        }
        Ok(TrajectoryMap {
            width,
            height,
            keypoints,
            points,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints
    }

    /// Number of driven frames `N`.
    pub fn driven_frames(&self) -> usize {
        self.points.len().saturating_sub(1)
    }

    pub fn point(&self, n: usize, k: usize) -> (f64, f64) {
        self.points[n][k]
    }

    pub fn is_valid(&self, n: usize, k: usize) -> bool {
        self.valid[n][k]
    }

    pub fn valid_count(&self, n: usize) -> usize {
        self.valid[n].iter().filter(|v| **v).count()
    }

    /// Same trajectory with frames in reverse order (the last frame becomes the reference).
    pub fn reversed(&self) -> Self {
        let mut t = self.clone();
        t.points.reverse();
        t.valid.reverse();
        t
    }

    /// Same trajectory shifted by a constant offset on every frame.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut t = self.clone();
        for frame in &mut t.points {
            for p in frame {
                p.0 += dx;
                p.1 += dy;
            }
        }
        t
    }
}

/// Which displacement representation an entry came from; decides the splat anchor frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DisplacementKind {
    /// Consecutive-frame tracks; entry `n` is anchored at frame `n - 1`.
    Track,
    /// Displacement from the reference; every entry is anchored at frame 0.
    Reference,
}

/// Per driven frame, per keypoint displacement with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Displacements {
    kind: DisplacementKind,
    /// `entries[n - 1][k]`
    entries: Vec<Vec<(f64, f64)>>,
    valid: Vec<Vec<bool>>,
}

pub type TrackMatrix = Displacements;
pub type RefDisplacement = Displacements;

impl Displacements {
    pub fn kind(&self) -> DisplacementKind {
        self.kind
    }

    pub fn driven_frames(&self) -> usize {
        self.entries.len()
    }

    pub fn keypoint_count(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    /// Entry for driven frame `n` (1-based) and keypoint `k`, `None` if masked.
    pub fn get(&self, n: usize, k: usize) -> Option<(f64, f64)> {
        let i = n.checked_sub(1)?;
        if *self.valid.get(i)?.get(k)? {
            Some(self.entries[i][k])
        } else {
            None
        }
    }

    /// Raw entry regardless of the mask.
    pub fn raw(&self, n: usize, k: usize) -> (f64, f64) {
        self.entries[n - 1][k]
    }

    pub fn is_valid(&self, n: usize, k: usize) -> bool {
        self.valid[n - 1][k]
    }

    /// Frame the entry's splat is centred on.
    pub fn anchor_frame(&self, n: usize) -> usize {
        match self.kind {
            DisplacementKind::Track => n - 1,
            DisplacementKind::Reference => 0,
        }
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut d = self.clone();
        for frame in &mut d.entries {
            for e in frame {
                e.0 *= a;
                e.1 *= a;
            }
        }
        d
    }

    /// Pointwise `a * self + b * other`; masks are intersected.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.kind != other.kind
            || self.entries.len() != other.entries.len()
            || self.keypoint_count() != other.keypoint_count()
        {
            return Err(Error::shape(
                "displacement combine",
                &[self.entries.len(), self.keypoint_count()],
                &[other.entries.len(), other.keypoint_count()],
            ));
        }
        let mut d = self.clone();
        for (i, frame) in d.entries.iter_mut().enumerate() {
            for (k, e) in frame.iter_mut().enumerate() {
                let o = other.entries[i][k];
                *e = (a * e.0 + b * o.0, a * e.1 + b * o.1);
                d.valid[i][k] &= other.valid[i][k];
            }
        }
        Ok(d)
    }
}

/// Gates every keypoint by confidence; coordinates are copied verbatim.
pub fn build_trajectory(seq: &PoseSequence, conf_threshold: f64) -> Result<TrajectoryMap> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::Param(format!(
            "conf_threshold must be in [0, 1], got {conf_threshold}"
        )));
    }
    let points = seq
        .frames()
        .iter()
        .map(|f| f.iter().map(|kp| (kp.x, kp.y)).collect())
        .collect();
    let valid = seq
        .frames()
        .iter()
        .map(|f| f.iter().map(|kp| kp.conf >= conf_threshold).collect())
        .collect();
    TrajectoryMap::with_mask(seq.width(), seq.height(), points, valid)
}

/// Consecutive-frame displacements `p[n] - p[n-1]` for `n = 1..=N`.
pub fn track_matrix(traj: &TrajectoryMap) -> TrackMatrix {
    displacements(traj, DisplacementKind::Track, |n| n - 1)
}

/// Reference-anchored displacements `p[n] - p[0]` for `n = 1..=N`.
pub fn reference_displacements(traj: &TrajectoryMap) -> RefDisplacement {
    displacements(traj, DisplacementKind::Reference, |_| 0)
}

fn displacements(
    traj: &TrajectoryMap,
    kind: DisplacementKind,
    base: impl Fn(usize) -> usize,
) -> Displacements {
    let n_frames = traj.driven_frames();
    let mut entries = Vec::with_capacity(n_frames);
    let mut valid = Vec::with_capacity(n_frames);
    for n in 1..=n_frames {
        let b = base(n);
        let (e, m): (Vec<_>, Vec<_>) = (0..traj.keypoints)
            .map(|k| {
                let (x1, y1) = traj.points[n][k];
                let (x0, y0) = traj.points[b][k];
                ((x1 - x0, y1 - y0), traj.valid[n][k] && traj.valid[b][k])
            })
            .unzip();
        entries.push(e);
        valid.push(m);
    }
    Displacements {
        kind,
        entries,
        valid,
    }
}
