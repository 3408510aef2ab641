use crate::pose_io::{FlowField, MotionFieldStack};
use crate::trajectory::{Displacements, TrajectoryMap};
use crate::{Error, Result};

pub const DEFAULT_SIGMA: f64 = 3.0;

/// Rounds a (possibly off-screen) coordinate to the nearest in-bounds pixel.
pub(crate) fn snap(x: f64, y: f64, width: usize, height: usize) -> (usize, usize) {
    let cx = x.round().clamp(0.0, (width - 1) as f64) as usize;
    let cy = y.round().clamp(0.0, (height - 1) as f64) as usize;
    (cx, cy)
}

/// Gaussian-splats every valid displacement into a dense field per driven frame.
///
/// Splats are peak-normalised (weight 1 at the centre), truncated to a disc of
/// radius `ceil(3 sigma)`, and summed where they overlap.
pub fn rasterize_sparse_field(
    disp: &Displacements,
    traj: &TrajectoryMap,
    width: usize,
    height: usize,
    sigma: f64,
) -> Result<MotionFieldStack> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("field size {width}x{height}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Param(format!("sigma must be > 0, got {sigma}")));
    }
    if disp.driven_frames() != traj.driven_frames() || disp.keypoint_count() != traj.keypoint_count() {
        return Err(Error::shape(
            "displacements vs trajectory",
            &[traj.driven_frames(), traj.keypoint_count()],
            &[disp.driven_frames(), disp.keypoint_count()],
        ));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let inv_two_var = 1.0 / (2.0 * sigma * sigma);
    let frames = (1..=disp.driven_frames())
        .map(|n| {
            let mut field = FlowField::zeros(width, height);
            let anchor = disp.anchor_frame(n);
            for k in 0..disp.keypoint_count() {
                let Some((du, dv)) = disp.get(n, k) else { continue };
                let (px, py) = traj.point(anchor, k);
                let (cx, cy) = snap(px, py, width, height);
                for oy in -radius..=radius {
                    let y = cy as i64 + oy;
                    if y < 0 || y >= height as i64 {
                        continue;
                    }
                    for ox in -radius..=radius {
                        let x = cx as i64 + ox;
                        let d2 = ox * ox + oy * oy;
                        if x < 0 || x >= width as i64 || d2 > radius * radius {
                            continue;
                        }
                        let wgt = (-(d2 as f64) * inv_two_var).exp();
                        field.add_at(x as usize, y as usize, (wgt * du, wgt * dv));
                    }
                }
            }
            field
        })
        .collect();
    MotionFieldStack::new(width, height, frames)
}
