use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dift::DenoiserFeatureProvider;
use super::latent::encode_latent;
use super::pipeline::{correspondence_tensor, GuidancePipeline};
use super::tensor::Tensor;
use crate::correspondence::{extract_point_embeddings, rescale_correspondence, FeatureProvider};
use crate::motion_field::{
    dense_field_stack, rasterize_sparse_field, HarmonicPropagator, PropagatorParams, ReferenceImage,
};
use crate::pose_io::{FlowField, Keypoint, PoseSequence};
use crate::trajectory::{build_trajectory, reference_displacements, track_matrix};
use crate::{Error, Result};

/// Parameters of the bundled synthetic set: short clips of a rotating, drifting
/// disc figure whose joints are the keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub clips: usize,
    /// Frames per clip including the reference frame.
    pub frames_per_clip: usize,
    pub keypoints: usize,
    pub seed: u64,
    pub sigma: f64,
    pub beta: f64,
    pub conf_threshold: f64,
    /// Noise level at which descriptors are read from the denoiser.
    pub feature_timestep: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            clips: 4,
            frames_per_clip: 5,
            keypoints: 6,
            seed: 0,
            sigma: crate::motion_field::DEFAULT_SIGMA,
            beta: PropagatorParams::default().beta,
            conf_threshold: crate::trajectory::DEFAULT_CONF_THRESHOLD,
            feature_timestep: 0,
        }
    }
}

/// A pose sequence and its rendered frames.
#[derive(Debug, Clone)]
pub struct SyntheticClip {
    pub poses: PoseSequence,
    pub frames: Vec<ReferenceImage>,
}

/// Everything needed to train on one driven frame.
#[derive(Debug, Clone)]
pub struct TrainSample {
    /// `1 x C x h x w` clean latent of the driven frame.
    pub z0: Tensor,
    pub sparse: FlowField,
    pub dense: FlowField,
    /// `1 x D_p x h_l x w_l` per level.
    pub points: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub samples: Vec<TrainSample>,
}

impl SyntheticDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn hue_rgb(h: f64) -> [f64; 3] {
    let f = |n: f64| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}

/// Draws one clip. Joints sit on a ring around a body disc; the figure drifts and rotates.
pub fn synthetic_clip<R: Rng>(width: usize, height: usize, keypoints: usize, frames: usize, rng: &mut R) -> Result<SyntheticClip> {
    if keypoints == 0 || frames < 2 {
        return Err(Error::Param("a clip needs keypoints and at least two frames".into()));
    }
    let (w, h) = (width as f64, height as f64);
    let centre = (w / 2.0 + rng.random_range(-4.0..4.0), h / 2.0 + rng.random_range(-4.0..4.0));
    let vel = (rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5));
    let omega: f64 = rng.random_range(-0.2..0.2);
    let radius = 0.2 * w.min(h);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let background = [rng.random_range(0.1..0.4), rng.random_range(0.1..0.4), rng.random_range(0.1..0.4)];
    let body = [rng.random_range(0.5..0.8); 3];
    let joint_r = (0.05 * w.min(h)).max(1.5);

    let mut poses = Vec::with_capacity(frames);
    let mut images = Vec::with_capacity(frames);
    for n in 0..frames {
        let t = n as f64;
        let c = (centre.0 + vel.0 * t, centre.1 + vel.1 * t);
        let joints: Vec<(f64, f64)> = (0..keypoints)
            .map(|k| {
                let a = phase + omega * t + std::f64::consts::TAU * k as f64 / keypoints as f64;
                (c.0 + radius * a.cos(), c.1 + radius * a.sin())
            })
            .collect();
        let kps = joints
            .iter()
            .map(|&(x, y)| {
                let conf = if rng.random_bool(0.1) { 0.1 } else { 0.95 };
                Keypoint::new(x, y, conf)
            })
            .collect();
        poses.push(kps);
        images.push(ReferenceImage::from_fn(width, height, |x, y| {
            let (px, py) = (x as f64, y as f64);
            for (k, &(jx, jy)) in joints.iter().enumerate() {
                if (px - jx).powi(2) + (py - jy).powi(2) <= joint_r * joint_r {
                    return hue_rgb(k as f64 / keypoints as f64);
                }
            }
            if (px - c.0).powi(2) + (py - c.1).powi(2) <= (0.7 * radius).powi(2) {
                body
            } else {
                background
            }
        }));
    }
    Ok(SyntheticClip {
        poses: PoseSequence::new(width, height, keypoints, poses)?,
        frames: images,
    })
}

/// One training sample per driven frame: the frame's latent, its splatted and
/// propagated motion fields, and its correspondence map at every level.
pub fn clip_samples(pipeline: &GuidancePipeline, clip: &SyntheticClip, dcfg: &DatasetConfig) -> Result<Vec<TrainSample>> {
    let cfg = pipeline.config();
    let traj = build_trajectory(&clip.poses, dcfg.conf_threshold)?;
    let sparse = rasterize_sparse_field(&track_matrix(&traj), &traj, cfg.image_width, cfg.image_height, dcfg.sigma)?;
    let prop = HarmonicPropagator {
        params: PropagatorParams {
            beta: dcfg.beta,
            ..PropagatorParams::default()
        },
    };
    let reference = &clip.frames[0];
    let dense = dense_field_stack(reference, &reference_displacements(&traj), &traj, &prop)?;
    let provider = DenoiserFeatureProvider {
        timestep: dcfg.feature_timestep,
        ..DenoiserFeatureProvider::new(pipeline)
    };
    let emb = extract_point_embeddings(&provider.features(reference)?, &traj)?;
    if emb.dp() != cfg.point_dim {
        return Err(Error::shape("point embeddings", &[cfg.point_dim], &[emb.dp()]));
    }
    let levels = (0..cfg.levels())
        .map(|l| {
            let (h, w) = cfg.level_dims(l);
            rescale_correspondence(&emb, &traj, h, w)
        })
        .collect::<Result<Vec<_>>>()?;
    (1..clip.frames.len())
        .map(|n| {
            Ok(TrainSample {
                z0: encode_latent(&clip.frames[n], cfg)?,
                sparse: sparse.frame(n - 1)?.clone(),
                dense: dense.frame(n - 1)?.clone(),
                points: levels
                    .iter()
                    .map(|s| correspondence_tensor(&[&s.frames[n - 1]]))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// The seeded synthetic set used for toy training.
pub fn build_dataset(pipeline: &GuidancePipeline, dcfg: &DatasetConfig) -> Result<SyntheticDataset> {
    let cfg = pipeline.config();
    let mut rng = ChaCha8Rng::seed_from_u64(dcfg.seed);
    let mut samples = Vec::new();
    for _ in 0..dcfg.clips {
        let clip = synthetic_clip(cfg.image_width, cfg.image_height, dcfg.keypoints, dcfg.frames_per_clip, &mut rng)?;
        samples.extend(clip_samples(pipeline, &clip, dcfg)?);
    }
    Ok(SyntheticDataset { samples })
}
