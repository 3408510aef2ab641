use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::graph::Graph;
use super::latent::encode_latent;
use super::pipeline::GuidancePipeline;
use super::schedule::{forward_diffuse, NoiseSchedule};
use super::tensor::Tensor;
use crate::correspondence::{FeatureMap, FeatureProvider};
use crate::motion_field::ReferenceImage;
use crate::{Error, Result};

/// Descriptors taken from the frozen denoiser's down path: the image is encoded,
/// lightly noised with seeded noise at `timestep`, and the block output of `level`
/// is returned. With `timestep = 0` the clean latent is used.
pub struct DenoiserFeatureProvider<'a> {
    pub pipeline: &'a GuidancePipeline,
    pub level: usize,
    pub timestep: usize,
    pub seed: u64,
}

impl<'a> DenoiserFeatureProvider<'a> {
    pub fn new(pipeline: &'a GuidancePipeline) -> Self {
        DenoiserFeatureProvider {
            pipeline,
            level: 0,
            timestep: 0,
            seed: 0,
        }
    }
}

impl FeatureProvider for DenoiserFeatureProvider<'_> {
    fn features(&self, image: &ReferenceImage) -> Result<FeatureMap> {
        let p = self.pipeline;
        let cfg = p.config();
        if self.level >= cfg.levels() {
            return Err(Error::Index {
                index: self.level,
                len: cfg.levels(),
            });
        }
        let z0 = encode_latent(image, cfg)?;
        let z = if self.timestep == 0 {
            z0
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            let eps = Tensor::from_vec(z0.shape(), (0..z0.len()).map(|_| StandardNormal.sample(&mut rng)).collect())?;
            forward_diffuse(&z0, self.timestep, &eps, &NoiseSchedule::default())?
        };
        let mut g = Graph::new(p.store());
        let zv = g.input(z);
        let enc = p.denoiser_encoder().forward(&mut g, zv, &[self.timestep], &[]);
        let act = g.value(enc.skips[self.level]);
        let [_, c, h, w] = act.shape();
        FeatureMap::new(c, h, w, act.data().to_vec())
    }
}
