use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{NetConfig, Variant};
use super::controlnet::HybridControlNet;
use super::denoiser::{ResidualVars, ToyDenoiser};
use super::encoders::{MotionEncoder, PointEncoder};
use super::graph::{Gradients, Graph, Var};
use super::params::{Component, ParamStore};
use super::tensor::Tensor;
use crate::correspondence::CorrespondenceFrame;
use crate::pose_io::{FlowField, MotionFieldStack};
use crate::{Error, Result};

/// One batch of guidance inputs. `points[l]` is the level-`l` correspondence map.
#[derive(Debug, Clone)]
pub struct GuidanceInputs {
    /// `B x C x h x w` noisy latent.
    pub z_t: Tensor,
    pub timesteps: Vec<usize>,
    /// `B x 2 x H x W` sparse motion field.
    pub sparse: Tensor,
    /// `B x 2 x H x W` dense motion field.
    pub dense: Tensor,
    pub points: Vec<Tensor>,
}

/// Residuals for the middle block output and each up level's input (finest first).
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResiduals {
    pub mid: Tensor,
    pub levels: Vec<Tensor>,
}

impl GuidanceResiduals {
    pub fn zeros(cfg: &NetConfig, batch: usize) -> Self {
        let (mid, levels) = injection_shapes(cfg, batch);
        GuidanceResiduals {
            mid: Tensor::zeros(mid),
            levels: levels.into_iter().map(Tensor::zeros).collect(),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.mid.max_abs() == 0.0 && self.levels.iter().all(|t| t.max_abs() == 0.0)
    }
}

fn injection_shapes(cfg: &NetConfig, batch: usize) -> ([usize; 4], Vec<[usize; 4]>) {
    let last = cfg.levels() - 1;
    let (mh, mw) = cfg.level_dims(last);
    let levels = (0..cfg.levels())
        .map(|l| {
            let (h, w) = cfg.level_dims(l);
            [batch, cfg.channels[l], h, w]
        })
        .collect();
    ([batch, cfg.channels[last], mh, mw], levels)
}

fn check_shape(site: &str, expected: [usize; 4], got: [usize; 4]) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::shape(site, &expected, &got))
    }
}

/// `B x 2 x H x W` tensor from flow fields of equal size.
pub fn flow_tensor(fields: &[&FlowField]) -> Result<Tensor> {
    let first = fields.first().ok_or_else(|| Error::Dimension("empty field batch".into()))?;
    let (w, h) = (first.width(), first.height());
    let mut data = Vec::with_capacity(fields.len() * 2 * w * h);
    for f in fields {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::shape("flow batch", &[h, w], &[f.height(), f.width()]));
        }
        data.extend_from_slice(f.as_slice());
    }
    Tensor::from_vec([fields.len(), 2, h, w], data)
}

/// `B x D_p x h x w` tensor from correspondence frames of one level.
pub fn correspondence_tensor(frames: &[&CorrespondenceFrame]) -> Result<Tensor> {
    let first = frames.first().ok_or_else(|| Error::Dimension("empty correspondence batch".into()))?;
    let (dp, h, w) = (first.dp, first.height, first.width);
    let mut data = Vec::with_capacity(frames.len() * dp * h * w);
    for f in frames {
        if (f.dp, f.height, f.width) != (dp, h, w) {
            return Err(Error::shape("correspondence batch", &[dp, h, w], &[f.dp, f.height, f.width]));
        }
        data.extend(f.to_dense());
    }
    Tensor::from_vec([frames.len(), dp, h, w], data)
}

/// Frozen toy denoiser plus the trainable motion encoder, point encoder and
/// (for wirings that have one) hybrid ControlNet, sharing one parameter store.
#[derive(Debug, Clone)]
pub struct GuidancePipeline {
    cfg: NetConfig,
    variant: Variant,
    seed: u64,
    store: ParamStore,
    denoiser: ToyDenoiser,
    motion: MotionEncoder,
    point: PointEncoder,
    controlnet: Option<HybridControlNet>,
}

impl GuidancePipeline {
    /// The base denoiser depends only on `cfg` and `seed`, so every variant built
    /// with the same pair wraps an identical frozen network.
    pub fn new(cfg: NetConfig, variant: Variant, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let denoiser = ToyDenoiser::new(&mut store, &mut rng, &cfg);
        let motion = MotionEncoder::new(&mut store, &mut rng, &cfg);
        let point = PointEncoder::new(&mut store, &mut rng, &cfg);
        let controlnet = variant
            .has_controlnet()
            .then(|| HybridControlNet::from_denoiser(&mut store, &mut rng, &denoiser, &cfg));
        Ok(GuidancePipeline {
            cfg,
            variant,
            seed,
            store,
            denoiser,
            motion,
            point,
            controlnet,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn denoiser_encoder(&self) -> &super::denoiser::UNetEncoder {
        &self.denoiser.encoder
    }

    /// Components that own parameters in this wiring.
    pub fn trainable_components(&self) -> Vec<Component> {
        Component::TRAINABLE
            .into_iter()
            .filter(|c| !self.store.ids_of(*c).is_empty())
            .collect()
    }

    /// Overwrites every all-zero trainable parameter with Gaussian noise, so that
    /// gradients reach every layer. Returns how many tensors were touched.
    pub fn randomize_zero_params(&mut self, std: f64, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, std).expect("finite std");
        let ids: Vec<_> = self
            .store
            .ids()
            .filter(|id| {
                let e = self.store.entry(*id);
                e.component.is_trainable() && e.value.max_abs() == 0.0
            })
            .collect();
        for id in &ids {
            for v in self.store.get_mut(*id).data_mut() {
                *v = dist.sample(&mut rng);
            }
        }
        ids.len()
    }

    fn check_latent(&self, z: &Tensor, timesteps: &[usize]) -> Result<()> {
        let b = z.n();
        check_shape("latent", self.cfg.latent_shape(b), z.shape())?;
        if timesteps.len() != b {
            return Err(Error::shape("timesteps", &[b], &[timesteps.len()]));
        }
        Ok(())
    }

    fn check_motion(&self, sparse: &Tensor, dense: &Tensor) -> Result<()> {
        let expect = [sparse.n(), 2, self.cfg.image_height, self.cfg.image_width];
        check_shape("sparse motion field", expect, sparse.shape())?;
        check_shape("dense motion field", expect, dense.shape())
    }

    fn check_points(&self, points: &[Tensor], batch: usize) -> Result<()> {
        if points.len() != self.cfg.levels() {
            return Err(Error::shape("correspondence levels", &[self.cfg.levels()], &[points.len()]));
        }
        for (l, p) in points.iter().enumerate() {
            self.check_point_level(p, l, Some(batch))?;
        }
        Ok(())
    }

    fn check_point_level(&self, map: &Tensor, l: usize, batch: Option<usize>) -> Result<()> {
        if l >= self.cfg.levels() {
            return Err(Error::Index {
                index: l,
                len: self.cfg.levels(),
            });
        }
        let (h, w) = self.cfg.level_dims(l);
        let b = batch.unwrap_or(map.n());
        check_shape(&format!("correspondence level {l}"), [b, self.cfg.point_dim, h, w], map.shape())
    }

    fn check_residuals(&self, r: &GuidanceResiduals, batch: usize) -> Result<()> {
        let (mid, levels) = injection_shapes(&self.cfg, batch);
        check_shape("residual at middle block", mid, r.mid.shape())?;
        if r.levels.len() != levels.len() {
            return Err(Error::shape("residual levels", &[levels.len()], &[r.levels.len()]));
        }
        for (l, (e, t)) in levels.iter().zip(&r.levels).enumerate() {
            check_shape(&format!("residual at up level {l}"), *e, t.shape())?;
        }
        Ok(())
    }

    fn validate_inputs(&self, inp: &GuidanceInputs) -> Result<()> {
        self.check_latent(&inp.z_t, &inp.timesteps)?;
        let b = inp.z_t.n();
        self.check_motion(&inp.sparse, &inp.dense)?;
        if inp.sparse.n() != b {
            return Err(Error::shape("motion batch", &[b], &[inp.sparse.n()]));
        }
        self.check_points(&inp.points, b)
    }

    /// Latent-shaped motion guidance, one item per frame; exactly zero at initialisation.
    pub fn motion_encode(&self, sparse: &MotionFieldStack, dense: &MotionFieldStack) -> Result<Tensor> {
        if sparse.shape() != dense.shape() {
            return Err(Error::shape("motion stacks", &sparse.shape(), &dense.shape()));
        }
        let s = flow_tensor(&sparse.frames().iter().collect::<Vec<_>>())?;
        let d = flow_tensor(&dense.frames().iter().collect::<Vec<_>>())?;
        self.motion_encode_tensor(&s, &d)
    }

    pub fn motion_encode_tensor(&self, sparse: &Tensor, dense: &Tensor) -> Result<Tensor> {
        self.check_motion(sparse, dense)?;
        let mut g = Graph::new(&self.store);
        let (s, d) = (g.input(sparse.clone()), g.input(dense.clone()));
        let out = self.motion.forward(&mut g, s, d);
        Ok(g.value(out).clone())
    }

    /// Per-pixel point encoding of one correspondence level.
    pub fn point_encode_level(&self, map: &Tensor, level: usize) -> Result<Tensor> {
        self.check_point_level(map, level, None)?;
        let mut g = Graph::new(&self.store);
        let x = g.input(map.clone());
        let out = self.point.forward(&mut g, x, level);
        Ok(g.value(out).clone())
    }

    fn point_vars(&self, g: &mut Graph, points: &[Tensor]) -> Vec<Option<Var>> {
        points
            .iter()
            .enumerate()
            .map(|(l, p)| {
                let x = g.input(p.clone());
                Some(self.point.forward(g, x, l))
            })
            .collect()
    }

    fn controlnet(&self) -> Result<&HybridControlNet> {
        self.controlnet
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no ControlNet", self.variant)))
    }

    /// Residuals from the ControlNet fed `z_t + f_m`, with encoded point features
    /// added inside its encoder levels.
    pub fn controlnet_forward(
        &self,
        z_t: &Tensor,
        f_m: &Tensor,
        points: &[Tensor],
        timesteps: &[usize],
    ) -> Result<GuidanceResiduals> {
        let cn = self.controlnet()?;
        self.check_latent(z_t, timesteps)?;
        check_shape("motion guidance", z_t.shape(), f_m.shape())?;
        self.check_points(points, z_t.n())?;
        let mut g = Graph::new(&self.store);
        let z = g.input(z_t.clone());
        let m = g.input(f_m.clone());
        let x = g.add(z, m);
        let adds = self.point_vars(&mut g, points);
        let r = cn.forward(&mut g, x, timesteps, &adds);
        Ok(GuidanceResiduals {
            mid: g.value(r.mid).clone(),
            levels: r.levels.iter().map(|v| g.value(*v).clone()).collect(),
        })
    }

    /// Base denoiser with `r` added at the middle block and each up level.
    pub fn denoise_with_guidance(&self, z_t: &Tensor, timesteps: &[usize], r: &GuidanceResiduals) -> Result<Tensor> {
        self.check_latent(z_t, timesteps)?;
        self.check_residuals(r, z_t.n())?;
        let mut g = Graph::new(&self.store);
        let z = g.input(z_t.clone());
        let rv = ResidualVars {
            mid: g.input(r.mid.clone()),
            levels: r.levels.iter().map(|t| g.input(t.clone())).collect(),
        };
        let (out, _) = self.denoiser.forward(&mut g, z, timesteps, &[], Some(&rv));
        Ok(g.value(out).clone())
    }

    /// The frozen denoiser alone; no guidance operations on the path.
    pub fn unguided(&self, z_t: &Tensor, timesteps: &[usize]) -> Result<Tensor> {
        self.check_latent(z_t, timesteps)?;
        let mut g = Graph::new(&self.store);
        let z = g.input(z_t.clone());
        let (out, _) = self.denoiser.forward(&mut g, z, timesteps, &[], None);
        Ok(g.value(out).clone())
    }

    fn build(&self, g: &mut Graph, inp: &GuidanceInputs) -> Var {
        let z = g.input(inp.z_t.clone());
        let s = g.input(inp.sparse.clone());
        let d = g.input(inp.dense.clone());
        let f_m = self.motion.forward(g, s, d);
        let f_c = self.point_vars(g, &inp.points);
        let t = &inp.timesteps;
        match (self.variant, &self.controlnet) {
            (Variant::Full, Some(cn)) => {
                let x = g.add(z, f_m);
                let r = cn.forward(g, x, t, &f_c);
                self.denoiser.forward(g, z, t, &[], Some(&r)).0
            }
            (Variant::Exp1, Some(cn)) => {
                let r = cn.forward(g, z, t, &f_c);
                let x = g.add(z, f_m);
                self.denoiser.forward(g, x, t, &[], Some(&r)).0
            }
            _ => {
                let x = g.add(z, f_m);
                self.denoiser.forward(g, x, t, &f_c, None).0
            }
        }
    }

    /// Noise prediction under this pipeline's wiring.
    pub fn predict(&self, inp: &GuidanceInputs) -> Result<Tensor> {
        self.validate_inputs(inp)?;
        let mut g = Graph::new(&self.store);
        let out = self.build(&mut g, inp);
        Ok(g.value(out).clone())
    }

    /// Mean squared error between the prediction and `eps`.
    pub fn loss(&self, inp: &GuidanceInputs, eps: &Tensor) -> Result<f64> {
        self.loss_inner(inp, eps, false).map(|(l, _)| l)
    }

    pub fn loss_and_grads(&self, inp: &GuidanceInputs, eps: &Tensor) -> Result<(f64, Gradients)> {
        self.loss_inner(inp, eps, true)
            .map(|(l, g)| (l, g.expect("gradients requested")))
    }

    fn loss_inner(&self, inp: &GuidanceInputs, eps: &Tensor, grads: bool) -> Result<(f64, Option<Gradients>)> {
        self.validate_inputs(inp)?;
        check_shape("noise target", inp.z_t.shape(), eps.shape())?;
        let mut g = Graph::new(&self.store);
        let out = self.build(&mut g, inp);
        let target = g.input(eps.clone());
        let loss = g.mse(out, target);
        let value = g.value(loss).data()[0];
        Ok((value, grads.then(|| g.backward(loss))))
    }
}
